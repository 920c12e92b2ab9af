#include "steerlab/alpha_analysis.hpp"

#include <algorithm>
#include <cmath>

namespace steerlab {

namespace {

void require_token(const DatasetSpec& ds, int token) {
    if (token < 0 || token >= ds.partition.vocab_size)
        throw std::out_of_range("token index " + std::to_string(token) + " out of range");
}

void require_concept(const DatasetSpec& ds, int concept_index) {
    if (concept_index < 0 || concept_index >= ds.partition.group_count)
        throw std::out_of_range("concept index " + std::to_string(concept_index) + " out of range");
}

double tilted_mass(const std::vector<double>& probs, const ConceptPartition& partition, int concept_index) {
    double mass = 0.0;
    for (int z = partition.first_token(concept_index); z < partition.first_token(concept_index) + partition.concept_size; ++z)
        mass += probs[static_cast<std::size_t>(z)];
    return mass;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

double delta_p(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index, int token,
               double alpha) {
    require_token(ds, token);
    const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, alpha);
    const std::vector<double> base = next_token_distribution(ds, context_index);
    return steered[static_cast<std::size_t>(token)] - base[static_cast<std::size_t>(token)];
}

double expected_log_odds(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                         double alpha) {
    const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, alpha);
    double mean = 0.0;
    for (std::size_t z = 0; z < steered.size(); ++z) mean += steered[z] * profile.values[z];
    return mean;
}

double expected_log_odds_derivative(const DatasetSpec& ds, const LogOddsProfile& profile,
                                    int context_index, double alpha) {
    const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, alpha);
    double mean = 0.0;
    for (std::size_t z = 0; z < steered.size(); ++z) mean += steered[z] * profile.values[z];
    double var = 0.0;
    for (std::size_t z = 0; z < steered.size(); ++z) {
        const double c = profile.values[z] - mean;
        var += steered[z] * c * c;
    }
    return var;
}

double delta_p_derivative(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                          int token, double alpha) {
    require_token(ds, token);
    const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, alpha);
    double mean = 0.0;
    for (std::size_t z = 0; z < steered.size(); ++z) mean += steered[z] * profile.values[z];
    return steered[static_cast<std::size_t>(token)] * (profile.values[static_cast<std::size_t>(token)] - mean);
}

PeakPoint peak_alpha(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                     int token, const PeakOptions& options) {
    require_token(ds, token);
    PeakPoint result;
    if (profile.attains_max(token)) {
        result.kind = PeakPoint::Kind::plus_infinite;
        return result;
    }
    if (profile.attains_min(token)) {
        result.kind = PeakPoint::Kind::minus_infinite;
        return result;
    }
    const double target = profile.values[static_cast<std::size_t>(token)];
    auto residual_at = [&](double alpha) {
        return expected_log_odds(ds, profile, context_index, alpha) - target;
    };

    double lo = options.bracket_lo;
    double hi = options.bracket_hi;
    while (residual_at(lo) > 0.0 || residual_at(hi) < 0.0) {
        lo *= 2.0;
        hi *= 2.0;
        if (std::abs(lo) > options.expansion_cap || std::abs(hi) > options.expansion_cap)
            throw std::runtime_error(
                "peak_alpha: bracket expansion cap exceeded; M(z) is within tolerance of an extreme "
                "log-odds value (token " + std::to_string(token) + ")");
    }
    result.bracket_lo = lo;
    result.bracket_hi = hi;

    double mid = 0.5 * (lo + hi);
    double res = residual_at(mid);
    for (int it = 0; it < options.max_iterations && std::abs(res) > options.tolerance; ++it) {
        if (res > 0.0)
            hi = mid;
        else
            lo = mid;
        const double next = 0.5 * (lo + hi);
        if (next == mid) break;  // interval exhausted at double precision
        mid = next;
        res = residual_at(mid);
    }
    result.kind = PeakPoint::Kind::finite;
    result.alpha = mid;
    result.residual = std::abs(res);
    return result;
}

std::vector<PeakTableEntry> build_peak_table(const DatasetSpec& ds, const LogOddsProfile& profile,
                                             const PeakOptions& options) {
    std::vector<PeakTableEntry> table;
    table.reserve(static_cast<std::size_t>(ds.num_contexts()) * ds.partition.vocab_size);
    for (int j = 0; j < ds.num_contexts(); ++j)
        for (int z = 0; z < ds.partition.vocab_size; ++z)
            table.push_back({j, z, peak_alpha(ds, profile, j, z, options)});
    return table;
}

double concept_increase(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                        int concept_index, double alpha) {
    require_concept(ds, concept_index);
    const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, alpha);
    const std::vector<double> base = next_token_distribution(ds, context_index);
    double acc = 0.0;
    const int begin = ds.partition.first_token(concept_index);
    for (int z = begin; z < begin + ds.partition.concept_size; ++z)
        acc += steered[static_cast<std::size_t>(z)] - base[static_cast<std::size_t>(z)];
    return acc / static_cast<double>(ds.partition.concept_size);
}

TanhParts tanh_decomposition(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                             int concept_index, double alpha, int quadrature_points) {
    require_concept(ds, concept_index);
    if (quadrature_points < 64)
        throw std::invalid_argument("tanh_decomposition: at least 64 quadrature points required");

    const auto mass_at = [&](double t) {
        return tilted_mass(steered_probs_closed_form(ds, profile, context_index, t), ds.partition, concept_index);
    };
    const double mass0 = mass_at(0.0);
    if (mass0 <= 0.0 || mass0 >= 1.0)
        throw std::domain_error("tanh_decomposition: concept mass at alpha=0 is degenerate (" +
                                std::to_string(mass0) + ")");

    TanhParts parts;
    parts.intercept = std::log(mass0 / (1.0 - mass0));

    // Conditional-mean gap, the integrand of nu.
    const auto gap_at = [&](double t) {
        const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, t);
        double mass = 0.0;
        double inside = 0.0;
        double total = 0.0;
        const int begin = ds.partition.first_token(concept_index);
        const int end = begin + ds.partition.concept_size;
        for (int z = 0; z < ds.partition.vocab_size; ++z) {
            const double w = steered[static_cast<std::size_t>(z)] * profile.values[static_cast<std::size_t>(z)];
            total += w;
            if (z >= begin && z < end) {
                inside += w;
                mass += steered[static_cast<std::size_t>(z)];
            }
        }
        return inside / mass - (total - inside) / (1.0 - mass);
    };

    if (alpha != 0.0) {
        // Composite Simpson over [0, alpha] with an even interval count.
        int n = quadrature_points;
        if (n % 2 != 0) ++n;
        const double h = alpha / static_cast<double>(n);
        double acc = gap_at(0.0) + gap_at(alpha);
        for (int i = 1; i < n; ++i) acc += (i % 2 == 1 ? 4.0 : 2.0) * gap_at(h * static_cast<double>(i));
        parts.drift = acc * h / 3.0;
    }

    parts.reconstruction_error = std::abs(sigmoid(parts.drift + parts.intercept) - mass_at(alpha));
    return parts;
}

double delta_ce(const DatasetSpec& ds, const UfmParams& params, std::span<const double> direction,
                double alpha) {
    std::vector<std::vector<double>> steered_cols;
    std::vector<std::vector<double>> base_cols;
    steered_cols.reserve(static_cast<std::size_t>(ds.num_contexts()));
    base_cols.reserve(static_cast<std::size_t>(ds.num_contexts()));
    for (int j = 0; j < ds.num_contexts(); ++j) {
        steered_cols.push_back(steered_logits(params, direction, j, alpha));
        base_cols.push_back(logits(params, j));
    }
    return cross_entropy_of_logits(steered_cols, ds) - cross_entropy_of_logits(base_cols, ds);
}

double ce_quadratic_coefficient(const DatasetSpec& ds, const LogOddsProfile& profile) {
    double acc = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        const std::vector<double> p = next_token_distribution(ds, j);
        double mean = 0.0;
        for (std::size_t z = 0; z < p.size(); ++z) mean += p[z] * profile.values[z];
        double var = 0.0;
        for (std::size_t z = 0; z < p.size(); ++z) {
            const double c = profile.values[z] - mean;
            var += p[z] * c * c;
        }
        acc += ds.context_weights[static_cast<std::size_t>(j)] * var;
    }
    return 0.5 * acc;
}

double delta_p_limit(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                     int token, int sign) {
    if (sign != 1 && sign != -1) throw std::invalid_argument("delta_p_limit: sign must be +1 or -1");
    require_token(ds, token);
    const std::vector<double> p = next_token_distribution(ds, context_index);
    const std::vector<int>& extreme = sign > 0 ? profile.argmax_set : profile.argmin_set;
    double extreme_mass = 0.0;
    for (int z : extreme) extreme_mass += p[static_cast<std::size_t>(z)];
    const bool member = sign > 0 ? profile.attains_max(token) : profile.attains_min(token);
    const double pz = p[static_cast<std::size_t>(token)];
    return (member ? pz / extreme_mass : 0.0) - pz;
}

std::vector<double> logsym_alpha_grid(double lo_magnitude, double hi_magnitude, int per_side) {
    if (!(lo_magnitude > 0.0 && hi_magnitude > lo_magnitude))
        throw std::invalid_argument("logsym_alpha_grid: need 0 < lo < hi");
    if (per_side < 1) throw std::invalid_argument("logsym_alpha_grid: per_side must be at least 1");
    std::vector<double> mags(static_cast<std::size_t>(per_side));
    const double log_lo = std::log(lo_magnitude);
    const double log_hi = std::log(hi_magnitude);
    for (int i = 0; i < per_side; ++i) {
        const double t = per_side == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(per_side - 1);
        mags[static_cast<std::size_t>(i)] = std::exp(log_lo + t * (log_hi - log_lo));
    }
    mags.front() = lo_magnitude;  // keep the endpoints exact
    mags.back() = hi_magnitude;
    std::vector<double> grid;
    grid.reserve(2 * static_cast<std::size_t>(per_side) + 1);
    for (int i = per_side - 1; i >= 0; --i) grid.push_back(-mags[static_cast<std::size_t>(i)]);
    grid.push_back(0.0);
    for (int i = 0; i < per_side; ++i) grid.push_back(mags[static_cast<std::size_t>(i)]);
    return grid;
}

std::vector<double> linear_alpha_grid(double lo, double hi, int count) {
    if (count < 2) throw std::invalid_argument("linear_alpha_grid: need at least 2 points");
    std::vector<double> grid(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        grid[static_cast<std::size_t>(i)] =
            lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    return grid;
}

QuadraticFit fit_quadratic(std::span<const double> alphas, std::span<const double> values) {
    if (alphas.size() != values.size() || alphas.size() < 3)
        throw std::invalid_argument("fit_quadratic: need matching inputs with at least 3 points");
    // Normal equations for the basis {1, alpha, alpha^2}.
    double s[5] = {0, 0, 0, 0, 0};
    double t[3] = {0, 0, 0};
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const double a = alphas[i];
        double pw = 1.0;
        for (int k = 0; k < 5; ++k) {
            s[k] += pw;
            if (k < 3) t[k] += pw * values[i];
            pw *= a;
        }
    }
    double m[3][4] = {{s[0], s[1], s[2], t[0]}, {s[1], s[2], s[3], t[1]}, {s[2], s[3], s[4], t[2]}};
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        std::swap(m[col], m[pivot]);
        if (m[col][col] == 0.0) throw std::runtime_error("fit_quadratic: singular normal equations");
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
        }
    }
    return {m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]};
}

SweepResult run_sweep(const DatasetSpec& ds, const UfmParams& params, const SteeringSpec& steering,
                      const LogOddsProfile& profile, std::span<const double> alpha_grid,
                      int context_index) {
    SweepResult result;
    result.alpha_grid.assign(alpha_grid.begin(), alpha_grid.end());
    result.context_index = context_index;
    result.dataset_hash = fnv1a_hash(dataset_to_json(ds).dump());
    result.steering_hash = fnv1a_hash(steering_to_json(steering).dump());

    const int rows = static_cast<int>(alpha_grid.size());
    const int v = ds.partition.vocab_size;
    const int g = ds.partition.group_count;
    result.per_token_delta = Matrix(rows, v);
    result.per_concept_delta = Matrix(rows, g);
    result.delta_ce_curve.resize(static_cast<std::size_t>(rows));

    const std::vector<double> base = next_token_distribution(ds, context_index);
    for (int r = 0; r < rows; ++r) {
        const double alpha = alpha_grid[static_cast<std::size_t>(r)];
        const std::vector<double> steered = steered_probs_closed_form(ds, profile, context_index, alpha);
        for (int z = 0; z < v; ++z)
            result.per_token_delta(r, z) = steered[static_cast<std::size_t>(z)] - base[static_cast<std::size_t>(z)];
        for (int k = 0; k < g; ++k) {
            double acc = 0.0;
            for (int z = ds.partition.first_token(k); z < ds.partition.first_token(k) + ds.partition.concept_size; ++z)
                acc += result.per_token_delta(r, z);
            result.per_concept_delta(r, k) = acc / static_cast<double>(ds.partition.concept_size);
        }
        result.delta_ce_curve[static_cast<std::size_t>(r)] = delta_ce(ds, params, steering.direction, alpha);
    }
    return result;
}

}  // namespace steerlab
