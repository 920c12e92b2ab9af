#include "steerlab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "steerlab/alpha_analysis.hpp"
#include "steerlab/sweep_runner.hpp"

namespace steerlab {

namespace {

struct Checker {
    std::vector<CheckResult> results;

    void add(const std::string& name, bool passed, double measured, double threshold,
             const std::string& note = "") {
        results.push_back({name, passed, measured, threshold, note});
    }
    // passes when measured < threshold
    void below(const std::string& name, double measured, double threshold, const std::string& note = "") {
        add(name, measured < threshold, measured, threshold, note);
    }
    void skip(const std::string& name, const std::string& why) { add(name, true, 0.0, 0.0, "skipped: " + why); }
};

double central_difference(const std::function<double(double)>& f, double x, double step) {
    return (f(x + step) - f(x - step)) / (2.0 * step);
}

double relative_gap(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / scale;
}

// Triangular in-concept weights: gamma_i proportional to s-i inside each
// block, omega uniform. Gives distinct target log-odds so finite target
// peaks exist.
DatasetSpec weighted_sibling(const DatasetConfig& base, double epsilon) {
    DatasetConfig cfg = base;
    cfg.epsilon = epsilon;
    const int v = cfg.vocab_size;
    const int s = v / cfg.group_count;
    cfg.gamma.assign(static_cast<std::size_t>(v), 0.0);
    cfg.omega.assign(static_cast<std::size_t>(v), 1.0 / static_cast<double>(s));
    const double triangle = static_cast<double>(s) * (s + 1) / 2.0;
    for (int z = 0; z < v; ++z)
        cfg.gamma[static_cast<std::size_t>(z)] = static_cast<double>(s - z % s) / triangle;
    return build_dataset(cfg);
}

UfmParams random_params(int vocab, int dim, int contexts, std::uint64_t seed, double scale) {
    UfmParams params;
    params.vocab_size = vocab;
    params.dim = dim;
    params.num_contexts = contexts;
    params.decoder = Matrix(vocab, dim);
    params.embeddings = Matrix(dim, contexts);
    std::mt19937_64 rng(seed);
    for (double& w : params.decoder.data) w = scale * gaussian(rng);
    for (double& h : params.embeddings.data) h = scale * gaussian(rng);
    return params;
}

struct BumpShape {
    bool valid = false;       // +...+ then -...- with one flip
    double last_positive = 0; // alpha just before the flip
    double first_negative = 0;
    std::string why;
};

BumpShape analyze_bump(std::span<const double> grid, std::span<const double> derivative) {
    double scale = 0.0;
    for (double d : derivative) scale = std::max(scale, std::abs(d));
    const double tol = scale * 1e-13;
    BumpShape shape;
    int flips = 0;
    int prev_sign = 0;
    for (std::size_t i = 0; i < derivative.size(); ++i) {
        const int sign = derivative[i] > tol ? 1 : derivative[i] < -tol ? -1 : 0;
        if (sign == 0) continue;
        if (prev_sign == 0) {
            if (sign != 1) {
                shape.why = "derivative starts negative";
                return shape;
            }
        } else if (sign != prev_sign) {
            ++flips;
            if (sign != -1) {
                shape.why = "derivative flips back to positive";
                return shape;
            }
            shape.first_negative = grid[i];
        }
        if (sign == 1) shape.last_positive = grid[i];
        prev_sign = sign;
    }
    if (flips != 1) {
        shape.why = "expected exactly one sign change, saw " + std::to_string(flips);
        return shape;
    }
    shape.valid = true;
    return shape;
}

// Increments saturate below double resolution far from the origin (the
// tilt decays like exp(-spread * |alpha|)), so exact ties are legitimate
// out there. Strictness is demanded only on |alpha| <= strict_limit,
// where increments are many orders above rounding noise; elsewhere the
// curve must not decrease beyond ulp-level jitter.
struct MonotoneReport {
    double max_decrease = 0.0;
    bool strict_ok = true;
};

MonotoneReport increasing_report(std::span<const double> grid, std::span<const double> values,
                                 double strict_limit) {
    MonotoneReport report;
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        const double step = values[i + 1] - values[i];
        report.max_decrease = std::max(report.max_decrease, -step);
        const bool strict_zone =
            std::abs(grid[i]) <= strict_limit && std::abs(grid[i + 1]) <= strict_limit;
        if (strict_zone && !(step > 0.0)) report.strict_ok = false;
    }
    return report;
}

struct PeakSplit {
    std::vector<double> finite_target;
    std::vector<double> finite_off_target;
    double max_residual = 0.0;
};

PeakSplit split_peaks(const DatasetSpec& ds, const LogOddsProfile& profile, int target, int j) {
    PeakSplit split;
    for (int z = 0; z < ds.partition.vocab_size; ++z) {
        if (profile.attains_max(z) || profile.attains_min(z)) continue;
        const PeakPoint peak = peak_alpha(ds, profile, j, z);
        split.max_residual = std::max(split.max_residual, peak.residual);
        if (ds.partition.concept_of(z) == target)
            split.finite_target.push_back(peak.alpha);
        else
            split.finite_off_target.push_back(peak.alpha);
    }
    return split;
}

void check_dataset_invariants(Checker& check, const DatasetSpec& ds) {
    double norm_err = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        const std::vector<double> p = next_token_distribution(ds, j);
        double total = 0.0;
        for (double v : p) total += v;
        norm_err = std::max(norm_err, std::abs(total - 1.0));
    }
    check.below("dataset.distribution_normalization", norm_err, 1e-12);

    if (ds.partition.group_count > 1) {
        double min_margin = std::numeric_limits<double>::infinity();
        for (int z = 0; z < ds.partition.vocab_size; ++z)
            min_margin = std::min(min_margin, ds.in_concept_prob[static_cast<std::size_t>(z)] -
                                                  ds.off_concept_prob[static_cast<std::size_t>(z)]);
        check.add("dataset.in_gt_off", min_margin > 0.0, min_margin, 0.0, "margin must stay positive");
    } else {
        check.skip("dataset.in_gt_off", "single-concept dataset has no off-concept tokens");
    }

    int mismatches = 0;
    for (int j = 0; j < ds.num_contexts(); ++j)
        for (int k = j + 1; k < ds.num_contexts(); ++k)
            if (ds.contexts[static_cast<std::size_t>(j)].concept_label ==
                    ds.contexts[static_cast<std::size_t>(k)].concept_label &&
                next_token_distribution(ds, j) != next_token_distribution(ds, k))
                ++mismatches;
    check.add("dataset.concept_determines_distribution", mismatches == 0,
              static_cast<double>(mismatches), 0.0, "bitwise-equal distributions per concept");

    const double entropy = dataset_entropy(ds);
    double min_gap = std::numeric_limits<double>::infinity();
    min_gap = std::min(min_gap, cross_entropy(analytic_perfect_fit(ds), ds) - entropy);
    for (std::uint64_t seed = 11; seed < 14; ++seed) {
        const UfmParams rp = random_params(ds.partition.vocab_size, 5, ds.num_contexts(), seed, 0.8);
        min_gap = std::min(min_gap, cross_entropy(rp, ds) - entropy);
    }
    check.add("dataset.entropy_lower_bounds_ce", min_gap > -1e-10, min_gap, -1e-10,
              "cross-entropy never beats the entropy");
}

void check_ufm_invariants(Checker& check, const BuiltInstance& inst) {
    const DatasetSpec& ds = inst.ds;
    double fit_err = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        const std::vector<double> sigma = softmax(logits(inst.params, j));
        const std::vector<double> p = next_token_distribution(ds, j);
        for (int z = 0; z < ds.partition.vocab_size; ++z)
            fit_err = std::max(fit_err, std::abs(sigma[static_cast<std::size_t>(z)] -
                                                 p[static_cast<std::size_t>(z)]));
    }
    check.below("ufm.perfect_fit_exactness", fit_err, 1e-12);

    const double entropy = dataset_entropy(ds);
    check.below("ufm.gibbs_equality_at_fit", std::abs(cross_entropy(inst.params, ds) - entropy), 1e-10);

    // analytic embedding gradient vs central differences on a random model
    const UfmParams rp = random_params(ds.partition.vocab_size, 4, ds.num_contexts(), 77, 0.6);
    double grad_err = 0.0;
    for (int j : {0, ds.num_contexts() - 1}) {
        const std::vector<double> grad = ce_embedding_gradient(rp, ds, j);
        for (int c = 0; c < rp.dim; ++c) {
            auto ce_at = [&](double x) {
                UfmParams moved = rp;
                moved.embeddings(c, j) = x;
                return cross_entropy(moved, ds);
            };
            const double fd = central_difference(ce_at, rp.embeddings(c, j), 1e-5);
            grad_err = std::max(grad_err, relative_gap(fd, grad[static_cast<std::size_t>(c)]));
        }
    }
    check.below("ufm.embedding_gradient_fd", grad_err, 1e-5);

    // shifting one logits column by a constant leaves CE unchanged
    std::vector<std::vector<double>> cols;
    for (int j = 0; j < ds.num_contexts(); ++j) cols.push_back(logits(inst.params, j));
    const double base_ce = cross_entropy_of_logits(cols, ds);
    for (double& v : cols[0]) v += 3.75;
    check.below("ufm.ce_shift_invariance", std::abs(cross_entropy_of_logits(cols, ds) - base_ce), 1e-12);
}

void check_steering_invariants(Checker& check, const BuiltInstance& inst) {
    const DatasetSpec& ds = inst.ds;

    // linear identity of the steered logits on random decoders
    double identity_err = 0.0;
    const UfmParams rp = random_params(ds.partition.vocab_size, 6, ds.num_contexts(), 5150, 0.9);
    const std::vector<double> rv = steering_vector(rp, inst.steering.sets);
    const double inv_q = 1.0 / inst.steering.sets.pair_count();
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 8; ++trial) {
        const int j = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(ds.num_contexts())));
        const double alpha = 10.0 * (uniform_unit(rng) - 0.5);
        const std::vector<double> lhs = steered_logits(rp, rv, j, alpha);
        std::vector<double> rhs = logits(rp, j);
        for (int i : inst.steering.sets.positive) {
            const std::vector<double> li = logits(rp, i);
            for (std::size_t z = 0; z < rhs.size(); ++z) rhs[z] += alpha * inv_q * li[z];
        }
        for (int i : inst.steering.sets.negative) {
            const std::vector<double> li = logits(rp, i);
            for (std::size_t z = 0; z < rhs.size(); ++z) rhs[z] -= alpha * inv_q * li[z];
        }
        for (std::size_t z = 0; z < rhs.size(); ++z) identity_err = std::max(identity_err, std::abs(lhs[z] - rhs[z]));
    }
    check.below("steering.linear_identity", identity_err, 1e-10);

    // sign separation across modes and instances
    double sign_violation = -std::numeric_limits<double>::infinity();
    const auto probe_signs = [&](const DatasetSpec& probe_ds, int target, NegativeMode mode,
                                 std::uint64_t seed) {
        const int per_concept =
            static_cast<int>(probe_ds.contexts.size()) / probe_ds.partition.group_count;
        const int q = std::min(2, per_concept);
        const IndexSets sets = build_index_sets(probe_ds, target, mode, q, seed);
        const LogOddsProfile profile = log_odds(probe_ds, sets);
        for (int z = 0; z < probe_ds.partition.vocab_size; ++z) {
            const double m = profile.values[static_cast<std::size_t>(z)];
            if (probe_ds.partition.concept_of(z) == target)
                sign_violation = std::max(sign_violation, 1e-12 - m);  // want M > 0
            else
                sign_violation = std::max(sign_violation, m - 1e-12);  // want M <= 0
        }
    };
    probe_signs(ds, inst.steering.target_concept, NegativeMode::contrastive, 21);
    probe_signs(ds, inst.steering.target_concept, NegativeMode::random_sample, 22);
    if (ds.partition.group_count > 2)
        probe_signs(ds, (inst.steering.target_concept + 2) % ds.partition.group_count,
                    NegativeMode::random_sample, 23);
    check.add("steering.sign_separation", sign_violation < 0.0, sign_violation, 0.0,
              "M > 0 exactly on the target concept");

    // tilted closed form against the softmax of steered logits (perfect fit)
    double path_gap = 0.0;
    double norm_gap = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        for (int ia = -50; ia <= 50; ++ia) {
            const double alpha = static_cast<double>(ia);
            const std::vector<double> closed = steered_probs_closed_form(ds, inst.profile, j, alpha);
            const std::vector<double> via_model =
                softmax(steered_logits(inst.params, inst.steering.direction, j, alpha));
            double total = 0.0;
            for (std::size_t z = 0; z < closed.size(); ++z) {
                path_gap = std::max(path_gap, std::abs(closed[z] - via_model[z]));
                if (closed[z] < 0.0) norm_gap = std::max(norm_gap, -closed[z]);
                total += closed[z];
            }
            norm_gap = std::max(norm_gap, std::abs(total - 1.0));
        }
    }
    check.below("steering.closed_form_equals_model_path", path_gap, 1e-10);
    check.below("steering.tilted_probs_normalized", norm_gap, 1e-12);
}

void check_alpha_invariants(Checker& check, const BuiltInstance& inst, const RunConfig& config) {
    const std::vector<double> grid = logsym_alpha_grid(1e-3, 1e2, 200);

    const auto bump_suite = [&](const BuiltInstance& probe, const std::string& label) {
        const DatasetSpec& ds = probe.ds;
        const LogOddsProfile& profile = probe.profile;
        const int v = ds.partition.vocab_size;

        bool bumps_ok = true;
        std::string bump_note;
        double residual_worst = 0.0;
        double monotone_decrease = 0.0;
        bool monotone_strict = true;
        bool ordering_ok = true;

        for (int j = 0; j < ds.num_contexts(); ++j) {
            Matrix delta(static_cast<int>(grid.size()), v);
            Matrix derivative(static_cast<int>(grid.size()), v);
            const std::vector<double> base = next_token_distribution(ds, j);
            for (std::size_t i = 0; i < grid.size(); ++i) {
                const std::vector<double> probs = steered_probs_closed_form(ds, profile, j, grid[i]);
                double mean = 0.0;
                for (int z = 0; z < v; ++z) mean += probs[static_cast<std::size_t>(z)] * profile.values[static_cast<std::size_t>(z)];
                for (int z = 0; z < v; ++z) {
                    delta(static_cast<int>(i), z) = probs[static_cast<std::size_t>(z)] - base[static_cast<std::size_t>(z)];
                    derivative(static_cast<int>(i), z) =
                        probs[static_cast<std::size_t>(z)] * (profile.values[static_cast<std::size_t>(z)] - mean);
                }
            }
            for (int z = 0; z < v; ++z) {
                const std::vector<double> dcol = derivative.column(z);
                const std::vector<double> vcol = delta.column(z);
                if (profile.attains_max(z) || profile.attains_min(z)) {
                    std::vector<double> oriented(vcol);
                    if (profile.attains_min(z))
                        for (double& x : oriented) x = -x;
                    const MonotoneReport report = increasing_report(grid, oriented, 1.0);
                    monotone_decrease = std::max(monotone_decrease, report.max_decrease);
                    monotone_strict = monotone_strict && report.strict_ok;
                    continue;
                }
                const BumpShape shape = analyze_bump(grid, dcol);
                const PeakPoint peak = peak_alpha(ds, profile, j, z);
                residual_worst = std::max(residual_worst, peak.residual);
                if (!shape.valid || !peak.finite() || peak.alpha < shape.last_positive ||
                    peak.alpha > shape.first_negative) {
                    bumps_ok = false;
                    if (bump_note.empty())
                        bump_note = "context " + std::to_string(j) + ", token " + std::to_string(z) +
                                    (shape.valid ? ": peak outside grid bracket" : ": " + shape.why);
                }
            }
            const PeakSplit peaks = split_peaks(ds, profile, probe.steering.target_concept, j);
            if (!peaks.finite_target.empty() && !peaks.finite_off_target.empty()) {
                const double max_off =
                    *std::max_element(peaks.finite_off_target.begin(), peaks.finite_off_target.end());
                const double min_target =
                    *std::min_element(peaks.finite_target.begin(), peaks.finite_target.end());
                if (!(max_off < min_target)) ordering_ok = false;
            }
        }
        check.add("alpha.bump_single_sign_change[" + label + "]", bumps_ok, 0.0, 0.0, bump_note);
        check.below("alpha.peak_bisection_residual[" + label + "]", residual_worst, 1e-9);
        check.add("alpha.monotone_extremes[" + label + "]",
                  monotone_strict && monotone_decrease <= 1e-15, monotone_decrease, 1e-15,
                  "strict on |alpha| <= 1, non-decreasing elsewhere");
        check.add("alpha.peak_ordering[" + label + "]", ordering_ok, ordering_ok ? 0.0 : 1.0, 0.0,
                  "off-target peaks precede target peaks");
    };

    bump_suite(inst, "configured");
    if (inst.ds.partition.group_count >= 2 && inst.ds.partition.concept_size >= 2) {
        try {
            BuiltInstance sibling = build_instance(config, weighted_sibling(config.dataset, 0.1));
            bump_suite(sibling, "weighted");
        } catch (const std::exception& e) {
            check.add("alpha.peak_ordering[weighted]", false, 1.0, 0.0,
                      std::string("weighted sibling unavailable: ") + e.what());
        }
    } else {
        check.skip("alpha.peak_ordering[weighted]", "needs at least two tokens per concept");
    }

    // positive peaks at small smoothing on the weighted dataset
    if (inst.ds.partition.group_count >= 2 && inst.ds.partition.concept_size >= 2) {
        double min_peak = std::numeric_limits<double>::infinity();
        bool built = true;
        try {
            for (double eps : {0.01, 0.05, 0.1}) {
                BuiltInstance probe = build_instance(config, weighted_sibling(config.dataset, eps));
                for (int j = 0; j < probe.ds.num_contexts(); ++j) {
                    if (probe.ds.contexts[static_cast<std::size_t>(j)].concept_label ==
                        probe.steering.target_concept)
                        continue;
                    const PeakSplit peaks = split_peaks(probe.ds, probe.profile,
                                                        probe.steering.target_concept, j);
                    for (double a : peaks.finite_target) min_peak = std::min(min_peak, a);
                }
            }
        } catch (const std::exception&) {
            built = false;
        }
        check.add("alpha.small_eps_target_peaks_positive", built && min_peak > 0.0, min_peak, 0.0,
                  "smallest finite target peak across eps in {0.01,0.05,0.1}");
    } else {
        check.skip("alpha.small_eps_target_peaks_positive", "needs at least two tokens per concept");
    }

    const DatasetSpec& ds = inst.ds;
    const LogOddsProfile& profile = inst.profile;
    const int g = ds.partition.group_count;
    const int target = inst.steering.target_concept;

    // concept curves
    double target_decrease = 0.0;
    bool target_strict = true;
    double offtarget_limit_err = 0.0;
    bool offtarget_seen = false;
    double decrease_violation = 0.0;
    bool decreasing_seen = false;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        std::vector<double> target_curve(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i)
            target_curve[i] = concept_increase(ds, profile, j, target, grid[i]);
        const MonotoneReport target_report = increasing_report(grid, target_curve, 1.0);
        target_decrease = std::max(target_decrease, target_report.max_decrease);
        target_strict = target_strict && target_report.strict_ok;

        for (int k = 0; k < g; ++k) {
            bool touches_extreme = false;
            double max_inside = -std::numeric_limits<double>::infinity();
            double min_outside = std::numeric_limits<double>::infinity();
            for (int z = 0; z < ds.partition.vocab_size; ++z) {
                const bool inside = ds.partition.concept_of(z) == k;
                if (inside && (profile.attains_max(z) || profile.attains_min(z))) touches_extreme = true;
                if (inside)
                    max_inside = std::max(max_inside, profile.values[static_cast<std::size_t>(z)]);
                else
                    min_outside = std::min(min_outside, profile.values[static_cast<std::size_t>(z)]);
            }
            if (k != target && !touches_extreme) {
                offtarget_seen = true;
                const std::vector<double> base = next_token_distribution(ds, j);
                double mean_p = 0.0;
                for (int z = ds.partition.first_token(k); z < ds.partition.first_token(k) + ds.partition.concept_size; ++z)
                    mean_p += base[static_cast<std::size_t>(z)];
                mean_p /= static_cast<double>(ds.partition.concept_size);
                for (double alpha : {100.0, -100.0})
                    offtarget_limit_err = std::max(
                        offtarget_limit_err,
                        std::abs(concept_increase(ds, profile, j, k, alpha) + mean_p));
            }
            if (k != target && max_inside <= min_outside) {
                decreasing_seen = true;
                std::vector<double> curve(grid.size());
                for (std::size_t i = 0; i < grid.size(); ++i)
                    curve[i] = -concept_increase(ds, profile, j, k, grid[i]);
                // non-increasing claim: check the negation never decreases
                decrease_violation =
                    std::max(decrease_violation, increasing_report(grid, curve, 0.0).max_decrease);
            }
        }
    }
    check.add("alpha.concept_target_increasing", target_strict && target_decrease <= 1e-15,
              target_decrease, 1e-15, "strict on |alpha| <= 1, non-decreasing elsewhere");
    if (offtarget_seen)
        check.below("alpha.concept_offtarget_returns_to_baseline", offtarget_limit_err, 1e-6);
    else
        check.skip("alpha.concept_offtarget_returns_to_baseline", "no concept avoids the extreme sets");
    if (decreasing_seen)
        check.below("alpha.concept_low_logodds_decreasing", decrease_violation, 1e-15);
    else
        check.skip("alpha.concept_low_logodds_decreasing", "no concept sits below all others");

    // E[M] saturation
    double em_limit_err = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        em_limit_err = std::max(em_limit_err,
                                std::abs(expected_log_odds(ds, profile, j, 100.0) - profile.max_value));
        em_limit_err = std::max(em_limit_err,
                                std::abs(expected_log_odds(ds, profile, j, -100.0) - profile.min_value));
    }
    check.below("alpha.expected_log_odds_limits", em_limit_err, 1e-6);

    // local quadratic law of the cross-entropy increase. The quadratic
    // coefficient comes from the 21-point least-squares fit; the vanishing
    // first derivative is taken by a Richardson-extrapolated symmetric
    // difference, which stays clean even when the instance is asymmetric
    // enough for the o(alpha^2) tail to leak into a plain quadratic fit.
    const std::vector<double> local = linear_alpha_grid(-0.01, 0.01, 21);
    std::vector<double> ce_curve(local.size());
    for (std::size_t i = 0; i < local.size(); ++i)
        ce_curve[i] = delta_ce(ds, inst.params, inst.steering.direction, local[i]);
    const QuadraticFit fit = fit_quadratic(local, ce_curve);
    const double coefficient = ce_quadratic_coefficient(ds, profile);
    const auto slope = [&](double h) {
        return (delta_ce(ds, inst.params, inst.steering.direction, h) -
                delta_ce(ds, inst.params, inst.steering.direction, -h)) /
               (2.0 * h);
    };
    const double linear_term = (4.0 * slope(0.005) - slope(0.01)) / 3.0;
    check.below("alpha.delta_ce_linear_term", std::abs(linear_term), 1e-8);
    check.below("alpha.delta_ce_quadratic_term", std::abs(fit.quadratic / coefficient - 1.0), 0.005,
                "relative to the half-variance coefficient");

    // tanh reconstruction across contexts, concepts and strengths
    double tanh_err = 0.0;
    double nu_bound_violation = 0.0;
    const double spread = profile.max_value - profile.min_value;
    for (int j = 0; j < ds.num_contexts(); ++j)
        for (int k = 0; k < g; ++k)
            for (double alpha : {-5.0, -1.0, 1.0, 5.0}) {
                const TanhParts parts = tanh_decomposition(ds, profile, j, k, alpha, 512);
                tanh_err = std::max(tanh_err, parts.reconstruction_error);
                nu_bound_violation = std::max(
                    nu_bound_violation, std::abs(parts.drift) - spread * std::abs(alpha) - 1e-12);
            }
    check.below("alpha.tanh_reconstruction", tanh_err, 1e-6);
    check.add("alpha.tanh_drift_linear_bound", nu_bound_violation <= 0.0, nu_bound_violation, 0.0,
              "|nu(alpha)| <= (max M - min M) |alpha|");

    // closed-form derivatives against central finite differences
    std::mt19937_64 rng(4242);
    double deriv_err = 0.0;
    double var_err = 0.0;
    int sampled = 0;
    while (sampled < 20) {
        const int j = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(ds.num_contexts())));
        const int z = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(ds.partition.vocab_size)));
        const double alpha = 6.0 * (uniform_unit(rng) - 0.5);
        const double closed = delta_p_derivative(ds, profile, j, z, alpha);
        if (std::abs(closed) < 1e-8) continue;  // keep the relative comparison well-posed
        ++sampled;
        const double fd = central_difference(
            [&](double a) { return delta_p(ds, profile, j, z, a); }, alpha, 1e-6);
        deriv_err = std::max(deriv_err, relative_gap(fd, closed));
        const double var_fd = central_difference(
            [&](double a) { return expected_log_odds(ds, profile, j, a); }, alpha, 1e-6);
        var_err = std::max(var_err, relative_gap(var_fd, expected_log_odds_derivative(ds, profile, j, alpha)));
    }
    check.below("alpha.delta_p_derivative_fd", deriv_err, 1e-5);
    check.below("alpha.log_odds_variance_identity_fd", var_err, 1e-5);

    // saturated delta_p against the limit formula
    double limit_err = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j)
        for (int z = 0; z < ds.partition.vocab_size; ++z)
            for (int sign : {1, -1})
                limit_err = std::max(limit_err,
                                     std::abs(delta_p(ds, profile, j, z, 100.0 * sign) -
                                              delta_p_limit(ds, profile, j, z, sign)));
    check.below("alpha.delta_p_limit_formula", limit_err, 1e-6);

    // sweep container invariants on a grid containing zero
    const std::vector<double> small_grid = {-2.0, -1.0, 0.0, 1.0, 2.0};
    const SweepResult sweep =
        run_sweep(ds, inst.params, inst.steering, profile, small_grid, 0);
    double zero_row_err = 0.0;
    double row_sum_err = 0.0;
    for (std::size_t i = 0; i < small_grid.size(); ++i) {
        double row_sum = 0.0;
        for (int z = 0; z < ds.partition.vocab_size; ++z) {
            row_sum += sweep.per_token_delta(static_cast<int>(i), z);
            if (small_grid[i] == 0.0)
                zero_row_err = std::max(zero_row_err, std::abs(sweep.per_token_delta(static_cast<int>(i), z)));
        }
        if (small_grid[i] == 0.0)
            zero_row_err = std::max(zero_row_err, std::abs(sweep.delta_ce_curve[i]));
        row_sum_err = std::max(row_sum_err, std::abs(row_sum));
    }
    check.below("alpha.sweep_zero_row", zero_row_err, 1e-12);
    check.below("alpha.sweep_rows_sum_to_zero", row_sum_err, 1e-10);
}

void check_transformer_invariants(Checker& check, const RunConfig& config) {
    if (!config.transformer.enabled) {
        check.skip("transformer.limit_convergence", "transformer block disabled");
        return;
    }
    const TransformerConfig cfg = transformer_config(config.transformer);
    const TransformerParams params = make_transformer(cfg);
    const std::vector<double> direction = config.transformer.direction.empty()
                                              ? make_direction(cfg.dim, cfg.seed + 1)
                                              : config.transformer.direction;
    const int layer = config.transformer.steer_layer;

    const auto prompts = sample_sequences(3, cfg.seq_len, cfg.vocab, cfg.seed + 2);

    double gap_at_saturation = 0.0;
    double monotonicity_violation = 0.0;
    for (const auto& prompt : prompts) {
        for (int sign : {1, -1}) {
            double previous = std::numeric_limits<double>::infinity();
            for (double mag : {1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8}) {
                const double gap = softmax_gap(params, prompt, layer, direction, sign * mag);
                monotonicity_violation = std::max(monotonicity_violation, gap - previous - 1e-9);
                previous = gap;
                if (mag == 1e6) gap_at_saturation = std::max(gap_at_saturation, gap);
            }
        }
    }
    check.below("transformer.limit_gap_at_1e6", gap_at_saturation, 1e-4);
    check.add("transformer.limit_gap_nonincreasing", monotonicity_violation <= 0.0,
              monotonicity_violation, 0.0, "softmax gap shrinks along the alpha ladder");

    // the other norm flavor must converge the same way
    TransformerConfig flipped = cfg;
    flipped.norm_kind = cfg.norm_kind == NormKind::rmsnorm ? NormKind::layernorm : NormKind::rmsnorm;
    const TransformerParams params_flipped = make_transformer(flipped);
    double flipped_gap = 0.0;
    for (int sign : {1, -1})
        flipped_gap = std::max(flipped_gap,
                               softmax_gap(params_flipped, prompts[0], layer, direction, sign * 1e6));
    check.below("transformer.limit_gap_other_norm", flipped_gap, 1e-4);

    // prompt independence at saturation
    const Matrix a = forward_steered(params, prompts[0], layer, direction, 1e6);
    const Matrix b = forward_steered(params, prompts[1], layer, direction, 1e6);
    const std::vector<double> pa = softmax(a.row(a.rows - 1));
    const std::vector<double> pb = softmax(b.row(b.rows - 1));
    double prompt_gap = 0.0;
    for (std::size_t z = 0; z < pa.size(); ++z)
        prompt_gap = std::max(prompt_gap, std::abs(pa[z] - pb[z]));
    check.below("transformer.prompt_independence", prompt_gap, 2e-4);

    // corpus cross-entropy plateau
    const auto corpus = sample_sequences(12, cfg.seq_len, cfg.vocab, cfg.seed + 3);
    const double base_ce = corpus_cross_entropy(params, corpus);
    const double ce_lo = steered_corpus_cross_entropy(params, corpus, layer, direction, 1e5) - base_ce;
    const double ce_hi = steered_corpus_cross_entropy(params, corpus, layer, direction, 1e6) - base_ce;
    check.below("transformer.delta_ce_plateau", std::abs(ce_lo - ce_hi), 1e-3);

    // bounded remainder
    const std::vector<double> probe_grid = config.transformer.alpha_probe;
    const RemainderProbe probe = remainder_bound_probe(params, prompts[0], layer, direction, probe_grid);
    const double mid = probe.sup_remainder[probe.sup_remainder.size() / 2];
    const double last = probe.sup_remainder.back();
    check.below("transformer.remainder_ratio", mid > 0.0 ? last / mid : 0.0, 1.05,
                "largest-alpha remainder over mid-grid remainder");
    std::vector<double> stretched(direction);
    for (double& x : stretched) x *= 10.0;
    const RemainderProbe scaled =
        remainder_bound_probe(params, prompts[0], layer, stretched, probe_grid);
    const double scaled_mid = scaled.sup_remainder[scaled.sup_remainder.size() / 2];
    check.below("transformer.remainder_ratio_scaled_direction",
                scaled_mid > 0.0 ? scaled.sup_remainder.back() / scaled_mid : 0.0, 1.05);
}

void check_cli_invariants(Checker& check, const RunConfig& config, const BuiltInstance& inst) {
    const RunConfig round_tripped = config_from_json(config_to_json(config));
    check.add("cli.config_round_trip", round_tripped == config, round_tripped == config ? 0.0 : 1.0,
              0.0, "serialize-parse identity");

    const SweepArtifacts first = render_sweep(config, inst);
    const SweepArtifacts second = render_sweep(config, inst);
    const bool identical = first.next_token_csv == second.next_token_csv &&
                           first.concept_csv == second.concept_csv &&
                           first.cross_entropy_csv == second.cross_entropy_csv &&
                           first.summary.dump() == second.summary.dump();
    check.add("cli.sweep_determinism", identical, identical ? 0.0 : 1.0, 0.0,
              "byte-identical renderings");
}

}  // namespace

std::vector<CheckResult> verify_all(const RunConfig& config,
                                    const std::optional<DatasetSpec>& dataset_override) {
    Checker check;
    BuiltInstance inst = dataset_override ? build_instance(config, *dataset_override)
                                          : build_instance(config);
    check_dataset_invariants(check, inst.ds);
    check_ufm_invariants(check, inst);
    check_steering_invariants(check, inst);
    check_alpha_invariants(check, inst, config);
    check_transformer_invariants(check, config);
    check_cli_invariants(check, config, inst);
    return check.results;
}

nlohmann::json report_to_json(const std::vector<CheckResult>& checks) {
    nlohmann::json out;
    out["schema_version"] = 1;
    nlohmann::json list = nlohmann::json::array();
    int failures = 0;
    for (const CheckResult& c : checks) {
        nlohmann::json item;
        item["name"] = c.name;
        item["pass"] = c.passed;
        item["measured"] = c.measured;
        item["threshold"] = c.threshold;
        if (!c.note.empty()) item["note"] = c.note;
        if (!c.passed) ++failures;
        list.push_back(std::move(item));
    }
    out["checks"] = std::move(list);
    out["failures"] = failures;
    out["pass"] = failures == 0;
    return out;
}

int count_failures(const std::vector<CheckResult>& checks) {
    int failures = 0;
    for (const CheckResult& c : checks)
        if (!c.passed) ++failures;
    return failures;
}

}  // namespace steerlab
