#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "steerlab/alpha_analysis.hpp"
#include "test_support.hpp"

using namespace steerlab;
using namespace testsupport;

namespace {

struct Fixture {
    DatasetSpec ds;
    UfmParams params;
    IndexSets sets;
    LogOddsProfile profile;
    std::vector<double> direction;
    int neutral_context;  // a concept-2 context: off-target, no extreme tokens

    Fixture()
        : ds(canonical_dataset()),
          params(analytic_perfect_fit(ds)),
          sets(canonical_sets(ds)),
          profile(log_odds(ds, sets)),
          direction(steering_vector(params, sets)),
          neutral_context(first_context_of_concept(ds, 2)) {}
};

}  // namespace

TEST_SUITE("alpha_analysis") {

TEST_CASE("delta_p basics and probability bounds") {
    const Fixture fx;
    CHECK(delta_p(fx.ds, fx.profile, 0, 0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));

    // saturated increase for an argmax token seen from a neutral context
    CHECK(delta_p(fx.ds, fx.profile, fx.neutral_context, 0, 100.0) ==
          doctest::Approx(kLimitOffConceptToken).epsilon(1e-6));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const int j = static_cast<int>(uniform_below(rng, 12));
        const int z = static_cast<int>(uniform_below(rng, 9));
        const double alpha = 200.0 * (uniform_unit(rng) - 0.5);
        const double base = next_token_distribution(fx.ds, j)[z];
        const double dp = delta_p(fx.ds, fx.profile, j, z, alpha);
        CHECK(dp >= -base - 1e-15);
        CHECK(dp <= 1.0 - base + 1e-15);
    }
}

TEST_CASE("delta_p derivative: finite differences, argmax positivity, zero at the peak") {
    const Fixture fx;
    for (double alpha : {-3.0, 0.0, 2.0})
        for (int z : {1, 4, 7}) {
            const double closed = delta_p_derivative(fx.ds, fx.profile, 0, z, alpha);
            const double fd = central_difference(
                [&](double a) { return delta_p(fx.ds, fx.profile, 0, z, a); }, alpha, 1e-6);
            // skip derivatives near the finite-difference noise floor
            if (std::abs(closed) > 1e-4) CHECK(relative_gap(fd, closed) < 1e-5);
        }

    // strictly positive wherever M(z) - E[M] is representable (for alpha
    // around 15 the gap drops below one ulp of the log-odds scale)
    for (double alpha : {-20.0, -1.0, 0.0, 3.0, 8.0})
        CHECK(delta_p_derivative(fx.ds, fx.profile, fx.neutral_context, 0, alpha) > 0.0);

    // at a finite peak the derivative vanishes
    const PeakPoint peak = peak_alpha(fx.ds, fx.profile, fx.neutral_context, 6);
    REQUIRE(peak.finite());
    CHECK(std::abs(delta_p_derivative(fx.ds, fx.profile, fx.neutral_context, 6, peak.alpha)) < 1e-9);
}

TEST_CASE("expected log-odds: symmetry at zero, saturation, monotonicity") {
    const Fixture fx;
    CHECK(std::abs(expected_log_odds(fx.ds, fx.profile, fx.neutral_context, 0.0)) < 1e-14);
    CHECK(expected_log_odds(fx.ds, fx.profile, fx.neutral_context, 100.0) ==
          doctest::Approx(kLog18).epsilon(1e-6));
    CHECK(expected_log_odds(fx.ds, fx.profile, fx.neutral_context, -100.0) ==
          doctest::Approx(-kLog18).epsilon(1e-6));

    double previous = -std::numeric_limits<double>::infinity();
    for (double alpha = -6.0; alpha <= 6.0; alpha += 0.25) {
        const double value = expected_log_odds(fx.ds, fx.profile, 0, alpha);
        CHECK(value > previous);
        previous = value;
    }
}

TEST_CASE("variance identity: moment oracle and finite differences") {
    const Fixture fx;

    // frozen moments for a target-concept context at alpha = 0
    const double var0 = expected_log_odds_derivative(fx.ds, fx.profile, 0, 0.0);
    CHECK(var0 == doctest::Approx(kVarianceTargetContext).epsilon(1e-12));
    const double var_neutral = expected_log_odds_derivative(fx.ds, fx.profile, fx.neutral_context, 0.0);
    CHECK(var_neutral == doctest::Approx(kVarianceNeutralContext).epsilon(1e-12));

    // constant log-odds have zero variance
    const IndexSets degenerate{fx.sets.positive, fx.sets.positive};
    const LogOddsProfile flat = log_odds(fx.ds, degenerate);
    CHECK(expected_log_odds_derivative(fx.ds, flat, 0, 1.0) == 0.0);

    for (double alpha : {-2.0, 0.4, 3.0}) {
        const double fd = central_difference(
            [&](double a) { return expected_log_odds(fx.ds, fx.profile, 0, a); }, alpha, 1e-6);
        CHECK(relative_gap(fd, expected_log_odds_derivative(fx.ds, fx.profile, 0, alpha)) < 1e-5);
    }
}

TEST_CASE("peak_alpha: exact symmetric zero, infinite markers, bracket expansion") {
    const Fixture fx;

    // the neutral context sees M = 0 tokens peak exactly at zero
    const PeakPoint zero_peak = peak_alpha(fx.ds, fx.profile, fx.neutral_context, 6);
    REQUIRE(zero_peak.finite());
    CHECK(zero_peak.alpha == 0.0);
    CHECK(zero_peak.residual < 1e-10);

    CHECK(peak_alpha(fx.ds, fx.profile, fx.neutral_context, 0).kind == PeakPoint::Kind::plus_infinite);
    CHECK(peak_alpha(fx.ds, fx.profile, fx.neutral_context, 4).kind == PeakPoint::Kind::minus_infinite);

    // a peak outside the default bracket is found by geometric expansion
    const PeakPoint far = peak_alpha(fx.ds, fx.profile, 0, 6);  // target context, M = 0 token
    REQUIRE(far.finite());
    CHECK(far.residual < 1e-10);
    CHECK(far.alpha < 0.0);  // E[M](0) > 0 for a target context, so the crossing sits left of zero
}

TEST_CASE("peak_alpha reports when the bracket expansion hits its cap") {
    const Fixture fx;
    // log-odds spread of 1e-8 tilts E[M] by only ~1e-10 per unit alpha, so
    // a token near the top of that range stays unreachable within the cap
    LogOddsProfile flatland;
    flatland.values = {1e-8, 0.9e-8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1e-8};
    flatland.max_value = 1e-8;
    flatland.min_value = -1e-8;
    flatland.tie_tolerance = 1e-12;
    flatland.argmax_set = {0};
    flatland.argmin_set = {8};
    CHECK_THROWS_WITH_AS(peak_alpha(fx.ds, flatland, fx.neutral_context, 1),
                         doctest::Contains("extreme"), std::runtime_error);
}

TEST_CASE("peak table covers every (context, token) cell") {
    const Fixture fx;
    const std::vector<PeakTableEntry> table = build_peak_table(fx.ds, fx.profile);
    CHECK(table.size() == 12 * 9);
    for (const PeakTableEntry& entry : table) {
        if (fx.profile.attains_max(entry.token)) {
            CHECK(entry.peak.kind == PeakPoint::Kind::plus_infinite);
        } else if (fx.profile.attains_min(entry.token)) {
            CHECK(entry.peak.kind == PeakPoint::Kind::minus_infinite);
        } else {
            CHECK(entry.peak.finite());
            CHECK(entry.peak.residual < 1e-9);
        }
    }
}

TEST_CASE("weighted instance: finite positive target peaks, grid-scan cross-check") {
    const DatasetSpec ds = weighted_dataset(0.1);
    const IndexSets sets = build_index_sets(ds, 0, NegativeMode::contrastive, 4, 2);
    const LogOddsProfile profile = log_odds(ds, sets);
    const int j = first_context_of_concept(ds, 2);

    CHECK(profile.argmax_set == std::vector<int>{0});
    for (int z : {1, 2}) {
        const PeakPoint peak = peak_alpha(ds, profile, j, z);
        REQUIRE(peak.finite());
        CHECK(peak.alpha > 0.0);
        CHECK(peak.residual < 1e-9);

        // dense scan: the derivative must change sign inside a bracket around the peak
        const std::vector<double> grid = linear_alpha_grid(peak.alpha - 2.0, peak.alpha + 2.0, 801);
        int flips = 0;
        double flip_at = 0.0;
        for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
            const double d0 = delta_p_derivative(ds, profile, j, z, grid[i]);
            const double d1 = delta_p_derivative(ds, profile, j, z, grid[i + 1]);
            if (d0 > 0.0 && d1 <= 0.0) {
                ++flips;
                flip_at = grid[i];
            }
        }
        CHECK(flips == 1);
        CHECK(std::abs(flip_at - peak.alpha) < 0.01);
    }
}

TEST_CASE("concept increase: zero at zero, saturation limits, target growth") {
    const Fixture fx;
    CHECK(concept_increase(fx.ds, fx.profile, 0, 0, 0.0) == doctest::Approx(0.0).epsilon(1e-15));

    // the neutral concept returns all its own mass in both limits
    for (double alpha : {100.0, -100.0})
        CHECK(concept_increase(fx.ds, fx.profile, fx.neutral_context, 2, alpha) ==
              doctest::Approx(-0.3).epsilon(1e-6));

    // strict growth where increments stay above double resolution
    double previous = -1.0;
    for (double alpha = -4.0; alpha <= 4.0; alpha += 0.25) {
        const double value = concept_increase(fx.ds, fx.profile, fx.neutral_context, 0, alpha);
        CHECK(value > previous);
        previous = value;
    }
}

TEST_CASE("tanh decomposition: intercept, drift bound, reconstruction") {
    const Fixture fx;
    const TanhParts at_zero = tanh_decomposition(fx.ds, fx.profile, fx.neutral_context, 0, 0.0, 512);
    CHECK(at_zero.intercept == doctest::Approx(kTanhInterceptNeutral).epsilon(1e-12));
    CHECK(at_zero.drift == 0.0);
    CHECK(at_zero.reconstruction_error < 1e-12);

    const double spread = fx.profile.max_value - fx.profile.min_value;
    for (double alpha : {-5.0, -1.0, 1.0, 5.0})
        for (int k = 0; k < 3; ++k) {
            const TanhParts parts = tanh_decomposition(fx.ds, fx.profile, fx.neutral_context, k, alpha, 512);
            CHECK(parts.reconstruction_error < 1e-6);
            CHECK(std::abs(parts.drift) <= spread * std::abs(alpha) + 1e-12);
        }

    CHECK_THROWS_AS(tanh_decomposition(fx.ds, fx.profile, 0, 0, 1.0, 32), std::invalid_argument);
}

TEST_CASE("tanh decomposition rejects degenerate concept mass") {
    // single concept holds all probability mass, the log-odds ratio is undefined
    const ConceptPartition p = build_partition(4, 1);
    const ConceptProbs probs = symmetric_probs(p, 0.0);
    std::vector<Context> contexts = enumerate_contexts(p, 3, 2, 3);
    ProbProvenance prov;
    prov.kind = ProbProvenance::Kind::symmetric;
    const DatasetSpec flat = make_dataset(p, probs, std::move(contexts), {}, 3, prov);
    const IndexSets degenerate{{0}, {1}};
    const LogOddsProfile profile = log_odds(flat, degenerate);
    CHECK_THROWS_AS(tanh_decomposition(flat, profile, 0, 0, 1.0, 512), std::domain_error);
}

TEST_CASE("delta_ce: nonnegative on the perfect fit, matches the naive oracle") {
    const Fixture fx;
    CHECK(delta_ce(fx.ds, fx.params, fx.direction, 0.0) == 0.0);

    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 15; ++trial) {
        const double alpha = 60.0 * (uniform_unit(rng) - 0.5);
        const double dce = delta_ce(fx.ds, fx.params, fx.direction, alpha);
        CHECK(dce >= -1e-12);

        // naive oracle: steer every embedding, evaluate both CE terms directly
        double steered_ce = 0.0;
        double base_ce = 0.0;
        for (int j = 0; j < fx.ds.num_contexts(); ++j) {
            const std::vector<double> p = next_token_distribution(fx.ds, j);
            const std::vector<double> ls = steered_logits(fx.params, fx.direction, j, alpha);
            const std::vector<double> lb = logits(fx.params, j);
            const double lse_s = log_sum_exp(ls);
            const double lse_b = log_sum_exp(lb);
            for (int z = 0; z < 9; ++z) {
                steered_ce -= fx.ds.context_weights[j] * p[z] * (ls[z] - lse_s);
                base_ce -= fx.ds.context_weights[j] * p[z] * (lb[z] - lse_b);
            }
        }
        CHECK(std::abs(dce - (steered_ce - base_ce)) < 1e-12);
    }
}

TEST_CASE("quadratic coefficient: frozen value, degenerate zero, curvature oracle") {
    const Fixture fx;
    const double coefficient = ce_quadratic_coefficient(fx.ds, fx.profile);
    CHECK(coefficient == doctest::Approx(kCeQuadCoefficient).epsilon(1e-12));

    const IndexSets degenerate{fx.sets.positive, fx.sets.positive};
    CHECK(ce_quadratic_coefficient(fx.ds, log_odds(fx.ds, degenerate)) == 0.0);

    // second central difference of delta_ce equals twice the coefficient
    const double h = 1e-3;
    const double fd2 = (delta_ce(fx.ds, fx.params, fx.direction, h) +
                        delta_ce(fx.ds, fx.params, fx.direction, -h)) /
                       (h * h);
    CHECK(relative_gap(fd2 / 2.0, coefficient) < 1e-3);
}

TEST_CASE("delta_p limits: formula values and total cancellation") {
    const Fixture fx;
    CHECK(delta_p_limit(fx.ds, fx.profile, fx.neutral_context, 0, 1) ==
          doctest::Approx(kLimitOffConceptToken).epsilon(1e-12));
    // the neutral context's own tokens lose their full in-concept mass
    CHECK(delta_p_limit(fx.ds, fx.profile, fx.neutral_context, 6, 1) ==
          doctest::Approx(-0.3).epsilon(1e-12));

    for (int j : {0, fx.neutral_context})
        for (int sign : {1, -1}) {
            double total = 0.0;
            for (int z = 0; z < 9; ++z) total += delta_p_limit(fx.ds, fx.profile, j, z, sign);
            CHECK(std::abs(total) < 1e-12);
        }

    CHECK_THROWS_AS(delta_p_limit(fx.ds, fx.profile, 0, 0, 2), std::invalid_argument);
}

TEST_CASE("alpha grids and the quadratic fit") {
    const std::vector<double> grid = logsym_alpha_grid(1e-3, 1e2, 200);
    CHECK(grid.size() == 401);
    CHECK(grid.front() == -100.0);
    CHECK(grid[200] == 0.0);
    CHECK(grid.back() == 100.0);
    CHECK(std::is_sorted(grid.begin(), grid.end()));
    for (int i = 0; i < 200; ++i) CHECK(grid[i] == -grid[400 - i]);

    const std::vector<double> lin = linear_alpha_grid(-1.0, 1.0, 5);
    CHECK(lin == std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0});

    // recover the coefficients of an exact quadratic
    std::vector<double> values(lin.size());
    for (std::size_t i = 0; i < lin.size(); ++i) values[i] = 0.25 - 1.5 * lin[i] + 2.0 * lin[i] * lin[i];
    const QuadraticFit fit = fit_quadratic(lin, values);
    CHECK(fit.constant == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(fit.linear == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(fit.quadratic == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("run_sweep invariants: zero row, zero-sum rows, hashes") {
    const Fixture fx;
    SteeringSpec spec;
    spec.target_concept = 0;
    spec.mode = NegativeMode::contrastive;
    spec.sets = fx.sets;
    spec.direction = fx.direction;
    const std::vector<double> grid = {-1.0, 0.0, 1.0};
    const SweepResult sweep = run_sweep(fx.ds, fx.params, spec, fx.profile, grid, 0);

    for (int z = 0; z < 9; ++z) CHECK(std::abs(sweep.per_token_delta(1, z)) < 1e-12);
    CHECK(std::abs(sweep.delta_ce_curve[1]) < 1e-12);
    for (int r = 0; r < 3; ++r) {
        double total = 0.0;
        for (int z = 0; z < 9; ++z) total += sweep.per_token_delta(r, z);
        CHECK(std::abs(total) < 1e-10);
    }
    CHECK(sweep.dataset_hash != 0);
    CHECK(sweep.steering_hash != 0);
}

}  // TEST_SUITE
