#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "steerlab/concept_dataset.hpp"
#include "steerlab/steering_core.hpp"
#include "steerlab/ufm_model.hpp"

namespace steerlab {

// =====================================================================
//  Curves in the steering strength alpha, all derived from the tilted
//  distribution steered_probs_closed_form. Everything here is a pure
//  function of immutable inputs.
// =====================================================================

// steered probability of z minus p(z|c_j).
double delta_p(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index, int token,
               double alpha);

// d/dalpha of delta_p: sigma_z(alpha) * (M(z) - E[M] under the tilt).
double delta_p_derivative(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                          int token, double alpha);

// E[M(Z)] with Z drawn from the tilted distribution; continuous and
// strictly increasing in alpha whenever M is not constant.
double expected_log_odds(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                         double alpha);

// d/dalpha of the above, i.e. Var(M(Z)) under the tilt. Two-pass central
// moment so the E[M^2] - E[M]^2 cancellation never bites.
double expected_log_odds_derivative(const DatasetSpec& ds, const LogOddsProfile& profile,
                                    int context_index, double alpha);

// =====================================================================
//  Peak location: the unique alpha with E[M](alpha) = M(z) for tokens
//  away from the extremes; the extremes themselves peak at +/-infinity.
// =====================================================================
struct PeakOptions {
    double bracket_lo = -10.0;
    double bracket_hi = 10.0;
    double tolerance = 1e-10;      // on the residual |E[M](alpha) - M(z)|
    double expansion_cap = 1e6;    // give up when |alpha| exceeds this
    int max_iterations = 200;
};

struct PeakPoint {
    enum class Kind { finite, plus_infinite, minus_infinite };
    Kind kind = Kind::finite;
    double alpha = 0.0;     // meaningful for finite peaks only
    double residual = 0.0;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;

    bool finite() const { return kind == Kind::finite; }
};

// Bisection on the strictly increasing map alpha -> E[M](alpha). The
// bracket doubles geometrically until it straddles M(z); exceeding the
// cap raises an error, which signals M(z) is within tolerance of an
// extreme value.
PeakPoint peak_alpha(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                     int token, const PeakOptions& options = {});

struct PeakTableEntry {
    int context_index = 0;
    int token = 0;
    PeakPoint peak;
};

std::vector<PeakTableEntry> build_peak_table(const DatasetSpec& ds, const LogOddsProfile& profile,
                                             const PeakOptions& options = {});

// Mean of delta_p over the tokens of one concept.
double concept_increase(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                        int concept_index, double alpha);

// =====================================================================
//  tanh law for the concept curve. F(alpha) = tilted mass of the concept
//  satisfies logit(F(alpha)) = r + nu(alpha) with
//    r  = logit(F(0)),
//    nu = integral over [0, alpha] of (E[M | Z in C] - E[M | Z not in C]).
// =====================================================================
struct TanhParts {
    double intercept = 0.0;             // r_j
    double drift = 0.0;                 // nu_j(alpha)
    double reconstruction_error = 0.0;  // |sigmoid(nu + r) - F(alpha)|
};

TanhParts tanh_decomposition(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                             int concept_index, double alpha, int quadrature_points = 512);

// CE(steered by alpha*v on every context) - CE(unsteered), pi-weighted.
double delta_ce(const DatasetSpec& ds, const UfmParams& params, std::span<const double> direction,
                double alpha);

// 1/2 sum_j pi_j Var(M(Z)) with Z ~ p(.|c_j): the curvature of delta_ce
// at alpha = 0.
double ce_quadratic_coefficient(const DatasetSpec& ds, const LogOddsProfile& profile);

// Limit of delta_p as alpha -> +inf (sign=+1) or -inf (sign=-1): mass
// concentrates on the extreme-log-odds set, renormalized by p.
double delta_p_limit(const DatasetSpec& ds, const LogOddsProfile& profile, int context_index,
                     int token, int sign);

// =====================================================================
//  Grids and fits.
// =====================================================================

// 0 plus log-spaced magnitudes on both signs: 2*per_side + 1 ascending points.
std::vector<double> logsym_alpha_grid(double lo_magnitude, double hi_magnitude, int per_side);

std::vector<double> linear_alpha_grid(double lo, double hi, int count);

struct QuadraticFit {
    double constant = 0.0;
    double linear = 0.0;
    double quadratic = 0.0;
};

// Least-squares fit of values ~ c0 + c1 alpha + c2 alpha^2.
QuadraticFit fit_quadratic(std::span<const double> alphas, std::span<const double> values);

// =====================================================================
//  Assembled sweep over one context.
// =====================================================================
struct SweepResult {
    std::vector<double> alpha_grid;
    Matrix per_token_delta;    // |grid| x V
    Matrix per_concept_delta;  // |grid| x G
    std::vector<double> delta_ce_curve;
    int context_index = 0;
    std::uint64_t dataset_hash = 0;
    std::uint64_t steering_hash = 0;
};

SweepResult run_sweep(const DatasetSpec& ds, const UfmParams& params, const SteeringSpec& steering,
                      const LogOddsProfile& profile, std::span<const double> alpha_grid,
                      int context_index);

}  // namespace steerlab
