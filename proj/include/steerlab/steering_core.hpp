#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "steerlab/concept_dataset.hpp"
#include "steerlab/ufm_model.hpp"

namespace steerlab {

enum class NegativeMode { contrastive, random_sample };

const char* to_string(NegativeMode mode);
NegativeMode negative_mode_from_string(const std::string& name);

struct IndexSets {
    std::vector<int> positive;  // P, target-concept contexts
    std::vector<int> negative;  // N, disjoint from P

    int pair_count() const { return static_cast<int>(positive.size()); }
};

// Deterministic under seed. Contrastive mode draws N from one designated
// opposite concept (default: the concept after the target, wrapping);
// random mode draws N uniformly from all non-target contexts.
IndexSets build_index_sets(const DatasetSpec& ds, int target_concept, NegativeMode mode,
                           int pair_count, std::uint64_t seed, int opposite_concept = -1);

// v = mean_{j in P} h_j - mean_{j in N} h_j.
std::vector<double> steering_vector(const UfmParams& params, const IndexSets& sets);

// W (h_j + alpha v).
std::vector<double> steered_logits(const UfmParams& params, std::span<const double> direction,
                                   int context_index, double alpha);

// =====================================================================
//  Log-odds profile M(z) = (1/q) (sum_{i in P} log p(z|c_i)
//                                  - sum_{i in N} log p(z|c_i)),
//  kept as averaged log-differences so large q cannot underflow.
// =====================================================================
struct LogOddsProfile {
    std::vector<double> values;    // M(z)
    std::vector<int> argmax_set;   // tokens within tie_tolerance of max
    std::vector<int> argmin_set;
    double max_value = 0.0;
    double min_value = 0.0;
    double tie_tolerance = 1e-9;

    bool attains_max(int z) const;
    bool attains_min(int z) const;
};

LogOddsProfile log_odds(const DatasetSpec& ds, const IndexSets& sets, double tie_tolerance = 1e-9);

// Exponential tilt of the dataset distribution:
//   p(z|c_j) exp(alpha M(z)) / sum_z' p(z'|c_j) exp(alpha M(z')),
// evaluated with a max-shift in the exponent. Equals the softmax of the
// steered logits whenever the model reproduces the dataset probabilities.
std::vector<double> steered_probs_closed_form(const DatasetSpec& ds, const LogOddsProfile& profile,
                                              int context_index, double alpha);

struct SteeringSpec {
    int target_concept = 0;
    NegativeMode mode = NegativeMode::contrastive;
    IndexSets sets;
    std::vector<double> direction;  // v, length d
};

SteeringSpec make_steering(const DatasetSpec& ds, const UfmParams& params, int target_concept,
                           NegativeMode mode, int pair_count, std::uint64_t seed,
                           int opposite_concept = -1);

nlohmann::json steering_to_json(const SteeringSpec& spec);
nlohmann::json profile_to_json(const LogOddsProfile& profile);

}  // namespace steerlab
