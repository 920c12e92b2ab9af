#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "steerlab/common.hpp"

namespace steerlab {

// =====================================================================
//  Concept-partitioned vocabulary: [V] split into G contiguous blocks
//  of s = V/G tokens each. Token and concept indices are 0-based.
// =====================================================================
struct ConceptPartition {
    int vocab_size = 0;    // V
    int group_count = 0;   // G
    int concept_size = 0;  // s = V/G

    int concept_of(int token) const { return token / concept_size; }
    int first_token(int concept_index) const { return concept_index * concept_size; }

    bool operator==(const ConceptPartition&) const = default;
};

ConceptPartition build_partition(int vocab_size, int group_count);

// Per-token two-level next-token probabilities: a_z when the context
// shares the token's concept, b_z otherwise, with a_z > b_z.
struct ConceptProbs {
    std::vector<double> in_concept;   // a_z
    std::vector<double> off_concept;  // b_z
};

// a_z = (1-eps)/s, b_z = eps/((G-1)s); eps in (0, (G-1)/G).
// The single-group case G=1 carries no off-concept tokens and only
// admits eps = 0, giving the uniform distribution a_z = 1/V.
ConceptProbs symmetric_probs(const ConceptPartition& partition, double epsilon);

// a_z = (1-eps) * gamma_z, b_z = eps * omega_z / (G-1), where gamma and
// omega each sum to 1 within every concept block and a_z > b_z must hold.
ConceptProbs weighted_probs(const ConceptPartition& partition, double epsilon,
                            std::span<const double> gamma, std::span<const double> omega);

struct Context {
    std::vector<int> tokens;  // length T-1, all from one concept
    int concept_label = 0;

    bool operator==(const Context&) const = default;
};

// per_concept distinct contexts for every concept, ordered concept-major,
// deterministic under seed.
std::vector<Context> enumerate_contexts(const ConceptPartition& partition, int sequence_length,
                                        int per_concept, std::uint64_t seed);

// Records how (a, b) were generated so the JSON form can round-trip the
// generating parameters instead of raw arrays.
struct ProbProvenance {
    enum class Kind { symmetric, weighted, raw };
    Kind kind = Kind::symmetric;
    double epsilon = 0.0;
    std::vector<double> gamma;
    std::vector<double> omega;

    bool operator==(const ProbProvenance&) const = default;
};

struct DatasetSpec {
    ConceptPartition partition;
    std::vector<double> in_concept_prob;   // a_z
    std::vector<double> off_concept_prob;  // b_z
    std::vector<Context> contexts;         // distinct contexts
    std::vector<double> context_weights;   // pi_j, sums to 1
    int sequence_length = 2;               // T
    ProbProvenance provenance;

    int num_contexts() const { return static_cast<int>(contexts.size()); }
};

// Assembles and validates a DatasetSpec. Empty weights mean uniform pi.
DatasetSpec make_dataset(const ConceptPartition& partition, const ConceptProbs& probs,
                         std::vector<Context> contexts, std::vector<double> context_weights,
                         int sequence_length, ProbProvenance provenance);

// (a_z over the context's concept, b_z elsewhere); sums to 1.
std::vector<double> next_token_distribution(const DatasetSpec& ds, int context_index);

// -sum_j pi_j sum_z p(z|c_j) log p(z|c_j), in nats.
double dataset_entropy(const DatasetSpec& ds);

// JSON document: {V, G, T, epsilon | (gamma, omega) | (a, b), contexts, pi}.
nlohmann::json dataset_to_json(const DatasetSpec& ds);

// Rebuilds through the same generators when epsilon or (gamma, omega) are
// present. Raw (a, b) arrays load with structural checks only, leaving the
// probability invariants to the verify suite; this keeps diagnostic runs on
// hand-edited files possible.
DatasetSpec dataset_from_json(const nlohmann::json& j);

}  // namespace steerlab
