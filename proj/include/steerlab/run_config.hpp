#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/concept_dataset.hpp"
#include "steerlab/steering_core.hpp"
#include "steerlab/toy_transformer.hpp"
#include "steerlab/ufm_model.hpp"

namespace steerlab {

// Raised on malformed or out-of-range configuration; the message names
// the offending field.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DatasetConfig {
    int vocab_size = 9;
    int group_count = 3;
    int sequence_length = 4;
    double epsilon = 0.1;
    std::vector<double> gamma;  // empty = symmetric instantiation
    std::vector<double> omega;
    int contexts_per_concept = 4;
    std::vector<double> pi;  // empty = uniform
    std::uint64_t seed = 1;

    bool operator==(const DatasetConfig&) const = default;
};

struct SteeringConfig {
    int target_concept = 0;
    std::string mode = "contrastive";
    int pair_count = 4;
    int opposite_concept = -1;  // -1 = next concept after the target
    std::uint64_t seed = 2;

    bool operator==(const SteeringConfig&) const = default;
};

struct SweepConfig {
    std::string grid = "logsym:1e-3:1e2:200";
    int context = -1;  // -1 = all contexts

    bool operator==(const SweepConfig&) const = default;
};

struct AnalysisConfig {
    bool peaks = true;
    bool tanh_parts = true;
    bool ce = true;
    bool limits = true;

    bool operator==(const AnalysisConfig&) const = default;
};

struct TransformerBlockConfig {
    bool enabled = true;
    int layers = 2;
    int dim = 16;
    int vocab = 50;
    int sequence_length = 8;
    int steer_layer = 1;
    std::string norm = "rmsnorm";
    std::vector<double> alpha_probe = {1e2, 1e4, 1e6};
    std::vector<double> direction;  // empty = drawn from seed + 1
    std::uint64_t seed = 3;

    bool operator==(const TransformerBlockConfig&) const = default;
};

struct RunConfig {
    int schema_version = 1;
    DatasetConfig dataset;
    SteeringConfig steering;
    SweepConfig sweep;
    AnalysisConfig analysis;
    TransformerBlockConfig transformer;
    std::string output_dir = "out";

    bool operator==(const RunConfig&) const = default;
};

// The canonical fixture: V=9, G=3, T=4, eps=0.1, contrastive q=4, uniform pi.
RunConfig default_config();

nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Grid syntax: "lo:hi:n" (linear) or "logsym:lo:hi:n" (n log-spaced
// magnitudes per sign plus zero).
std::vector<double> parse_alpha_grid(const std::string& spec);

// The dataset/steering/model objects a run operates on.
struct BuiltInstance {
    DatasetSpec ds;
    UfmParams params;  // analytic perfect fit
    SteeringSpec steering;
    LogOddsProfile profile;
};

DatasetSpec build_dataset(const DatasetConfig& config);
BuiltInstance build_instance(const RunConfig& config);
BuiltInstance build_instance(const RunConfig& config, DatasetSpec ds);

TransformerConfig transformer_config(const TransformerBlockConfig& block);

}  // namespace steerlab
