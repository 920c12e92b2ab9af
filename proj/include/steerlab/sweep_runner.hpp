#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "steerlab/run_config.hpp"

namespace steerlab {

// In-memory renderings of everything cmd_sweep writes, so determinism can
// be checked without touching the filesystem. CSV numbers carry 17
// significant digits for lossless double round-trips.
struct SweepArtifacts {
    std::string next_token_csv;
    std::string concept_csv;
    std::string cross_entropy_csv;
    nlohmann::json summary;
};

SweepArtifacts render_sweep(const RunConfig& config, const BuiltInstance& instance);

struct TransformerArtifacts {
    std::string probe_csv;  // alpha,softmax_gap,remainder_sup
    nlohmann::json verdicts;
    bool all_pass = true;
};

TransformerArtifacts render_transformer_limit(const RunConfig& config);

std::string format_double(double value);

// Command bodies shared by the CLI and the tests.
void run_gen(const RunConfig& config, const std::filesystem::path& out_dir);
void run_train(const RunConfig& config, const std::filesystem::path& out_dir);
void run_sweep_command(const RunConfig& config, const std::filesystem::path& out_dir);
int run_transformer_limit_command(const RunConfig& config, const std::filesystem::path& out_dir);

}  // namespace steerlab
