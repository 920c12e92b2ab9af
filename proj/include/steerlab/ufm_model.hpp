#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "steerlab/common.hpp"
#include "steerlab/concept_dataset.hpp"

namespace steerlab {

// =====================================================================
//  Unconstrained Features Model: logits(j) = W h_j with a V x d decoder
//  and one free d-vector per distinct context.
// =====================================================================
struct UfmParams {
    int vocab_size = 0;   // V
    int dim = 0;          // d
    int num_contexts = 0; // m
    Matrix decoder;       // V x d
    Matrix embeddings;    // d x m, column j is h_j

    std::vector<double> embedding(int j) const { return embeddings.column(j); }
};

// Exact construction: d = V, W = I, h_j = log p(.|c_j). Softmax of the
// logits reproduces the dataset probabilities to rounding error.
UfmParams analytic_perfect_fit(const DatasetSpec& ds);

std::vector<double> logits(const UfmParams& params, int context_index);

// pi-weighted cross-entropy in nats, log-probabilities via log-sum-exp.
double cross_entropy(const UfmParams& params, const DatasetSpec& ds);

// Same loss evaluated on externally supplied per-context logit columns.
double cross_entropy_of_logits(const std::vector<std::vector<double>>& logit_columns,
                               const DatasetSpec& ds);

// d(CE)/d(h_j) = pi_j W^T (softmax(W h_j) - p(.|c_j)).
std::vector<double> ce_embedding_gradient(const UfmParams& params, const DatasetSpec& ds,
                                          int context_index);

class TrainingDivergedError : public std::runtime_error {
  public:
    TrainingDivergedError(int step_index, const std::string& msg)
        : std::runtime_error(msg), step(step_index) {}
    int step = 0;
};

struct GdOptions {
    int dim = 0;                 // 0 means d = V
    double learning_rate = 0.5;
    int steps = 20000;
    double init_scale = 0.01;
    std::uint64_t seed = 0;
};

struct GdResult {
    UfmParams params;
    std::vector<double> loss_trace;  // loss at init, then after each step
};

// Full-batch gradient descent on the pi-weighted cross-entropy over (W, H)
// from seeded Gaussian initialization. Throws TrainingDivergedError as soon
// as the loss stops being finite.
GdResult train_gd(const DatasetSpec& ds, const GdOptions& options = {});

nlohmann::json ufm_to_json(const UfmParams& params);
UfmParams ufm_from_json(const nlohmann::json& j);

void write_loss_trace_csv(const std::string& path, const std::vector<double>& trace);

}  // namespace steerlab
