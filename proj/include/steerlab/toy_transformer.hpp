#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

enum class NormKind { rmsnorm, layernorm };

const char* to_string(NormKind kind);
NormKind norm_kind_from_string(const std::string& name);

// rmsnorm: sqrt(d) * x / |x| (elementwise gain); zero input is a domain
// error. layernorm: mean/variance normalization with a 1e-6 stabilizer,
// then the gain.
std::vector<double> norm(std::span<const double> x, std::span<const double> gain, NormKind kind);

struct TransformerConfig {
    int layers = 2;          // L
    int dim = 16;            // d
    int vocab = 50;          // V
    int seq_len = 8;         // T
    NormKind norm_kind = NormKind::rmsnorm;
    std::uint64_t seed = 0;

    bool operator==(const TransformerConfig&) const = default;
};

// Single-head pre-norm decoder blocks with a GELU feed-forward. All
// weights live in one flat parameter vector so training and
// finite-difference checks can walk them uniformly; the layout is fixed
// by the offsets below and fully determined by (config, seed).
struct TransformerParams {
    TransformerConfig config;
    std::vector<double> theta;

    int hidden() const { return 4 * config.dim; }

    // flat-layout offsets
    std::size_t embedding_off() const { return 0; }
    std::size_t layer_off(int layer) const;
    std::size_t wq_off(int l) const { return layer_off(l); }
    std::size_t wk_off(int l) const { return wq_off(l) + dd(); }
    std::size_t wv_off(int l) const { return wk_off(l) + dd(); }
    std::size_t wo_off(int l) const { return wv_off(l) + dd(); }
    std::size_t w1_off(int l) const { return wo_off(l) + dd(); }
    std::size_t w2_off(int l) const { return w1_off(l) + dh(); }
    std::size_t gain_attn_off(int l) const { return w2_off(l) + dh(); }
    std::size_t gain_ffn_off(int l) const { return gain_attn_off(l) + static_cast<std::size_t>(config.dim); }
    std::size_t final_gain_off() const;
    std::size_t unembedding_off() const;
    std::size_t total_params() const;

    std::span<const double> slice(std::size_t off, std::size_t n) const { return {theta.data() + off, n}; }
    std::span<double> slice(std::size_t off, std::size_t n) { return {theta.data() + off, n}; }
    const double* weights_at(std::size_t off) const { return theta.data() + off; }

  private:
    std::size_t dd() const { return static_cast<std::size_t>(config.dim) * config.dim; }
    std::size_t dh() const { return static_cast<std::size_t>(config.dim) * hidden(); }
};

TransformerParams make_transformer(const TransformerConfig& config);

// Seeded Gaussian direction of length d (used as the steering vector).
std::vector<double> make_direction(int dim, std::uint64_t seed);

// T x V logits: L blocks, final norm, unembedding transpose.
Matrix forward(const TransformerParams& params, std::span<const int> tokens);

// Adds alpha * v to the residual stream entering block `layer` (or after
// the last block when layer == L), broadcast across positions unless
// last_position_only is set.
Matrix forward_steered(const TransformerParams& params, std::span<const int> tokens, int layer,
                       std::span<const double> direction, double alpha,
                       bool last_position_only = false);

// norm(sign * v) W^T: the prompt-independent logits that steering
// saturates to as alpha grows.
std::vector<double> limit_logits(const TransformerParams& params, std::span<const double> direction,
                                 int sign);

// sup over positions and entries of |softmax(steered row) - softmax(limit)|,
// with the limit side chosen by the sign of alpha.
double softmax_gap(const TransformerParams& params, std::span<const int> tokens, int layer,
                   std::span<const double> direction, double alpha);

struct RemainderProbe {
    std::vector<double> alphas;
    std::vector<double> sup_remainder;  // max |R(alpha) entry| per grid point
    double max_entry = 0.0;
};

// R(alpha) = h^(L, alpha) - h^(layer) - alpha v: everything steering adds
// to the final residual stream beyond the direct shift.
RemainderProbe remainder_bound_probe(const TransformerParams& params, std::span<const int> tokens,
                                     int layer, std::span<const double> direction,
                                     std::span<const double> alpha_grid);

// Mean next-token cross-entropy over a corpus of token sequences.
double corpus_cross_entropy(const TransformerParams& params,
                            const std::vector<std::vector<int>>& sequences);
double steered_corpus_cross_entropy(const TransformerParams& params,
                                    const std::vector<std::vector<int>>& sequences, int layer,
                                    std::span<const double> direction, double alpha);

std::vector<std::vector<int>> sample_sequences(int count, int seq_len, int vocab, std::uint64_t seed);

// Corpus loss and its gradient w.r.t. the flat parameter vector.
double loss_and_gradient(const TransformerParams& params,
                         const std::vector<std::vector<int>>& sequences, std::vector<double>& grad);

// Plain full-batch gradient descent; returns the loss trace (initial loss
// first). Lets the corpus CE at alpha = 0 reflect a fitted model instead
// of random weights.
std::vector<double> train_toy_gd(TransformerParams& params,
                                 const std::vector<std::vector<int>>& sequences, double learning_rate,
                                 int steps);

}  // namespace steerlab
