#include "steerlab/toy_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace steerlab {

namespace {

constexpr double kLayerNormEps = 1e-6;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

// out[p x r] (+)= A[p x q] * B[q x r]
void mm_nn(const double* a, const double* b, double* out, int p, int q, int r, bool accumulate) {
    for (int i = 0; i < p; ++i) {
        double* orow = out + static_cast<std::size_t>(i) * r;
        if (!accumulate)
            for (int j = 0; j < r; ++j) orow[j] = 0.0;
        const double* arow = a + static_cast<std::size_t>(i) * q;
        for (int k = 0; k < q; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(k) * r;
            for (int j = 0; j < r; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[p x r] (+)= A[p x q] * B^T with B[r x q]
void mm_nt(const double* a, const double* b, double* out, int p, int q, int r, bool accumulate) {
    for (int i = 0; i < p; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * q;
        double* orow = out + static_cast<std::size_t>(i) * r;
        for (int j = 0; j < r; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * q;
            double acc = 0.0;
            for (int k = 0; k < q; ++k) acc += arow[k] * brow[k];
            orow[j] = accumulate ? orow[j] + acc : acc;
        }
    }
}

// out[q x r] += A^T * B with A[p x q], B[p x r]
void mm_tn_acc(const double* a, const double* b, double* out, int p, int q, int r) {
    for (int i = 0; i < p; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * q;
        const double* brow = b + static_cast<std::size_t>(i) * r;
        for (int k = 0; k < q; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            double* orow = out + static_cast<std::size_t>(k) * r;
            for (int j = 0; j < r; ++j) orow[j] += av * brow[j];
        }
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }

double gelu_grad(double x) {
    const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
    return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void norm_row(std::span<const double> x, std::span<const double> gain, NormKind kind, double* out) {
    const int d = static_cast<int>(x.size());
    if (kind == NormKind::rmsnorm) {
        double sq = 0.0;
        for (double v : x) sq += v * v;
        if (sq == 0.0) throw std::domain_error("rmsnorm: zero input vector");
        const double scale = std::sqrt(static_cast<double>(d)) / std::sqrt(sq);
        for (int i = 0; i < d; ++i) out[i] = scale * x[static_cast<std::size_t>(i)] * gain[static_cast<std::size_t>(i)];
    } else {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int i = 0; i < d; ++i)
            out[i] = (x[static_cast<std::size_t>(i)] - mean) * inv_std * gain[static_cast<std::size_t>(i)];
    }
}

// Backward of norm_row: accumulates into gx and ggain.
void norm_row_backward(std::span<const double> x, std::span<const double> gain, NormKind kind,
                       const double* gy, double* gx, double* ggain) {
    const int d = static_cast<int>(x.size());
    if (kind == NormKind::rmsnorm) {
        double sq = 0.0;
        for (double v : x) sq += v * v;
        const double n = std::sqrt(sq);
        const double sd = std::sqrt(static_cast<double>(d));
        double dot = 0.0;  // sum_i gy_i * gain_i * x_i
        for (int i = 0; i < d; ++i) dot += gy[i] * gain[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
        for (int i = 0; i < d; ++i) {
            gx[i] += sd * (gy[i] * gain[static_cast<std::size_t>(i)] / n -
                           x[static_cast<std::size_t>(i)] * dot / (n * n * n));
            ggain[i] += gy[i] * sd * x[static_cast<std::size_t>(i)] / n;
        }
    } else {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        double g_mean = 0.0;
        double g_proj = 0.0;
        std::vector<double> xhat(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            xhat[static_cast<std::size_t>(i)] = (x[static_cast<std::size_t>(i)] - mean) * inv_std;
            const double gh = gy[i] * gain[static_cast<std::size_t>(i)];
            g_mean += gh;
            g_proj += gh * xhat[static_cast<std::size_t>(i)];
        }
        g_mean /= static_cast<double>(d);
        g_proj /= static_cast<double>(d);
        for (int i = 0; i < d; ++i) {
            const double gh = gy[i] * gain[static_cast<std::size_t>(i)];
            gx[i] += inv_std * (gh - g_mean - xhat[static_cast<std::size_t>(i)] * g_proj);
            ggain[i] += gy[i] * xhat[static_cast<std::size_t>(i)];
        }
    }
}

struct LayerCache {
    Matrix x_in, x_norm, q, k, vv, att, a_ctx, h_res, y_norm, u1, gu;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Matrix h_final;  // residual after the last block, before the final norm
    Matrix f_norm;
    Matrix logits;
};

void run_forward(const TransformerParams& params, std::span<const int> tokens, int steer_layer,
                 std::span<const double> direction, double alpha, bool last_position_only,
                 ForwardCache& cache) {
    const TransformerConfig& cfg = params.config;
    const int t_len = static_cast<int>(tokens.size());
    const int d = cfg.dim;
    const int hid = params.hidden();
    if (t_len < 1) throw std::invalid_argument("forward: empty token sequence");
    for (int tok : tokens)
        if (tok < 0 || tok >= cfg.vocab) throw std::invalid_argument("forward: token index out of range");
    if (steer_layer >= 0 && static_cast<int>(direction.size()) != d)
        throw std::invalid_argument("forward: steering direction length must equal dim");

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const auto embedding = params.slice(params.embedding_off(), static_cast<std::size_t>(cfg.vocab) * d);

    Matrix x(t_len, d);
    for (int t = 0; t < t_len; ++t)
        for (int c = 0; c < d; ++c)
            x(t, c) = embedding[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)]) * d + c];

    auto apply_steering = [&](Matrix& stream) {
        const int first_row = last_position_only ? t_len - 1 : 0;
        for (int t = first_row; t < t_len; ++t)
            for (int c = 0; c < d; ++c) stream(t, c) += alpha * direction[static_cast<std::size_t>(c)];
    };

    cache.layers.assign(static_cast<std::size_t>(cfg.layers), LayerCache{});
    for (int l = 0; l < cfg.layers; ++l) {
        if (steer_layer == l) apply_steering(x);
        LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
        lc.x_in = x;
        lc.x_norm = Matrix(t_len, d);
        const auto gain_attn = params.slice(params.gain_attn_off(l), static_cast<std::size_t>(d));
        for (int t = 0; t < t_len; ++t)
            norm_row(lc.x_in.row(t), gain_attn, cfg.norm_kind, lc.x_norm.row(t).data());

        lc.q = Matrix(t_len, d);
        lc.k = Matrix(t_len, d);
        lc.vv = Matrix(t_len, d);
        mm_nn(lc.x_norm.data.data(), params.weights_at(params.wq_off(l)), lc.q.data.data(), t_len, d, d, false);
        mm_nn(lc.x_norm.data.data(), params.weights_at(params.wk_off(l)), lc.k.data.data(), t_len, d, d, false);
        mm_nn(lc.x_norm.data.data(), params.weights_at(params.wv_off(l)), lc.vv.data.data(), t_len, d, d, false);

        lc.att = Matrix(t_len, t_len);
        std::vector<double> row(static_cast<std::size_t>(t_len));
        for (int t = 0; t < t_len; ++t) {
            for (int u = 0; u <= t; ++u) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) acc += lc.q(t, c) * lc.k(u, c);
                row[static_cast<std::size_t>(u)] = acc * inv_sqrt_d;
            }
            const std::vector<double> p = softmax({row.data(), static_cast<std::size_t>(t + 1)});
            for (int u = 0; u <= t; ++u) lc.att(t, u) = p[static_cast<std::size_t>(u)];
        }

        lc.a_ctx = Matrix(t_len, d);
        mm_nn(lc.att.data.data(), lc.vv.data.data(), lc.a_ctx.data.data(), t_len, t_len, d, false);

        lc.h_res = lc.x_in;
        mm_nn(lc.a_ctx.data.data(), params.weights_at(params.wo_off(l)), lc.h_res.data.data(), t_len, d, d, true);

        lc.y_norm = Matrix(t_len, d);
        const auto gain_ffn = params.slice(params.gain_ffn_off(l), static_cast<std::size_t>(d));
        for (int t = 0; t < t_len; ++t)
            norm_row(lc.h_res.row(t), gain_ffn, cfg.norm_kind, lc.y_norm.row(t).data());

        lc.u1 = Matrix(t_len, hid);
        mm_nn(lc.y_norm.data.data(), params.weights_at(params.w1_off(l)), lc.u1.data.data(), t_len, d, hid, false);
        lc.gu = Matrix(t_len, hid);
        for (std::size_t i = 0; i < lc.u1.data.size(); ++i) lc.gu.data[i] = gelu(lc.u1.data[i]);

        x = lc.h_res;
        mm_nn(lc.gu.data.data(), params.weights_at(params.w2_off(l)), x.data.data(), t_len, hid, d, true);
    }
    if (steer_layer == cfg.layers) apply_steering(x);

    cache.h_final = x;
    cache.f_norm = Matrix(t_len, d);
    const auto final_gain = params.slice(params.final_gain_off(), static_cast<std::size_t>(d));
    for (int t = 0; t < t_len; ++t)
        norm_row(cache.h_final.row(t), final_gain, cfg.norm_kind, cache.f_norm.row(t).data());

    cache.logits = Matrix(t_len, cfg.vocab);
    mm_nt(cache.f_norm.data.data(), params.weights_at(params.unembedding_off()),
          cache.logits.data.data(), t_len, d, cfg.vocab, false);
}

}  // namespace

const char* to_string(NormKind kind) { return kind == NormKind::rmsnorm ? "rmsnorm" : "layernorm"; }

NormKind norm_kind_from_string(const std::string& name) {
    if (name == "rmsnorm") return NormKind::rmsnorm;
    if (name == "layernorm") return NormKind::layernorm;
    throw std::invalid_argument("unknown norm kind '" + name + "' (expected rmsnorm|layernorm)");
}

std::vector<double> norm(std::span<const double> x, std::span<const double> gain, NormKind kind) {
    if (x.size() != gain.size()) throw std::invalid_argument("norm: gain length must match input");
    std::vector<double> out(x.size());
    norm_row(x, gain, kind, out.data());
    return out;
}

std::size_t TransformerParams::layer_off(int layer) const {
    const std::size_t per_layer = 4 * dd() + 2 * dh() + 2 * static_cast<std::size_t>(config.dim);
    return static_cast<std::size_t>(config.vocab) * config.dim + static_cast<std::size_t>(layer) * per_layer;
}

std::size_t TransformerParams::final_gain_off() const { return layer_off(config.layers); }

std::size_t TransformerParams::unembedding_off() const {
    return final_gain_off() + static_cast<std::size_t>(config.dim);
}

std::size_t TransformerParams::total_params() const {
    return unembedding_off() + static_cast<std::size_t>(config.vocab) * config.dim;
}

TransformerParams make_transformer(const TransformerConfig& config) {
    if (config.layers < 0 || config.dim < 1 || config.vocab < 2 || config.seq_len < 2)
        throw std::invalid_argument("make_transformer: invalid shape");
    TransformerParams params;
    params.config = config;
    params.theta.assign(params.total_params(), 0.0);

    std::mt19937_64 rng(config.seed);
    const double d = static_cast<double>(config.dim);
    const double embed_std = 0.5;
    const double attn_std = 0.5 / std::sqrt(d);
    const double ffn_in_std = 0.5 / std::sqrt(d);
    const double ffn_out_std = 0.5 / std::sqrt(4.0 * d);
    const double unembed_std = 1.0 / std::sqrt(d);

    auto fill = [&](std::size_t off, std::size_t n, double std_dev) {
        auto s = params.slice(off, n);
        for (double& w : s) w = std_dev * gaussian(rng);
    };
    auto ones = [&](std::size_t off, std::size_t n) {
        auto s = params.slice(off, n);
        std::fill(s.begin(), s.end(), 1.0);
    };

    const std::size_t dd = static_cast<std::size_t>(config.dim) * config.dim;
    const std::size_t dh = static_cast<std::size_t>(config.dim) * params.hidden();
    fill(params.embedding_off(), static_cast<std::size_t>(config.vocab) * config.dim, embed_std);
    for (int l = 0; l < config.layers; ++l) {
        fill(params.wq_off(l), dd, attn_std);
        fill(params.wk_off(l), dd, attn_std);
        fill(params.wv_off(l), dd, attn_std);
        fill(params.wo_off(l), dd, attn_std);
        fill(params.w1_off(l), dh, ffn_in_std);
        fill(params.w2_off(l), dh, ffn_out_std);
        ones(params.gain_attn_off(l), static_cast<std::size_t>(config.dim));
        ones(params.gain_ffn_off(l), static_cast<std::size_t>(config.dim));
    }
    ones(params.final_gain_off(), static_cast<std::size_t>(config.dim));
    fill(params.unembedding_off(), static_cast<std::size_t>(config.vocab) * config.dim, unembed_std);
    return params;
}

std::vector<double> make_direction(int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (double& w : v) w = gaussian(rng);
    return v;
}

Matrix forward(const TransformerParams& params, std::span<const int> tokens) {
    ForwardCache cache;
    run_forward(params, tokens, -1, {}, 0.0, false, cache);
    return cache.logits;
}

Matrix forward_steered(const TransformerParams& params, std::span<const int> tokens, int layer,
                       std::span<const double> direction, double alpha, bool last_position_only) {
    if (layer < 0 || layer > params.config.layers)
        throw std::invalid_argument("forward_steered: layer must lie in [0, L]");
    ForwardCache cache;
    run_forward(params, tokens, layer, direction, alpha, last_position_only, cache);
    return cache.logits;
}

std::vector<double> limit_logits(const TransformerParams& params, std::span<const double> direction,
                                 int sign) {
    if (sign != 1 && sign != -1) throw std::invalid_argument("limit_logits: sign must be +1 or -1");
    double sq = 0.0;
    for (double v : direction) sq += v * v;
    if (sq == 0.0) throw std::domain_error("limit_logits: zero steering direction");
    std::vector<double> signed_dir(direction.begin(), direction.end());
    if (sign < 0)
        for (double& v : signed_dir) v = -v;
    const auto final_gain = params.slice(params.final_gain_off(), static_cast<std::size_t>(params.config.dim));
    const std::vector<double> normed = norm(signed_dir, final_gain, params.config.norm_kind);
    std::vector<double> out(static_cast<std::size_t>(params.config.vocab), 0.0);
    mm_nt(normed.data(), params.weights_at(params.unembedding_off()), out.data(), 1,
          params.config.dim, params.config.vocab, false);
    return out;
}

double softmax_gap(const TransformerParams& params, std::span<const int> tokens, int layer,
                   std::span<const double> direction, double alpha) {
    if (alpha == 0.0) throw std::invalid_argument("softmax_gap: alpha must be nonzero");
    const std::vector<double> limit = softmax(limit_logits(params, direction, alpha > 0.0 ? 1 : -1));
    const Matrix steered = forward_steered(params, tokens, layer, direction, alpha);
    double gap = 0.0;
    for (int t = 0; t < steered.rows; ++t) {
        const std::vector<double> p = softmax(steered.row(t));
        for (int z = 0; z < steered.cols; ++z)
            gap = std::max(gap, std::abs(p[static_cast<std::size_t>(z)] - limit[static_cast<std::size_t>(z)]));
    }
    return gap;
}

RemainderProbe remainder_bound_probe(const TransformerParams& params, std::span<const int> tokens,
                                     int layer, std::span<const double> direction,
                                     std::span<const double> alpha_grid) {
    if (layer < 0 || layer > params.config.layers)
        throw std::invalid_argument("remainder_bound_probe: layer must lie in [0, L]");
    ForwardCache base;
    run_forward(params, tokens, -1, {}, 0.0, false, base);
    const Matrix& stream_at_layer =
        layer == params.config.layers ? base.h_final : base.layers[static_cast<std::size_t>(layer)].x_in;

    RemainderProbe probe;
    probe.alphas.assign(alpha_grid.begin(), alpha_grid.end());
    probe.sup_remainder.reserve(alpha_grid.size());
    for (double alpha : alpha_grid) {
        ForwardCache steered;
        run_forward(params, tokens, layer, direction, alpha, false, steered);
        double sup = 0.0;
        for (int t = 0; t < steered.h_final.rows; ++t)
            for (int c = 0; c < steered.h_final.cols; ++c) {
                const double r = steered.h_final(t, c) - stream_at_layer(t, c) -
                                 alpha * direction[static_cast<std::size_t>(c)];
                sup = std::max(sup, std::abs(r));
            }
        probe.sup_remainder.push_back(sup);
        probe.max_entry = std::max(probe.max_entry, sup);
    }
    return probe;
}

namespace {

double sequence_ce(const Matrix& logits, std::span<const int> tokens) {
    double loss = 0.0;
    for (int t = 0; t + 1 < static_cast<int>(tokens.size()); ++t) {
        const auto row = logits.row(t);
        const double lse = log_sum_exp(row);
        loss -= row[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t) + 1])] - lse;
    }
    return loss;
}

}  // namespace

namespace {

std::size_t count_predictions(const std::vector<std::vector<int>>& sequences) {
    std::size_t predictions = 0;
    for (const auto& seq : sequences) {
        if (seq.size() < 2) throw std::invalid_argument("corpus sequences need at least two tokens");
        predictions += seq.size() - 1;
    }
    if (predictions == 0) throw std::invalid_argument("corpus is empty");
    return predictions;
}

}  // namespace

double corpus_cross_entropy(const TransformerParams& params,
                            const std::vector<std::vector<int>>& sequences) {
    const std::size_t predictions = count_predictions(sequences);
    double loss = 0.0;
    for (const auto& seq : sequences) loss += sequence_ce(forward(params, seq), seq);
    return loss / static_cast<double>(predictions);
}

double steered_corpus_cross_entropy(const TransformerParams& params,
                                    const std::vector<std::vector<int>>& sequences, int layer,
                                    std::span<const double> direction, double alpha) {
    const std::size_t predictions = count_predictions(sequences);
    double loss = 0.0;
    for (const auto& seq : sequences)
        loss += sequence_ce(forward_steered(params, seq, layer, direction, alpha), seq);
    return loss / static_cast<double>(predictions);
}

std::vector<std::vector<int>> sample_sequences(int count, int seq_len, int vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(count));
    for (auto& seq : out) {
        seq.resize(static_cast<std::size_t>(seq_len));
        for (int& tok : seq) tok = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(vocab)));
    }
    return out;
}

double loss_and_gradient(const TransformerParams& params,
                         const std::vector<std::vector<int>>& sequences, std::vector<double>& grad) {
    const TransformerConfig& cfg = params.config;
    const int d = cfg.dim;
    const int hid = params.hidden();
    grad.assign(params.total_params(), 0.0);
    const double weight = 1.0 / static_cast<double>(count_predictions(sequences));

    double loss = 0.0;
    for (const auto& seq : sequences) {
        ForwardCache cache;
        run_forward(params, seq, -1, {}, 0.0, false, cache);
        const int t_len = static_cast<int>(seq.size());
        loss += weight * sequence_ce(cache.logits, seq);

        // d(loss)/d(logits)
        Matrix dlogits(t_len, cfg.vocab);
        for (int t = 0; t + 1 < t_len; ++t) {
            const std::vector<double> p = softmax(cache.logits.row(t));
            for (int z = 0; z < cfg.vocab; ++z) dlogits(t, z) = weight * p[static_cast<std::size_t>(z)];
            dlogits(t, seq[static_cast<std::size_t>(t) + 1]) -= weight;
        }

        // unembedding and final norm
        Matrix df_norm(t_len, d);
        mm_nn(dlogits.data.data(), params.weights_at(params.unembedding_off()), df_norm.data.data(),
              t_len, cfg.vocab, d, false);
        mm_tn_acc(dlogits.data.data(), cache.f_norm.data.data(),
                  grad.data() + params.unembedding_off(), t_len, cfg.vocab, d);

        Matrix dx(t_len, d);
        const auto final_gain = params.slice(params.final_gain_off(), static_cast<std::size_t>(d));
        for (int t = 0; t < t_len; ++t)
            norm_row_backward(cache.h_final.row(t), final_gain, cfg.norm_kind, df_norm.row(t).data(),
                              dx.row(t).data(), grad.data() + params.final_gain_off());

        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        for (int l = cfg.layers - 1; l >= 0; --l) {
            const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
            // dx is d(loss)/d(x_out); x_out = h_res + gelu(u1) W2
            Matrix dgu(t_len, hid);
            mm_nt(dx.data.data(), params.weights_at(params.w2_off(l)), dgu.data.data(), t_len, d, hid,
                  false);
            mm_tn_acc(lc.gu.data.data(), dx.data.data(), grad.data() + params.w2_off(l), t_len, hid, d);

            Matrix du1(t_len, hid);
            for (std::size_t i = 0; i < du1.data.size(); ++i)
                du1.data[i] = dgu.data[i] * gelu_grad(lc.u1.data[i]);

            Matrix dy_norm(t_len, d);
            mm_nt(du1.data.data(), params.weights_at(params.w1_off(l)), dy_norm.data.data(), t_len,
                  hid, d, false);
            mm_tn_acc(lc.y_norm.data.data(), du1.data.data(), grad.data() + params.w1_off(l), t_len, d, hid);

            Matrix dh_res = dx;  // residual path around the feed-forward
            const auto gain_ffn = params.slice(params.gain_ffn_off(l), static_cast<std::size_t>(d));
            for (int t = 0; t < t_len; ++t)
                norm_row_backward(lc.h_res.row(t), gain_ffn, cfg.norm_kind, dy_norm.row(t).data(),
                                  dh_res.row(t).data(), grad.data() + params.gain_ffn_off(l));

            // h_res = x_in + a_ctx Wo
            Matrix da_ctx(t_len, d);
            mm_nt(dh_res.data.data(), params.weights_at(params.wo_off(l)), da_ctx.data.data(), t_len,
                  d, d, false);
            mm_tn_acc(lc.a_ctx.data.data(), dh_res.data.data(), grad.data() + params.wo_off(l), t_len, d, d);

            // a_ctx = att vv
            Matrix datt(t_len, t_len);
            mm_nt(da_ctx.data.data(), lc.vv.data.data(), datt.data.data(), t_len, d, t_len, false);
            Matrix dvv(t_len, d);
            mm_tn_acc(lc.att.data.data(), da_ctx.data.data(), dvv.data.data(), t_len, t_len, d);

            // masked softmax rows
            Matrix dscores(t_len, t_len);
            for (int t = 0; t < t_len; ++t) {
                double dot = 0.0;
                for (int u = 0; u <= t; ++u) dot += datt(t, u) * lc.att(t, u);
                for (int u = 0; u <= t; ++u) dscores(t, u) = lc.att(t, u) * (datt(t, u) - dot);
            }

            Matrix dq(t_len, d);
            Matrix dk(t_len, d);
            for (int t = 0; t < t_len; ++t)
                for (int u = 0; u <= t; ++u) {
                    const double s = dscores(t, u) * inv_sqrt_d;
                    for (int c = 0; c < d; ++c) {
                        dq(t, c) += s * lc.k(u, c);
                        dk(u, c) += s * lc.q(t, c);
                    }
                }

            Matrix dx_norm(t_len, d);
            mm_nt(dq.data.data(), params.weights_at(params.wq_off(l)), dx_norm.data.data(), t_len, d,
                  d, false);
            mm_nt(dk.data.data(), params.weights_at(params.wk_off(l)), dx_norm.data.data(), t_len, d,
                  d, true);
            mm_nt(dvv.data.data(), params.weights_at(params.wv_off(l)), dx_norm.data.data(), t_len, d,
                  d, true);
            mm_tn_acc(lc.x_norm.data.data(), dq.data.data(), grad.data() + params.wq_off(l), t_len, d, d);
            mm_tn_acc(lc.x_norm.data.data(), dk.data.data(), grad.data() + params.wk_off(l), t_len, d, d);
            mm_tn_acc(lc.x_norm.data.data(), dvv.data.data(), grad.data() + params.wv_off(l), t_len, d, d);

            dx = dh_res;  // residual path around attention
            const auto gain_attn = params.slice(params.gain_attn_off(l), static_cast<std::size_t>(d));
            for (int t = 0; t < t_len; ++t)
                norm_row_backward(lc.x_in.row(t), gain_attn, cfg.norm_kind, dx_norm.row(t).data(),
                                  dx.row(t).data(), grad.data() + params.gain_attn_off(l));
        }

        double* embed_grad = grad.data() + params.embedding_off();
        for (int t = 0; t < t_len; ++t)
            for (int c = 0; c < d; ++c)
                embed_grad[static_cast<std::size_t>(seq[static_cast<std::size_t>(t)]) * d + c] += dx(t, c);
    }
    return loss;
}

std::vector<double> train_toy_gd(TransformerParams& params,
                                 const std::vector<std::vector<int>>& sequences, double learning_rate,
                                 int steps) {
    if (learning_rate <= 0.0) throw std::invalid_argument("train_toy_gd: learning_rate must be positive");
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(steps) + 1);
    std::vector<double> grad;
    for (int step = 0; step <= steps; ++step) {
        const double loss = loss_and_gradient(params, sequences, grad);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_toy_gd: non-finite loss at step " + std::to_string(step));
        trace.push_back(loss);
        if (step == steps) break;
        for (std::size_t i = 0; i < params.theta.size(); ++i) params.theta[i] -= learning_rate * grad[i];
    }
    return trace;
}

}  // namespace steerlab
