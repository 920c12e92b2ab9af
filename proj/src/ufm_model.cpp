#include "steerlab/ufm_model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace steerlab {

UfmParams analytic_perfect_fit(const DatasetSpec& ds) {
    const int v = ds.partition.vocab_size;
    const int m = ds.num_contexts();
    UfmParams params;
    params.vocab_size = v;
    params.dim = v;
    params.num_contexts = m;
    params.decoder = Matrix::identity(v);
    params.embeddings = Matrix(v, m);
    for (int j = 0; j < m; ++j) {
        const std::vector<double> p = next_token_distribution(ds, j);
        for (int z = 0; z < v; ++z) params.embeddings(z, j) = std::log(p[static_cast<std::size_t>(z)]);
    }
    return params;
}

std::vector<double> logits(const UfmParams& params, int context_index) {
    if (context_index < 0 || context_index >= params.num_contexts)
        throw std::out_of_range("logits: context index " + std::to_string(context_index));
    const std::vector<double> h = params.embedding(context_index);
    return mat_vec(params.decoder, h);
}

double cross_entropy_of_logits(const std::vector<std::vector<double>>& logit_columns,
                               const DatasetSpec& ds) {
    if (static_cast<int>(logit_columns.size()) != ds.num_contexts())
        throw std::invalid_argument("cross_entropy_of_logits: one logit column per context required");
    double loss = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        const std::vector<double>& lj = logit_columns[static_cast<std::size_t>(j)];
        const double lse = log_sum_exp(lj);
        const std::vector<double> p = next_token_distribution(ds, j);
        double acc = 0.0;
        for (int z = 0; z < ds.partition.vocab_size; ++z)
            acc += p[static_cast<std::size_t>(z)] * (lj[static_cast<std::size_t>(z)] - lse);
        loss -= ds.context_weights[static_cast<std::size_t>(j)] * acc;
    }
    return loss;
}

double cross_entropy(const UfmParams& params, const DatasetSpec& ds) {
    std::vector<std::vector<double>> cols;
    cols.reserve(static_cast<std::size_t>(params.num_contexts));
    for (int j = 0; j < params.num_contexts; ++j) cols.push_back(logits(params, j));
    return cross_entropy_of_logits(cols, ds);
}

std::vector<double> ce_embedding_gradient(const UfmParams& params, const DatasetSpec& ds,
                                          int context_index) {
    const std::vector<double> lj = logits(params, context_index);
    const std::vector<double> sigma = softmax(lj);
    const std::vector<double> p = next_token_distribution(ds, context_index);
    const double pi = ds.context_weights[static_cast<std::size_t>(context_index)];
    std::vector<double> grad(static_cast<std::size_t>(params.dim), 0.0);
    for (int z = 0; z < params.vocab_size; ++z) {
        const double r = pi * (sigma[static_cast<std::size_t>(z)] - p[static_cast<std::size_t>(z)]);
        for (int c = 0; c < params.dim; ++c) grad[static_cast<std::size_t>(c)] += r * params.decoder(z, c);
    }
    return grad;
}

GdResult train_gd(const DatasetSpec& ds, const GdOptions& options) {
    if (options.learning_rate <= 0.0) throw std::invalid_argument("train_gd: learning_rate must be positive");
    if (options.steps < 0) throw std::invalid_argument("train_gd: steps must be nonnegative");
    const int v = ds.partition.vocab_size;
    const int m = ds.num_contexts();
    const int d = options.dim > 0 ? options.dim : v;

    UfmParams params;
    params.vocab_size = v;
    params.dim = d;
    params.num_contexts = m;
    params.decoder = Matrix(v, d);
    params.embeddings = Matrix(d, m);
    std::mt19937_64 rng(options.seed);
    for (double& w : params.decoder.data) w = options.init_scale * gaussian(rng);
    for (double& h : params.embeddings.data) h = options.init_scale * gaussian(rng);

    std::vector<std::vector<double>> target;
    target.reserve(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) target.push_back(next_token_distribution(ds, j));

    GdResult result;
    result.loss_trace.reserve(static_cast<std::size_t>(options.steps) + 1);

    Matrix grad_w(v, d);
    Matrix grad_h(d, m);
    for (int step = 0; step <= options.steps; ++step) {
        std::fill(grad_w.data.begin(), grad_w.data.end(), 0.0);
        std::fill(grad_h.data.begin(), grad_h.data.end(), 0.0);
        double loss = 0.0;
        for (int j = 0; j < m; ++j) {
            const std::vector<double> h = params.embeddings.column(j);
            const std::vector<double> lj = mat_vec(params.decoder, h);
            const double lse = log_sum_exp(lj);
            const std::vector<double> sigma = softmax(lj);
            const double pi = ds.context_weights[static_cast<std::size_t>(j)];
            const std::vector<double>& p = target[static_cast<std::size_t>(j)];
            for (int z = 0; z < v; ++z) {
                loss -= pi * p[static_cast<std::size_t>(z)] * (lj[static_cast<std::size_t>(z)] - lse);
                const double r = pi * (sigma[static_cast<std::size_t>(z)] - p[static_cast<std::size_t>(z)]);
                for (int c = 0; c < d; ++c) {
                    grad_w(z, c) += r * h[static_cast<std::size_t>(c)];
                    grad_h(c, j) += r * params.decoder(z, c);
                }
            }
        }
        if (!std::isfinite(loss))
            throw TrainingDivergedError(step, "train_gd: non-finite loss at step " + std::to_string(step));
        result.loss_trace.push_back(loss);
        if (step == options.steps) break;
        for (std::size_t i = 0; i < params.decoder.data.size(); ++i)
            params.decoder.data[i] -= options.learning_rate * grad_w.data[i];
        for (std::size_t i = 0; i < params.embeddings.data.size(); ++i)
            params.embeddings.data[i] -= options.learning_rate * grad_h.data[i];
    }
    result.params = std::move(params);
    return result;
}

nlohmann::json ufm_to_json(const UfmParams& params) {
    nlohmann::json j;
    j["V"] = params.vocab_size;
    j["d"] = params.dim;
    j["m"] = params.num_contexts;
    j["W"] = params.decoder.data;
    j["H"] = params.embeddings.data;
    return j;
}

UfmParams ufm_from_json(const nlohmann::json& j) {
    UfmParams params;
    params.vocab_size = j.at("V").get<int>();
    params.dim = j.at("d").get<int>();
    params.num_contexts = j.at("m").get<int>();
    params.decoder = Matrix(params.vocab_size, params.dim);
    params.decoder.data = j.at("W").get<std::vector<double>>();
    params.embeddings = Matrix(params.dim, params.num_contexts);
    params.embeddings.data = j.at("H").get<std::vector<double>>();
    if (params.decoder.data.size() != static_cast<std::size_t>(params.vocab_size) * params.dim ||
        params.embeddings.data.size() != static_cast<std::size_t>(params.dim) * params.num_contexts)
        throw std::invalid_argument("ufm_from_json: matrix payload size mismatch");
    return params;
}

void write_loss_trace_csv(const std::string& path, const std::vector<double>& trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_loss_trace_csv: cannot open " + path);
    out << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", trace[i]);
        out << i << ',' << buf << '\n';
    }
}

}  // namespace steerlab
