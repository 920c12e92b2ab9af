#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "steerlab/toy_transformer.hpp"
#include "test_support.hpp"

using namespace steerlab;
using namespace testsupport;

namespace {

TransformerConfig default_config(NormKind kind = NormKind::rmsnorm) {
    TransformerConfig cfg;
    cfg.norm_kind = kind;
    cfg.seed = 40;
    return cfg;
}

}  // namespace

TEST_SUITE("toy_transformer") {

TEST_CASE("rmsnorm fixed points, scale invariance, zero rejection") {
    const std::vector<double> gain(4, 1.0);
    const std::vector<double> ones(4, 1.0);
    CHECK(norm(ones, gain, NormKind::rmsnorm) == ones);

    const std::vector<double> x = {0.3, -1.2, 2.0, 0.7};
    std::vector<double> scaled(x);
    for (double& v : scaled) v *= 1000.0;
    const std::vector<double> nx = norm(x, gain, NormKind::rmsnorm);
    const std::vector<double> ns = norm(scaled, gain, NormKind::rmsnorm);
    for (int i = 0; i < 4; ++i) CHECK(ns[i] == doctest::Approx(nx[i]).epsilon(1e-14));

    CHECK_THROWS_AS(norm(std::vector<double>(4, 0.0), gain, NormKind::rmsnorm), std::domain_error);
}

TEST_CASE("layernorm centers and scales, constant input flattens to zero") {
    const std::vector<double> gain(4, 1.0);
    const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
    const std::vector<double> y = norm(x, gain, NormKind::layernorm);
    double mean = 0.0;
    for (double v : y) mean += v / 4.0;
    CHECK(std::abs(mean) < 1e-14);
    CHECK(y[3] == -y[0]);

    const std::vector<double> flat = norm(std::vector<double>(4, 2.5), gain, NormKind::layernorm);
    for (double v : flat) CHECK(v == 0.0);
}

TEST_CASE("empty stack: logits are the normed embeddings through the unembedding") {
    TransformerConfig cfg = default_config();
    cfg.layers = 0;
    const TransformerParams params = make_transformer(cfg);
    const std::vector<int> tokens = {3, 1, 4};
    const Matrix out = forward(params, tokens);
    REQUIRE(out.rows == 3);
    REQUIRE(out.cols == cfg.vocab);

    const auto gain = params.slice(params.final_gain_off(), cfg.dim);
    const auto embedding = params.slice(params.embedding_off(), static_cast<std::size_t>(cfg.vocab) * cfg.dim);
    for (int t = 0; t < 3; ++t) {
        std::vector<double> row(embedding.begin() + tokens[t] * cfg.dim,
                                embedding.begin() + (tokens[t] + 1) * cfg.dim);
        const std::vector<double> normed = norm(row, gain, cfg.norm_kind);
        for (int z = 0; z < cfg.vocab; ++z) {
            double acc = 0.0;
            for (int c = 0; c < cfg.dim; ++c)
                acc += normed[c] * params.theta[params.unembedding_off() + static_cast<std::size_t>(z) * cfg.dim + c];
            CHECK(out(t, z) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("causal mask: later tokens cannot influence earlier logits") {
    const TransformerParams params = make_transformer(default_config());
    std::vector<int> tokens = {5, 9, 13, 2, 27, 33, 41, 8};
    const Matrix base = forward(params, tokens);
    tokens[5] = 17;  // perturb position 5
    const Matrix perturbed = forward(params, tokens);
    for (int t = 0; t < 5; ++t)
        for (int z = 0; z < base.cols; ++z) CHECK(base(t, z) == perturbed(t, z));
    // and the perturbed position itself changes
    double delta = 0.0;
    for (int z = 0; z < base.cols; ++z) delta = std::max(delta, std::abs(base(5, z) - perturbed(5, z)));
    CHECK(delta > 0.0);
}

TEST_CASE("forward is deterministic and steering with alpha zero is the identity") {
    const TransformerParams params = make_transformer(default_config());
    const std::vector<int> tokens = {1, 2, 3, 4, 5, 6, 7, 8};
    const Matrix a = forward(params, tokens);
    const Matrix b = forward(params, tokens);
    CHECK(a == b);

    const std::vector<double> v = make_direction(params.config.dim, 99);
    const Matrix steered = forward_steered(params, tokens, 1, v, 0.0);
    CHECK(steered == a);
}

TEST_CASE("last-position-only steering leaves earlier logits untouched") {
    const TransformerParams params = make_transformer(default_config());
    const std::vector<int> tokens = {1, 2, 3, 4, 5, 6, 7, 8};
    const std::vector<double> v = make_direction(params.config.dim, 99);
    const Matrix base = forward(params, tokens);
    const Matrix steered = forward_steered(params, tokens, 1, v, 2.0, true);
    for (int t = 0; t + 1 < base.rows; ++t)
        for (int z = 0; z < base.cols; ++z) CHECK(base(t, z) == steered(t, z));
    double delta = 0.0;
    for (int z = 0; z < base.cols; ++z)
        delta = std::max(delta, std::abs(base(base.rows - 1, z) - steered(base.rows - 1, z)));
    CHECK(delta > 0.0);
}

TEST_CASE("limit logits: oddness under rmsnorm, zero direction rejected") {
    const TransformerParams params = make_transformer(default_config());
    const std::vector<double> v = make_direction(params.config.dim, 7);
    const std::vector<double> plus = limit_logits(params, v, 1);
    const std::vector<double> minus = limit_logits(params, v, -1);
    for (std::size_t z = 0; z < plus.size(); ++z)
        CHECK(plus[z] == doctest::Approx(-minus[z]).epsilon(1e-13));

    CHECK_THROWS_AS(limit_logits(params, std::vector<double>(params.config.dim, 0.0), 1),
                    std::domain_error);
    CHECK_THROWS_AS(limit_logits(params, v, 3), std::invalid_argument);
}

TEST_CASE("saturated steering approaches the prompt-free limit under both norms") {
    for (NormKind kind : {NormKind::rmsnorm, NormKind::layernorm}) {
        const TransformerParams params = make_transformer(default_config(kind));
        const std::vector<double> v = make_direction(params.config.dim, 7);
        const std::vector<int> tokens = {4, 8, 15, 16, 23, 42, 3, 9};

        CHECK(softmax_gap(params, tokens, 1, v, 1e6) < 1e-4);
        CHECK(softmax_gap(params, tokens, 1, v, -1e6) < 1e-4);

        // per-entry agreement with the limit softmax at extreme strength
        const Matrix steered = forward_steered(params, tokens, 1, v, 1e8);
        const std::vector<double> limit = softmax(limit_logits(params, v, 1));
        const std::vector<double> p = softmax(steered.row(steered.rows - 1));
        for (std::size_t z = 0; z < p.size(); ++z)
            CHECK(p[z] == doctest::Approx(limit[z]).epsilon(1e-6));
    }
}

TEST_CASE("softmax gap shrinks along the alpha ladder") {
    const TransformerParams params = make_transformer(default_config());
    const std::vector<double> v = make_direction(params.config.dim, 7);
    const std::vector<int> tokens = {10, 20, 30, 40, 5, 6, 7, 8};
    double previous = std::numeric_limits<double>::infinity();
    for (double mag : {1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8}) {
        const double gap = softmax_gap(params, tokens, 1, v, mag);
        CHECK(gap <= previous + 1e-9);
        previous = gap;
    }
}

TEST_CASE("remainder probe: zero when no block follows, bounded otherwise") {
    const TransformerParams params = make_transformer(default_config());
    const std::vector<double> v = make_direction(params.config.dim, 7);
    const std::vector<int> tokens = {1, 3, 5, 7, 9, 11, 13, 15};

    // steering after the last block leaves nothing downstream
    const RemainderProbe after_last =
        remainder_bound_probe(params, tokens, params.config.layers, v, std::vector<double>{1.0, 10.0});
    CHECK(after_last.max_entry < 1e-12);

    const std::vector<double> grid = {1e2, 1e4, 1e6};
    const RemainderProbe probe = remainder_bound_probe(params, tokens, 1, v, grid);
    REQUIRE(probe.sup_remainder.size() == 3);
    CHECK(probe.sup_remainder[2] / probe.sup_remainder[1] <= 1.05);

    std::vector<double> stretched(v);
    for (double& x : stretched) x *= 10.0;
    const RemainderProbe scaled = remainder_bound_probe(params, tokens, 1, stretched, grid);
    CHECK(scaled.sup_remainder[2] / scaled.sup_remainder[1] <= 1.05);

    CHECK_THROWS_AS(remainder_bound_probe(params, tokens, 9, v, grid), std::invalid_argument);
}

TEST_CASE("corpus cross-entropy plateaus at extreme strengths") {
    const TransformerParams params = make_transformer(default_config());
    const std::vector<double> v = make_direction(params.config.dim, 7);
    const auto corpus = sample_sequences(10, 8, params.config.vocab, 11);
    const double base = corpus_cross_entropy(params, corpus);
    CHECK(steered_corpus_cross_entropy(params, corpus, 1, v, 0.0) == doctest::Approx(base).epsilon(1e-14));
    const double lo = steered_corpus_cross_entropy(params, corpus, 1, v, 1e5);
    const double hi = steered_corpus_cross_entropy(params, corpus, 1, v, 1e6);
    CHECK(std::abs(lo - hi) < 1e-3);
}

TEST_CASE("analytic gradient matches finite differences for both norms") {
    for (NormKind kind : {NormKind::rmsnorm, NormKind::layernorm}) {
        TransformerConfig cfg;
        cfg.layers = 2;
        cfg.dim = 4;
        cfg.vocab = 6;
        cfg.seq_len = 4;
        cfg.norm_kind = kind;
        cfg.seed = 13;
        const TransformerParams params = make_transformer(cfg);
        const auto sequences = sample_sequences(2, 4, cfg.vocab, 21);

        std::vector<double> grad;
        const double loss = loss_and_gradient(params, sequences, grad);
        CHECK(loss == doctest::Approx(corpus_cross_entropy(params, sequences)).epsilon(1e-13));

        double worst = 0.0;
        for (std::size_t i = 0; i < params.theta.size(); ++i) {
            const double fd = central_difference(
                [&](double x) {
                    TransformerParams moved = params;
                    moved.theta[i] = x;
                    return corpus_cross_entropy(moved, sequences);
                },
                params.theta[i], 1e-5);
            worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6}));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("gradient descent lowers the corpus loss deterministically") {
    TransformerConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.vocab = 12;
    cfg.seq_len = 6;
    cfg.seed = 17;
    TransformerParams params = make_transformer(cfg);
    const auto sequences = sample_sequences(6, 6, cfg.vocab, 23);

    const std::vector<double> trace = train_toy_gd(params, sequences, 0.5, 60);
    REQUIRE(trace.size() == 61);
    CHECK(trace.back() < trace.front() - 0.05);

    TransformerParams rerun = make_transformer(cfg);
    const std::vector<double> trace2 = train_toy_gd(rerun, sequences, 0.5, 60);
    CHECK(trace2 == trace);
    CHECK(rerun.theta == params.theta);
}

}  // TEST_SUITE
