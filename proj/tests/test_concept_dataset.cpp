#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "test_support.hpp"

using namespace steerlab;
using namespace testsupport;

TEST_SUITE("concept_dataset") {

TEST_CASE("build_partition assigns contiguous blocks") {
    const ConceptPartition p = build_partition(9, 3);
    CHECK(p.concept_size == 3);
    CHECK(p.concept_of(0) == 0);
    CHECK(p.concept_of(3) == 1);  // fourth token belongs to the second concept
    CHECK(p.concept_of(8) == 2);
    CHECK(p.first_token(1) == 3);
}

TEST_CASE("build_partition single group and rejections") {
    const ConceptPartition p = build_partition(4, 1);
    CHECK(p.concept_size == 4);
    for (int z = 0; z < 4; ++z) CHECK(p.concept_of(z) == 0);

    CHECK_THROWS_AS(build_partition(12, 5), std::invalid_argument);
    CHECK_THROWS_AS(build_partition(0, 3), std::invalid_argument);
    CHECK_THROWS_AS(build_partition(9, 0), std::invalid_argument);
}

TEST_CASE("symmetric_probs canonical values") {
    const ConceptPartition p = build_partition(9, 3);
    const ConceptProbs probs = symmetric_probs(p, 0.1);
    for (int z = 0; z < 9; ++z) {
        CHECK(probs.in_concept[z] == doctest::Approx(0.3).epsilon(1e-14));
        CHECK(probs.off_concept[z] == doctest::Approx(1.0 / 60.0).epsilon(1e-14));
    }
}

TEST_CASE("symmetric_probs near the upper end of the interval") {
    const ConceptPartition p = build_partition(9, 3);
    // 0.6 < 2/3 is still valid and keeps a > b
    const ConceptProbs probs = symmetric_probs(p, 0.6);
    CHECK(probs.in_concept[0] == doctest::Approx(0.4 / 3.0).epsilon(1e-14));
    CHECK(probs.off_concept[0] == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(probs.in_concept[0] > probs.off_concept[0]);

    CHECK_THROWS_AS(symmetric_probs(p, 2.0 / 3.0), std::invalid_argument);
    CHECK_THROWS_AS(symmetric_probs(p, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(symmetric_probs(p, -0.05), std::invalid_argument);
}

TEST_CASE("symmetric_probs single group is the uniform distribution") {
    const ConceptPartition p = build_partition(4, 1);
    const ConceptProbs probs = symmetric_probs(p, 0.0);
    for (int z = 0; z < 4; ++z) CHECK(probs.in_concept[z] == doctest::Approx(0.25));
    CHECK_THROWS_AS(symmetric_probs(p, 0.1), std::invalid_argument);
}

TEST_CASE("weighted_probs with uniform weights reduces to symmetric") {
    const ConceptPartition p = build_partition(9, 3);
    const std::vector<double> uniform(9, 1.0 / 3.0);
    const ConceptProbs weighted = weighted_probs(p, 0.1, uniform, uniform);
    const ConceptProbs symmetric = symmetric_probs(p, 0.1);
    for (int z = 0; z < 9; ++z) {
        CHECK(weighted.in_concept[z] == doctest::Approx(symmetric.in_concept[z]).epsilon(1e-15));
        CHECK(weighted.off_concept[z] == doctest::Approx(symmetric.off_concept[z]).epsilon(1e-15));
    }
}

TEST_CASE("weighted_probs skewed weights and rejections") {
    const ConceptPartition p = build_partition(9, 3);
    std::vector<double> gamma(9), omega(9, 1.0 / 3.0);
    const double pattern[3] = {0.5, 0.3, 0.2};
    for (int z = 0; z < 9; ++z) gamma[z] = pattern[z % 3];
    const ConceptProbs probs = weighted_probs(p, 0.1, gamma, omega);
    CHECK(probs.in_concept[0] == doctest::Approx(0.45).epsilon(1e-14));
    CHECK(probs.in_concept[1] == doctest::Approx(0.27).epsilon(1e-14));
    CHECK(probs.in_concept[2] == doctest::Approx(0.18).epsilon(1e-14));
    for (int z = 0; z < 9; ++z) CHECK(probs.in_concept[z] > probs.off_concept[z]);

    // a skewed gamma entry paired with a heavy omega entry at large eps
    // pushes a_z below b_z
    std::vector<double> bad_gamma(9), bad_omega(9);
    const double gpat[3] = {0.98, 0.01, 0.01};
    const double opat[3] = {0.9, 0.05, 0.05};
    for (int z = 0; z < 9; ++z) {
        bad_gamma[z] = gpat[z % 3];
        bad_omega[z] = opat[z % 3];
    }
    CHECK_THROWS_AS(weighted_probs(p, 0.6, bad_gamma, bad_omega), std::invalid_argument);

    std::vector<double> unnormalized(9, 0.5);
    CHECK_THROWS_AS(weighted_probs(p, 0.1, unnormalized, omega), std::invalid_argument);
}

TEST_CASE("enumerate_contexts is pure, distinct, and seeded") {
    const ConceptPartition p = build_partition(9, 3);
    const std::vector<Context> contexts = enumerate_contexts(p, 4, 4, 7);
    CHECK(contexts.size() == 12);
    std::set<std::vector<int>> seen;
    for (const Context& c : contexts) {
        CHECK(c.tokens.size() == 3);
        for (int t : c.tokens) CHECK(p.concept_of(t) == c.concept_label);
        CHECK(seen.insert(c.tokens).second);
    }
    CHECK(enumerate_contexts(p, 4, 4, 7) == contexts);         // same seed, same list
    CHECK(enumerate_contexts(p, 4, 4, 8) != contexts);         // fresh seed reshuffles

    CHECK_NOTHROW(enumerate_contexts(p, 4, 27, 7));            // exactly s^(T-1)
    CHECK_THROWS_AS(enumerate_contexts(p, 4, 28, 7), std::invalid_argument);
}

TEST_CASE("next_token_distribution matches the two-level profile") {
    const DatasetSpec ds = canonical_dataset();
    const int j = first_context_of_concept(ds, 0);
    const std::vector<double> p = next_token_distribution(ds, j);
    for (int z = 0; z < 3; ++z) CHECK(p[z] == doctest::Approx(0.3).epsilon(1e-14));
    for (int z = 3; z < 9; ++z) CHECK(p[z] == doctest::Approx(1.0 / 60.0).epsilon(1e-14));

    double total = 0.0;
    for (double v : p) total += v;
    CHECK(std::abs(total - 1.0) < 1e-12);

    // distributions depend on the context only through its concept
    const int j2 = first_context_of_concept(ds, 1);
    const int j3 = j2 + 1;
    REQUIRE(ds.contexts[j3].concept_label == 1);
    CHECK(next_token_distribution(ds, j2) == next_token_distribution(ds, j3));

    CHECK_THROWS_AS(next_token_distribution(ds, 99), std::out_of_range);
}

TEST_CASE("dataset_entropy against the direct-summation oracle") {
    const DatasetSpec ds = canonical_dataset();
    const double h = dataset_entropy(ds);
    CHECK(h == doctest::Approx(entropy_oracle(ds)).epsilon(1e-13));
    CHECK(h == doctest::Approx(kCanonicalEntropy).epsilon(1e-12));
}

TEST_CASE("dataset_entropy limiting cases") {
    // G = V with tiny smoothing: nearly deterministic, entropy near zero
    const ConceptPartition p = build_partition(9, 9);
    const ConceptProbs probs = symmetric_probs(p, 1e-8);
    std::vector<Context> contexts = enumerate_contexts(p, 2, 1, 3);
    const DatasetSpec tiny = make_dataset(p, probs, std::move(contexts), {}, 2, {});
    CHECK(dataset_entropy(tiny) < 1e-6);

    // single concept: uniform distribution, entropy log V
    const ConceptPartition whole = build_partition(4, 1);
    const ConceptProbs uniform = symmetric_probs(whole, 0.0);
    std::vector<Context> ctx = enumerate_contexts(whole, 3, 2, 3);
    ProbProvenance prov;
    prov.kind = ProbProvenance::Kind::symmetric;
    prov.epsilon = 0.0;
    const DatasetSpec flat = make_dataset(whole, uniform, std::move(ctx), {}, 3, prov);
    CHECK(dataset_entropy(flat) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("make_dataset validation") {
    const ConceptPartition p = build_partition(9, 3);
    const ConceptProbs probs = symmetric_probs(p, 0.1);

    // context mixing two concepts
    std::vector<Context> mixed = enumerate_contexts(p, 4, 1, 5);
    mixed[0].tokens[1] = 5;  // concept 1 token into a concept-0 context
    CHECK_THROWS_AS(make_dataset(p, probs, mixed, {}, 4, {}), std::invalid_argument);

    // wrong weight vector
    std::vector<Context> contexts = enumerate_contexts(p, 4, 1, 5);
    CHECK_THROWS_AS(make_dataset(p, probs, contexts, {0.5, 0.2, 0.2}, 4, {}), std::invalid_argument);
    CHECK_THROWS_AS(make_dataset(p, probs, contexts, {0.5, 0.3, 0.3}, 4, {}), std::invalid_argument);
}

TEST_CASE("json round trip preserves the dataset") {
    for (const DatasetSpec& ds : {canonical_dataset(), weighted_dataset()}) {
        const DatasetSpec back = dataset_from_json(dataset_to_json(ds));
        CHECK(back.in_concept_prob == ds.in_concept_prob);
        CHECK(back.off_concept_prob == ds.off_concept_prob);
        CHECK(back.contexts == ds.contexts);
        CHECK(back.context_weights == ds.context_weights);
        CHECK(back.sequence_length == ds.sequence_length);
        CHECK(back.provenance == ds.provenance);
    }
}

TEST_CASE("random instances keep normalization and the a > b margin") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const int g = 2 + static_cast<int>(uniform_below(rng, 4));
        const int s = 1 + static_cast<int>(uniform_below(rng, 4));
        const double upper = static_cast<double>(g - 1) / g;
        const double eps = upper * (0.05 + 0.9 * uniform_unit(rng));
        const ConceptPartition p = build_partition(g * s, g);
        const ConceptProbs probs = symmetric_probs(p, eps);
        std::vector<Context> contexts = enumerate_contexts(p, 3, 1, rng());
        const DatasetSpec ds = make_dataset(p, probs, std::move(contexts), {}, 3, {});
        for (int j = 0; j < ds.num_contexts(); ++j) {
            const std::vector<double> pj = next_token_distribution(ds, j);
            double total = 0.0;
            for (double v : pj) total += v;
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
        for (int z = 0; z < g * s; ++z)
            CHECK(ds.in_concept_prob[z] > ds.off_concept_prob[z]);
    }
}

}  // TEST_SUITE
