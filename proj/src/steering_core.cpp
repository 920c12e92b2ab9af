#include "steerlab/steering_core.hpp"

#include <algorithm>
#include <cmath>

namespace steerlab {

const char* to_string(NegativeMode mode) {
    return mode == NegativeMode::contrastive ? "contrastive" : "random";
}

NegativeMode negative_mode_from_string(const std::string& name) {
    if (name == "contrastive") return NegativeMode::contrastive;
    if (name == "random") return NegativeMode::random_sample;
    throw std::invalid_argument("unknown negative mode '" + name + "' (expected contrastive|random)");
}

IndexSets build_index_sets(const DatasetSpec& ds, int target_concept, NegativeMode mode,
                           int pair_count, std::uint64_t seed, int opposite_concept) {
    const int g = ds.partition.group_count;
    if (target_concept < 0 || target_concept >= g)
        throw std::invalid_argument("build_index_sets: target concept out of range");
    if (pair_count < 1) throw std::invalid_argument("build_index_sets: pair_count must be at least 1");
    if (g < 2) throw std::invalid_argument("build_index_sets: needs at least two concepts");

    std::vector<int> target_pool;
    std::vector<int> negative_pool;
    if (opposite_concept < 0 && mode == NegativeMode::contrastive)
        opposite_concept = (target_concept + 1) % g;
    if (mode == NegativeMode::contrastive && opposite_concept == target_concept)
        throw std::invalid_argument("build_index_sets: opposite concept equals target");

    for (int j = 0; j < ds.num_contexts(); ++j) {
        const int label = ds.contexts[static_cast<std::size_t>(j)].concept_label;
        if (label == target_concept) {
            target_pool.push_back(j);
        } else if (mode == NegativeMode::random_sample || label == opposite_concept) {
            negative_pool.push_back(j);
        }
    }
    if (static_cast<int>(target_pool.size()) < pair_count)
        throw std::invalid_argument("build_index_sets: only " + std::to_string(target_pool.size()) +
                                    " target-concept contexts available, need " + std::to_string(pair_count));
    if (static_cast<int>(negative_pool.size()) < pair_count)
        throw std::invalid_argument("build_index_sets: only " + std::to_string(negative_pool.size()) +
                                    " negative contexts available, need " + std::to_string(pair_count));

    std::mt19937_64 rng(seed);
    IndexSets sets;
    for (int i : sample_without_replacement(static_cast<int>(target_pool.size()), pair_count, rng))
        sets.positive.push_back(target_pool[static_cast<std::size_t>(i)]);
    for (int i : sample_without_replacement(static_cast<int>(negative_pool.size()), pair_count, rng))
        sets.negative.push_back(negative_pool[static_cast<std::size_t>(i)]);
    std::sort(sets.positive.begin(), sets.positive.end());
    std::sort(sets.negative.begin(), sets.negative.end());
    return sets;
}

std::vector<double> steering_vector(const UfmParams& params, const IndexSets& sets) {
    if (sets.positive.empty() || sets.positive.size() != sets.negative.size())
        throw std::invalid_argument("steering_vector: P and N must be nonempty and equal-sized");
    for (const std::vector<int>* side : {&sets.positive, &sets.negative})
        for (int j : *side)
            if (j < 0 || j >= params.num_contexts)
                throw std::out_of_range("steering_vector: context index " + std::to_string(j));
    std::vector<double> v(static_cast<std::size_t>(params.dim), 0.0);
    const double inv_q = 1.0 / static_cast<double>(sets.pair_count());
    for (int j : sets.positive)
        for (int c = 0; c < params.dim; ++c) v[static_cast<std::size_t>(c)] += inv_q * params.embeddings(c, j);
    for (int j : sets.negative)
        for (int c = 0; c < params.dim; ++c) v[static_cast<std::size_t>(c)] -= inv_q * params.embeddings(c, j);
    return v;
}

std::vector<double> steered_logits(const UfmParams& params, std::span<const double> direction,
                                   int context_index, double alpha) {
    if (static_cast<int>(direction.size()) != params.dim)
        throw std::invalid_argument("steered_logits: direction length must equal d");
    std::vector<double> h = params.embedding(context_index);
    for (int c = 0; c < params.dim; ++c) h[static_cast<std::size_t>(c)] += alpha * direction[static_cast<std::size_t>(c)];
    return mat_vec(params.decoder, h);
}

bool LogOddsProfile::attains_max(int z) const {
    return std::binary_search(argmax_set.begin(), argmax_set.end(), z);
}

bool LogOddsProfile::attains_min(int z) const {
    return std::binary_search(argmin_set.begin(), argmin_set.end(), z);
}

LogOddsProfile log_odds(const DatasetSpec& ds, const IndexSets& sets, double tie_tolerance) {
    if (sets.positive.empty() || sets.positive.size() != sets.negative.size())
        throw std::invalid_argument("log_odds: P and N must be nonempty and equal-sized");
    const int v = ds.partition.vocab_size;
    const double inv_q = 1.0 / static_cast<double>(sets.pair_count());

    LogOddsProfile profile;
    profile.tie_tolerance = tie_tolerance;
    profile.values.assign(static_cast<std::size_t>(v), 0.0);
    for (std::size_t k = 0; k < sets.positive.size(); ++k) {
        const std::vector<double> pp = next_token_distribution(ds, sets.positive[k]);
        const std::vector<double> pn = next_token_distribution(ds, sets.negative[k]);
        for (int z = 0; z < v; ++z)
            profile.values[static_cast<std::size_t>(z)] +=
                inv_q * (std::log(pp[static_cast<std::size_t>(z)]) - std::log(pn[static_cast<std::size_t>(z)]));
    }

    profile.max_value = *std::max_element(profile.values.begin(), profile.values.end());
    profile.min_value = *std::min_element(profile.values.begin(), profile.values.end());
    for (int z = 0; z < v; ++z) {
        if (profile.values[static_cast<std::size_t>(z)] >= profile.max_value - tie_tolerance)
            profile.argmax_set.push_back(z);
        if (profile.values[static_cast<std::size_t>(z)] <= profile.min_value + tie_tolerance)
            profile.argmin_set.push_back(z);
    }
    return profile;
}

std::vector<double> steered_probs_closed_form(const DatasetSpec& ds, const LogOddsProfile& profile,
                                              int context_index, double alpha) {
    const std::vector<double> p = next_token_distribution(ds, context_index);
    const int v = ds.partition.vocab_size;
    std::vector<double> w(static_cast<std::size_t>(v));
    for (int z = 0; z < v; ++z)
        w[static_cast<std::size_t>(z)] =
            std::log(p[static_cast<std::size_t>(z)]) + alpha * profile.values[static_cast<std::size_t>(z)];
    return softmax(w);
}

SteeringSpec make_steering(const DatasetSpec& ds, const UfmParams& params, int target_concept,
                           NegativeMode mode, int pair_count, std::uint64_t seed,
                           int opposite_concept) {
    SteeringSpec spec;
    spec.target_concept = target_concept;
    spec.mode = mode;
    spec.sets = build_index_sets(ds, target_concept, mode, pair_count, seed, opposite_concept);
    spec.direction = steering_vector(params, spec.sets);
    return spec;
}

nlohmann::json steering_to_json(const SteeringSpec& spec) {
    nlohmann::json j;
    j["target_concept"] = spec.target_concept;
    j["mode"] = to_string(spec.mode);
    j["P"] = spec.sets.positive;
    j["N"] = spec.sets.negative;
    j["q"] = spec.sets.pair_count();
    j["v"] = spec.direction;
    return j;
}

nlohmann::json profile_to_json(const LogOddsProfile& profile) {
    nlohmann::json j;
    j["M"] = profile.values;
    j["argmax_set"] = profile.argmax_set;
    j["argmin_set"] = profile.argmin_set;
    j["max"] = profile.max_value;
    j["min"] = profile.min_value;
    j["tie_tolerance"] = profile.tie_tolerance;
    return j;
}

}  // namespace steerlab
