#include "steerlab/concept_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace steerlab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string describe(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

ConceptPartition build_partition(int vocab_size, int group_count) {
    if (vocab_size <= 0) fail("build_partition: vocab_size must be positive, got " + std::to_string(vocab_size));
    if (group_count <= 0) fail("build_partition: group_count must be positive, got " + std::to_string(group_count));
    if (vocab_size % group_count != 0)
        fail("build_partition: group_count " + std::to_string(group_count) + " does not divide vocab_size " +
             std::to_string(vocab_size));
    ConceptPartition p;
    p.vocab_size = vocab_size;
    p.group_count = group_count;
    p.concept_size = vocab_size / group_count;
    return p;
}

ConceptProbs symmetric_probs(const ConceptPartition& partition, double epsilon) {
    const int v = partition.vocab_size;
    const int g = partition.group_count;
    const double s = static_cast<double>(partition.concept_size);
    ConceptProbs probs;
    probs.in_concept.assign(static_cast<std::size_t>(v), 0.0);
    probs.off_concept.assign(static_cast<std::size_t>(v), 0.0);
    if (g == 1) {
        // No off-concept tokens exist; the distribution is uniform and the
        // smoothing parameter is meaningless beyond zero.
        if (epsilon != 0.0) fail("symmetric_probs: group_count=1 requires epsilon=0, got " + describe(epsilon));
        std::fill(probs.in_concept.begin(), probs.in_concept.end(), 1.0 / s);
        return probs;
    }
    const double upper = static_cast<double>(g - 1) / static_cast<double>(g);
    if (!(epsilon > 0.0 && epsilon < upper))
        fail("symmetric_probs: epsilon must lie in (0, " + describe(upper) + "), got " + describe(epsilon));
    const double a = (1.0 - epsilon) / s;
    const double b = epsilon / (static_cast<double>(g - 1) * s);
    std::fill(probs.in_concept.begin(), probs.in_concept.end(), a);
    std::fill(probs.off_concept.begin(), probs.off_concept.end(), b);
    return probs;
}

ConceptProbs weighted_probs(const ConceptPartition& partition, double epsilon,
                            std::span<const double> gamma, std::span<const double> omega) {
    const int v = partition.vocab_size;
    const int g = partition.group_count;
    if (g < 2) fail("weighted_probs: requires at least two concepts");
    if (static_cast<int>(gamma.size()) != v || static_cast<int>(omega.size()) != v)
        fail("weighted_probs: gamma and omega must have one entry per token");
    const double upper = static_cast<double>(g - 1) / static_cast<double>(g);
    if (!(epsilon > 0.0 && epsilon < upper))
        fail("weighted_probs: epsilon must lie in (0, " + describe(upper) + "), got " + describe(epsilon));
    for (int k = 0; k < g; ++k) {
        double gsum = 0.0;
        double osum = 0.0;
        for (int z = partition.first_token(k); z < partition.first_token(k) + partition.concept_size; ++z) {
            if (gamma[static_cast<std::size_t>(z)] <= 0.0 || omega[static_cast<std::size_t>(z)] <= 0.0)
                fail("weighted_probs: gamma and omega entries must be positive");
            gsum += gamma[static_cast<std::size_t>(z)];
            osum += omega[static_cast<std::size_t>(z)];
        }
        if (std::abs(gsum - 1.0) > 1e-9)
            fail("weighted_probs: gamma does not sum to 1 over concept " + std::to_string(k) + " (sum=" +
                 describe(gsum) + ")");
        if (std::abs(osum - 1.0) > 1e-9)
            fail("weighted_probs: omega does not sum to 1 over concept " + std::to_string(k) + " (sum=" +
                 describe(osum) + ")");
    }
    ConceptProbs probs;
    probs.in_concept.resize(static_cast<std::size_t>(v));
    probs.off_concept.resize(static_cast<std::size_t>(v));
    for (int z = 0; z < v; ++z) {
        const double a = (1.0 - epsilon) * gamma[static_cast<std::size_t>(z)];
        const double b = epsilon * omega[static_cast<std::size_t>(z)] / static_cast<double>(g - 1);
        if (a <= b)
            fail("weighted_probs: a_z <= b_z for token " + std::to_string(z) + " (a=" + describe(a) +
                 ", b=" + describe(b) + ")");
        probs.in_concept[static_cast<std::size_t>(z)] = a;
        probs.off_concept[static_cast<std::size_t>(z)] = b;
    }
    return probs;
}

std::vector<Context> enumerate_contexts(const ConceptPartition& partition, int sequence_length,
                                        int per_concept, std::uint64_t seed) {
    if (sequence_length < 2) fail("enumerate_contexts: sequence_length must be at least 2");
    if (per_concept < 1) fail("enumerate_contexts: per_concept must be at least 1");
    const int s = partition.concept_size;
    const int len = sequence_length - 1;

    // s^(T-1) with saturation
    double capacity = 1.0;
    for (int i = 0; i < len; ++i) capacity *= static_cast<double>(s);
    if (static_cast<double>(per_concept) > capacity)
        fail("enumerate_contexts: per_concept " + std::to_string(per_concept) + " exceeds the " +
             describe(capacity) + " distinct contexts available per concept");

    std::mt19937_64 rng(seed);
    std::vector<Context> out;
    out.reserve(static_cast<std::size_t>(per_concept) * partition.group_count);

    for (int k = 0; k < partition.group_count; ++k) {
        const int base = partition.first_token(k);
        std::vector<std::vector<int>> picked;
        if (capacity <= 4096.0) {
            // Enumerate all sequences in lexicographic order, shuffle, take a prefix.
            const int total = static_cast<int>(capacity);
            std::vector<int> order = sample_without_replacement(total, per_concept, rng);
            for (int idx : order) {
                std::vector<int> tokens(static_cast<std::size_t>(len));
                int rem = idx;
                for (int t = len - 1; t >= 0; --t) {
                    tokens[static_cast<std::size_t>(t)] = base + rem % s;
                    rem /= s;
                }
                picked.push_back(std::move(tokens));
            }
        } else {
            std::set<std::vector<int>> seen;
            while (static_cast<int>(picked.size()) < per_concept) {
                std::vector<int> tokens(static_cast<std::size_t>(len));
                for (int t = 0; t < len; ++t)
                    tokens[static_cast<std::size_t>(t)] = base + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(s)));
                if (seen.insert(tokens).second) picked.push_back(std::move(tokens));
            }
        }
        for (auto& tokens : picked) out.push_back(Context{std::move(tokens), k});
    }
    return out;
}

DatasetSpec make_dataset(const ConceptPartition& partition, const ConceptProbs& probs,
                         std::vector<Context> contexts, std::vector<double> context_weights,
                         int sequence_length, ProbProvenance provenance) {
    const int v = partition.vocab_size;
    if (static_cast<int>(probs.in_concept.size()) != v || static_cast<int>(probs.off_concept.size()) != v)
        fail("make_dataset: probability arrays must have one entry per token");
    if (contexts.empty()) fail("make_dataset: needs at least one context");
    if (sequence_length < 2) fail("make_dataset: sequence_length must be at least 2");

    const bool structural_only = provenance.kind == ProbProvenance::Kind::raw;
    for (int z = 0; z < v; ++z) {
        const double a = probs.in_concept[static_cast<std::size_t>(z)];
        const double b = probs.off_concept[static_cast<std::size_t>(z)];
        if (!(a > 0.0 && a < 1.0)) fail("make_dataset: a_z out of (0,1) for token " + std::to_string(z));
        if (partition.group_count > 1 && !(b > 0.0 && b < 1.0))
            fail("make_dataset: b_z out of (0,1) for token " + std::to_string(z));
        if (!structural_only && partition.group_count > 1 && !(a > b))
            fail("make_dataset: a_z <= b_z for token " + std::to_string(z));
    }
    if (!structural_only) {
        for (int k = 0; k < partition.group_count; ++k) {
            double total = 0.0;
            for (int z = 0; z < v; ++z)
                total += (partition.concept_of(z) == k) ? probs.in_concept[static_cast<std::size_t>(z)]
                                                        : probs.off_concept[static_cast<std::size_t>(z)];
            if (std::abs(total - 1.0) > 1e-9)
                fail("make_dataset: conditional distribution for concept " + std::to_string(k) +
                     " sums to " + describe(total));
        }
    }

    for (std::size_t j = 0; j < contexts.size(); ++j) {
        const Context& c = contexts[j];
        if (static_cast<int>(c.tokens.size()) != sequence_length - 1)
            fail("make_dataset: context " + std::to_string(j) + " has length " +
                 std::to_string(c.tokens.size()) + ", expected " + std::to_string(sequence_length - 1));
        for (int t : c.tokens) {
            if (t < 0 || t >= v) fail("make_dataset: context token out of range");
            if (partition.concept_of(t) != c.concept_label)
                fail("make_dataset: context " + std::to_string(j) + " mixes concepts");
        }
    }

    if (context_weights.empty())
        context_weights.assign(contexts.size(), 1.0 / static_cast<double>(contexts.size()));
    if (context_weights.size() != contexts.size())
        fail("make_dataset: context_weights size mismatch");
    double wsum = 0.0;
    for (double w : context_weights) {
        if (!(w > 0.0)) fail("make_dataset: context weights must be positive");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) fail("make_dataset: context weights sum to " + describe(wsum));

    DatasetSpec ds;
    ds.partition = partition;
    ds.in_concept_prob = probs.in_concept;
    ds.off_concept_prob = probs.off_concept;
    ds.contexts = std::move(contexts);
    ds.context_weights = std::move(context_weights);
    ds.sequence_length = sequence_length;
    ds.provenance = std::move(provenance);
    return ds;
}

std::vector<double> next_token_distribution(const DatasetSpec& ds, int context_index) {
    if (context_index < 0 || context_index >= ds.num_contexts())
        throw std::out_of_range("next_token_distribution: context index " + std::to_string(context_index));
    const int concept_index = ds.contexts[static_cast<std::size_t>(context_index)].concept_label;
    std::vector<double> p(static_cast<std::size_t>(ds.partition.vocab_size));
    for (int z = 0; z < ds.partition.vocab_size; ++z)
        p[static_cast<std::size_t>(z)] = (ds.partition.concept_of(z) == concept_index)
                                             ? ds.in_concept_prob[static_cast<std::size_t>(z)]
                                             : ds.off_concept_prob[static_cast<std::size_t>(z)];
    return p;
}

double dataset_entropy(const DatasetSpec& ds) {
    double h = 0.0;
    for (int j = 0; j < ds.num_contexts(); ++j) {
        const std::vector<double> p = next_token_distribution(ds, j);
        double hj = 0.0;
        for (double pz : p)
            if (pz > 0.0) hj -= pz * std::log(pz);
        h += ds.context_weights[static_cast<std::size_t>(j)] * hj;
    }
    return h;
}

nlohmann::json dataset_to_json(const DatasetSpec& ds) {
    nlohmann::json j;
    j["V"] = ds.partition.vocab_size;
    j["G"] = ds.partition.group_count;
    j["T"] = ds.sequence_length;
    switch (ds.provenance.kind) {
        case ProbProvenance::Kind::symmetric:
            j["epsilon"] = ds.provenance.epsilon;
            break;
        case ProbProvenance::Kind::weighted:
            j["epsilon"] = ds.provenance.epsilon;
            j["gamma"] = ds.provenance.gamma;
            j["omega"] = ds.provenance.omega;
            break;
        case ProbProvenance::Kind::raw:
            j["a"] = ds.in_concept_prob;
            j["b"] = ds.off_concept_prob;
            break;
    }
    nlohmann::json ctxs = nlohmann::json::array();
    for (const Context& c : ds.contexts) ctxs.push_back(c.tokens);
    j["contexts"] = std::move(ctxs);
    j["pi"] = ds.context_weights;
    return j;
}

DatasetSpec dataset_from_json(const nlohmann::json& j) {
    for (const char* field : {"V", "G", "T", "contexts", "pi"})
        if (!j.contains(field)) fail(std::string("dataset_from_json: missing field '") + field + "'");
    const ConceptPartition partition = build_partition(j.at("V").get<int>(), j.at("G").get<int>());
    const int sequence_length = j.at("T").get<int>();

    ConceptProbs probs;
    ProbProvenance prov;
    if (j.contains("a") && j.contains("b")) {
        prov.kind = ProbProvenance::Kind::raw;
        probs.in_concept = j.at("a").get<std::vector<double>>();
        probs.off_concept = j.at("b").get<std::vector<double>>();
    } else if (j.contains("gamma") || j.contains("omega")) {
        if (!j.contains("gamma") || !j.contains("omega") || !j.contains("epsilon"))
            fail("dataset_from_json: weighted form needs 'epsilon', 'gamma' and 'omega'");
        prov.kind = ProbProvenance::Kind::weighted;
        prov.epsilon = j.at("epsilon").get<double>();
        prov.gamma = j.at("gamma").get<std::vector<double>>();
        prov.omega = j.at("omega").get<std::vector<double>>();
        probs = weighted_probs(partition, prov.epsilon, prov.gamma, prov.omega);
    } else if (j.contains("epsilon")) {
        prov.kind = ProbProvenance::Kind::symmetric;
        prov.epsilon = j.at("epsilon").get<double>();
        probs = symmetric_probs(partition, prov.epsilon);
    } else {
        fail("dataset_from_json: need 'epsilon', ('gamma','omega'), or ('a','b')");
    }

    std::vector<Context> contexts;
    for (const auto& arr : j.at("contexts")) {
        Context c;
        c.tokens = arr.get<std::vector<int>>();
        if (c.tokens.empty()) fail("dataset_from_json: empty context");
        c.concept_label = partition.concept_of(c.tokens.front());
        contexts.push_back(std::move(c));
    }
    std::vector<double> weights = j.at("pi").get<std::vector<double>>();
    return make_dataset(partition, probs, std::move(contexts), std::move(weights), sequence_length,
                        std::move(prov));
}

}  // namespace steerlab
