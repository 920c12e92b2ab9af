#include "steerlab/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "steerlab/alpha_analysis.hpp"

namespace steerlab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

template <typename T>
T get_field(const nlohmann::json& j, const std::string& scope, const char* name, T fallback) {
    if (!j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(scope + "." + name + ": wrong type");
    }
}

double parse_number(std::string_view text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(std::string(text), &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        fail(what + ": cannot parse number '" + std::string(text) + "'");
    }
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(s.substr(start));
            break;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

nlohmann::json config_to_json(const RunConfig& config) {
    nlohmann::json j;
    j["schema_version"] = config.schema_version;
    nlohmann::json d;
    d["V"] = config.dataset.vocab_size;
    d["G"] = config.dataset.group_count;
    d["T"] = config.dataset.sequence_length;
    d["epsilon"] = config.dataset.epsilon;
    if (!config.dataset.gamma.empty()) {
        d["gamma"] = config.dataset.gamma;
        d["omega"] = config.dataset.omega;
    }
    d["contexts_per_concept"] = config.dataset.contexts_per_concept;
    if (!config.dataset.pi.empty()) d["pi"] = config.dataset.pi;
    d["seed"] = config.dataset.seed;
    j["dataset"] = std::move(d);

    nlohmann::json s;
    s["target_concept"] = config.steering.target_concept;
    s["mode"] = config.steering.mode;
    s["pair_count"] = config.steering.pair_count;
    if (config.steering.opposite_concept >= 0) s["opposite_concept"] = config.steering.opposite_concept;
    s["seed"] = config.steering.seed;
    j["steering"] = std::move(s);

    nlohmann::json w;
    w["grid"] = config.sweep.grid;
    if (config.sweep.context >= 0)
        w["context"] = config.sweep.context;
    else
        w["context"] = "all";
    j["sweep"] = std::move(w);

    nlohmann::json a;
    a["peaks"] = config.analysis.peaks;
    a["tanh"] = config.analysis.tanh_parts;
    a["ce"] = config.analysis.ce;
    a["limits"] = config.analysis.limits;
    j["analysis"] = std::move(a);

    nlohmann::json t;
    t["enabled"] = config.transformer.enabled;
    t["layers"] = config.transformer.layers;
    t["dim"] = config.transformer.dim;
    t["vocab"] = config.transformer.vocab;
    t["sequence_length"] = config.transformer.sequence_length;
    t["steer_layer"] = config.transformer.steer_layer;
    t["norm"] = config.transformer.norm;
    t["alpha_probe"] = config.transformer.alpha_probe;
    if (!config.transformer.direction.empty()) t["direction"] = config.transformer.direction;
    t["seed"] = config.transformer.seed;
    j["transformer"] = std::move(t);

    j["output_dir"] = config.output_dir;
    return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig config;
    const int version = get_field<int>(j, "config", "schema_version", 1);
    if (version != 1) fail("schema_version: unsupported value " + std::to_string(version));
    config.schema_version = version;

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        config.dataset.vocab_size = get_field<int>(d, "dataset", "V", config.dataset.vocab_size);
        config.dataset.group_count = get_field<int>(d, "dataset", "G", config.dataset.group_count);
        config.dataset.sequence_length = get_field<int>(d, "dataset", "T", config.dataset.sequence_length);
        config.dataset.epsilon = get_field<double>(d, "dataset", "epsilon", config.dataset.epsilon);
        config.dataset.gamma = get_field<std::vector<double>>(d, "dataset", "gamma", {});
        config.dataset.omega = get_field<std::vector<double>>(d, "dataset", "omega", {});
        config.dataset.contexts_per_concept =
            get_field<int>(d, "dataset", "contexts_per_concept", config.dataset.contexts_per_concept);
        config.dataset.pi = get_field<std::vector<double>>(d, "dataset", "pi", {});
        config.dataset.seed = get_field<std::uint64_t>(d, "dataset", "seed", config.dataset.seed);
    }
    if (j.contains("steering")) {
        const auto& s = j.at("steering");
        config.steering.target_concept =
            get_field<int>(s, "steering", "target_concept", config.steering.target_concept);
        config.steering.mode = get_field<std::string>(s, "steering", "mode", config.steering.mode);
        config.steering.pair_count = get_field<int>(s, "steering", "pair_count", config.steering.pair_count);
        config.steering.opposite_concept =
            get_field<int>(s, "steering", "opposite_concept", config.steering.opposite_concept);
        config.steering.seed = get_field<std::uint64_t>(s, "steering", "seed", config.steering.seed);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        config.sweep.grid = get_field<std::string>(s, "sweep", "grid", config.sweep.grid);
        if (s.contains("context")) {
            if (s.at("context").is_string()) {
                if (s.at("context").get<std::string>() != "all")
                    fail("sweep.context: expected an index or \"all\"");
                config.sweep.context = -1;
            } else {
                config.sweep.context = get_field<int>(s, "sweep", "context", -1);
            }
        }
    }
    if (j.contains("analysis")) {
        const auto& a = j.at("analysis");
        config.analysis.peaks = get_field<bool>(a, "analysis", "peaks", true);
        config.analysis.tanh_parts = get_field<bool>(a, "analysis", "tanh", true);
        config.analysis.ce = get_field<bool>(a, "analysis", "ce", true);
        config.analysis.limits = get_field<bool>(a, "analysis", "limits", true);
    }
    if (j.contains("transformer")) {
        const auto& t = j.at("transformer");
        config.transformer.enabled = get_field<bool>(t, "transformer", "enabled", true);
        config.transformer.layers = get_field<int>(t, "transformer", "layers", config.transformer.layers);
        config.transformer.dim = get_field<int>(t, "transformer", "dim", config.transformer.dim);
        config.transformer.vocab = get_field<int>(t, "transformer", "vocab", config.transformer.vocab);
        config.transformer.sequence_length =
            get_field<int>(t, "transformer", "sequence_length", config.transformer.sequence_length);
        config.transformer.steer_layer =
            get_field<int>(t, "transformer", "steer_layer", config.transformer.steer_layer);
        config.transformer.norm = get_field<std::string>(t, "transformer", "norm", config.transformer.norm);
        config.transformer.alpha_probe =
            get_field<std::vector<double>>(t, "transformer", "alpha_probe", config.transformer.alpha_probe);
        config.transformer.direction = get_field<std::vector<double>>(t, "transformer", "direction", {});
        config.transformer.seed = get_field<std::uint64_t>(t, "transformer", "seed", config.transformer.seed);
    }
    config.output_dir = get_field<std::string>(j, "config", "output_dir", config.output_dir);

    // Range validation with field-qualified messages.
    const auto& dc = config.dataset;
    if (dc.vocab_size < 1) fail("dataset.V: must be positive");
    if (dc.group_count < 1) fail("dataset.G: must be positive");
    if (dc.vocab_size % dc.group_count != 0) fail("dataset.G: must divide dataset.V");
    if (dc.sequence_length < 2) fail("dataset.T: must be at least 2");
    if (dc.group_count > 1) {
        const double upper = static_cast<double>(dc.group_count - 1) / dc.group_count;
        if (!(dc.epsilon > 0.0 && dc.epsilon < upper))
            fail("dataset.epsilon: must lie in (0, " + std::to_string(upper) + ")");
    }
    if (dc.gamma.empty() != dc.omega.empty()) fail("dataset.gamma: gamma and omega come together");
    if (dc.contexts_per_concept < 1) fail("dataset.contexts_per_concept: must be at least 1");
    if (config.steering.pair_count < 1) fail("steering.pair_count: must be at least 1");
    if (config.steering.target_concept < 0 || config.steering.target_concept >= dc.group_count)
        fail("steering.target_concept: out of range");
    if (config.sweep.context < -1) fail("sweep.context: must be an index or \"all\"");
    negative_mode_from_string(config.steering.mode);  // validates
    if (config.transformer.enabled) {
        const auto& t = config.transformer;
        if (t.layers < 0) fail("transformer.layers: must be nonnegative");
        if (t.dim < 1) fail("transformer.dim: must be positive");
        if (t.vocab < 2) fail("transformer.vocab: must be at least 2");
        if (t.sequence_length < 2) fail("transformer.sequence_length: must be at least 2");
        if (t.steer_layer < 0 || t.steer_layer >= t.layers)
            fail("transformer.steer_layer: must lie in [0, layers)");
        norm_kind_from_string(t.norm);  // validates
        if (t.alpha_probe.empty()) fail("transformer.alpha_probe: must not be empty");
        if (!t.direction.empty() && static_cast<int>(t.direction.size()) != t.dim)
            fail("transformer.direction: needs one entry per model dimension");
    }
    parse_alpha_grid(config.sweep.grid);  // validates
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::vector<double> parse_alpha_grid(const std::string& spec) {
    const auto parts = split(spec, ':');
    if (parts.size() == 4 && parts[0] == "logsym") {
        const double lo = parse_number(parts[1], "sweep.grid");
        const double hi = parse_number(parts[2], "sweep.grid");
        const double n = parse_number(parts[3], "sweep.grid");
        if (n < 1 || n != std::floor(n)) fail("sweep.grid: point count must be a positive integer");
        return logsym_alpha_grid(lo, hi, static_cast<int>(n));
    }
    if (parts.size() == 3) {
        const double lo = parse_number(parts[0], "sweep.grid");
        const double hi = parse_number(parts[1], "sweep.grid");
        const double n = parse_number(parts[2], "sweep.grid");
        if (n < 2 || n != std::floor(n)) fail("sweep.grid: point count must be an integer >= 2");
        if (!(hi > lo)) fail("sweep.grid: hi must exceed lo");
        return linear_alpha_grid(lo, hi, static_cast<int>(n));
    }
    fail("sweep.grid: expected \"lo:hi:n\" or \"logsym:lo:hi:n\", got '" + spec + "'");
}

DatasetSpec build_dataset(const DatasetConfig& config) {
    const ConceptPartition partition = build_partition(config.vocab_size, config.group_count);
    ConceptProbs probs;
    ProbProvenance prov;
    if (config.gamma.empty()) {
        prov.kind = ProbProvenance::Kind::symmetric;
        prov.epsilon = config.epsilon;
        probs = symmetric_probs(partition, config.epsilon);
    } else {
        prov.kind = ProbProvenance::Kind::weighted;
        prov.epsilon = config.epsilon;
        prov.gamma = config.gamma;
        prov.omega = config.omega;
        probs = weighted_probs(partition, config.epsilon, config.gamma, config.omega);
    }
    std::vector<Context> contexts =
        enumerate_contexts(partition, config.sequence_length, config.contexts_per_concept, config.seed);
    return make_dataset(partition, probs, std::move(contexts), config.pi, config.sequence_length,
                        std::move(prov));
}

BuiltInstance build_instance(const RunConfig& config) {
    return build_instance(config, build_dataset(config.dataset));
}

BuiltInstance build_instance(const RunConfig& config, DatasetSpec ds) {
    BuiltInstance instance;
    instance.ds = std::move(ds);
    instance.params = analytic_perfect_fit(instance.ds);
    instance.steering = make_steering(instance.ds, instance.params, config.steering.target_concept,
                                      negative_mode_from_string(config.steering.mode),
                                      config.steering.pair_count, config.steering.seed,
                                      config.steering.opposite_concept);
    instance.profile = log_odds(instance.ds, instance.steering.sets);
    return instance;
}

TransformerConfig transformer_config(const TransformerBlockConfig& block) {
    TransformerConfig cfg;
    cfg.layers = block.layers;
    cfg.dim = block.dim;
    cfg.vocab = block.vocab;
    cfg.seq_len = block.sequence_length;
    cfg.norm_kind = norm_kind_from_string(block.norm);
    cfg.seed = block.seed;
    return cfg;
}

}  // namespace steerlab
