#include "steerlab/sweep_runner.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "steerlab/alpha_analysis.hpp"

namespace steerlab {

namespace {

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file " + path.string());
    out << bytes;
}

std::string hex_hash(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json peak_to_json(const PeakPoint& peak) {
    nlohmann::json j;
    switch (peak.kind) {
        case PeakPoint::Kind::plus_infinite:
            j["alpha"] = "+inf";
            break;
        case PeakPoint::Kind::minus_infinite:
            j["alpha"] = "-inf";
            break;
        case PeakPoint::Kind::finite:
            j["alpha"] = peak.alpha;
            j["residual"] = peak.residual;
            j["bracket"] = {peak.bracket_lo, peak.bracket_hi};
            break;
    }
    return j;
}

std::vector<int> contexts_to_sweep(const RunConfig& config, const DatasetSpec& ds) {
    if (config.sweep.context >= 0) {
        if (config.sweep.context >= ds.num_contexts())
            throw ConfigError("sweep.context: index " + std::to_string(config.sweep.context) +
                              " out of range (have " + std::to_string(ds.num_contexts()) + " contexts)");
        return {config.sweep.context};
    }
    std::vector<int> all(static_cast<std::size_t>(ds.num_contexts()));
    for (int j = 0; j < ds.num_contexts(); ++j) all[static_cast<std::size_t>(j)] = j;
    return all;
}

}  // namespace

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    return buf;
}

SweepArtifacts render_sweep(const RunConfig& config, const BuiltInstance& instance) {
    const DatasetSpec& ds = instance.ds;
    const std::vector<double> grid = parse_alpha_grid(config.sweep.grid);
    const std::vector<int> contexts = contexts_to_sweep(config, ds);
    const bool all_contexts = config.sweep.context < 0;

    SweepArtifacts artifacts;

    std::string& token_csv = artifacts.next_token_csv;
    token_csv = "alpha";
    if (all_contexts) token_csv += ",context";
    for (int z = 0; z < ds.partition.vocab_size; ++z) token_csv += ",z" + std::to_string(z);
    token_csv += '\n';

    std::string& concept_csv = artifacts.concept_csv;
    concept_csv = "alpha";
    if (all_contexts) concept_csv += ",context";
    for (int k = 0; k < ds.partition.group_count; ++k) concept_csv += ",c" + std::to_string(k);
    concept_csv += '\n';

    nlohmann::json summary;
    summary["schema_version"] = 1;
    summary["dataset_hash"] = hex_hash(fnv1a_hash(dataset_to_json(ds).dump()));
    summary["steering_hash"] = hex_hash(fnv1a_hash(steering_to_json(instance.steering).dump()));
    summary["log_odds"] = profile_to_json(instance.profile);
    summary["contexts"] = contexts;

    nlohmann::json peaks = nlohmann::json::array();
    nlohmann::json tanh_section = nlohmann::json::array();
    nlohmann::json limit_section = nlohmann::json::array();

    for (int j : contexts) {
        const SweepResult sweep =
            run_sweep(ds, instance.params, instance.steering, instance.profile, grid, j);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            token_csv += format_double(grid[i]);
            if (all_contexts) token_csv += ',' + std::to_string(j);
            for (int z = 0; z < ds.partition.vocab_size; ++z)
                token_csv += ',' + format_double(sweep.per_token_delta(static_cast<int>(i), z));
            token_csv += '\n';
            concept_csv += format_double(grid[i]);
            if (all_contexts) concept_csv += ',' + std::to_string(j);
            for (int k = 0; k < ds.partition.group_count; ++k)
                concept_csv += ',' + format_double(sweep.per_concept_delta(static_cast<int>(i), k));
            concept_csv += '\n';
        }

        if (config.analysis.peaks) {
            for (int z = 0; z < ds.partition.vocab_size; ++z) {
                nlohmann::json row = peak_to_json(peak_alpha(ds, instance.profile, j, z));
                row["context"] = j;
                row["token"] = z;
                peaks.push_back(std::move(row));
            }
        }
        if (config.analysis.tanh_parts) {
            const TanhParts parts =
                tanh_decomposition(ds, instance.profile, j, instance.steering.target_concept, 1.0, 512);
            nlohmann::json row;
            row["context"] = j;
            row["concept"] = instance.steering.target_concept;
            row["r"] = parts.intercept;
            row["nu_at_1"] = parts.drift;
            row["reconstruction_error"] = parts.reconstruction_error;
            tanh_section.push_back(std::move(row));
        }
        if (config.analysis.limits) {
            for (int z = 0; z < ds.partition.vocab_size; ++z) {
                nlohmann::json row;
                row["context"] = j;
                row["token"] = z;
                row["plus"] = delta_p_limit(ds, instance.profile, j, z, 1);
                row["minus"] = delta_p_limit(ds, instance.profile, j, z, -1);
                limit_section.push_back(std::move(row));
            }
        }
    }

    // cross-entropy is already pi-aggregated over contexts
    std::string& ce_csv = artifacts.cross_entropy_csv;
    ce_csv = "alpha,delta_ce\n";
    for (double alpha : grid)
        ce_csv += format_double(alpha) + ',' +
                  format_double(delta_ce(ds, instance.params, instance.steering.direction, alpha)) + '\n';

    if (config.analysis.peaks) summary["peaks"] = std::move(peaks);
    if (config.analysis.tanh_parts) summary["tanh"] = std::move(tanh_section);
    if (config.analysis.limits) summary["limits"] = std::move(limit_section);
    if (config.analysis.ce) {
        const std::vector<double> local = linear_alpha_grid(-0.01, 0.01, 21);
        std::vector<double> curve(local.size());
        for (std::size_t i = 0; i < local.size(); ++i)
            curve[i] = delta_ce(ds, instance.params, instance.steering.direction, local[i]);
        const QuadraticFit fit = fit_quadratic(local, curve);
        nlohmann::json ce;
        ce["quadratic_coefficient"] = ce_quadratic_coefficient(ds, instance.profile);
        ce["fit_constant"] = fit.constant;
        ce["fit_linear"] = fit.linear;
        ce["fit_quadratic"] = fit.quadratic;
        ce["fit_grid"] = "linear:-0.01:0.01:21";
        summary["ce"] = std::move(ce);
    }
    artifacts.summary = std::move(summary);
    return artifacts;
}

TransformerArtifacts render_transformer_limit(const RunConfig& config) {
    if (!config.transformer.enabled)
        throw ConfigError("transformer.enabled: transformer-limit needs the transformer block");
    const TransformerConfig cfg = transformer_config(config.transformer);
    const TransformerParams params = make_transformer(cfg);
    const std::vector<double> direction = config.transformer.direction.empty()
                                              ? make_direction(cfg.dim, cfg.seed + 1)
                                              : config.transformer.direction;
    const int layer = config.transformer.steer_layer;
    const auto prompts = sample_sequences(2, cfg.seq_len, cfg.vocab, cfg.seed + 2);

    TransformerArtifacts artifacts;
    artifacts.probe_csv = "alpha,softmax_gap,remainder_sup\n";
    const RemainderProbe probe =
        remainder_bound_probe(params, prompts[0], layer, direction, config.transformer.alpha_probe);
    double gap_at_largest = 0.0;
    for (std::size_t i = 0; i < probe.alphas.size(); ++i) {
        const double gap = softmax_gap(params, prompts[0], layer, direction, probe.alphas[i]);
        if (i + 1 == probe.alphas.size()) gap_at_largest = gap;
        artifacts.probe_csv += format_double(probe.alphas[i]) + ',' + format_double(gap) + ',' +
                               format_double(probe.sup_remainder[i]) + '\n';
    }

    nlohmann::json verdicts;
    auto record = [&](const char* name, bool pass, double measured, double threshold) {
        nlohmann::json v;
        v["pass"] = pass;
        v["measured"] = measured;
        v["threshold"] = threshold;
        verdicts[name] = std::move(v);
        artifacts.all_pass = artifacts.all_pass && pass;
    };

    const double gap_1e6 = softmax_gap(params, prompts[0], layer, direction, 1e6);
    const double gap_1e6_neg = softmax_gap(params, prompts[0], layer, direction, -1e6);
    record("softmax_gap_plus_1e6", gap_1e6 < 1e-4, gap_1e6, 1e-4);
    record("softmax_gap_minus_1e6", gap_1e6_neg < 1e-4, gap_1e6_neg, 1e-4);

    const Matrix a = forward_steered(params, prompts[0], layer, direction, 1e6);
    const Matrix b = forward_steered(params, prompts[1], layer, direction, 1e6);
    const std::vector<double> pa = softmax(a.row(a.rows - 1));
    const std::vector<double> pb = softmax(b.row(b.rows - 1));
    double prompt_gap = 0.0;
    for (std::size_t z = 0; z < pa.size(); ++z)
        prompt_gap = std::max(prompt_gap, std::abs(pa[z] - pb[z]));
    record("prompt_independence", prompt_gap < 2e-4, prompt_gap, 2e-4);

    const double mid = probe.sup_remainder[probe.sup_remainder.size() / 2];
    const double ratio = mid > 0.0 ? probe.sup_remainder.back() / mid : 0.0;
    record("remainder_ratio", ratio <= 1.05, ratio, 1.05);

    const auto corpus = sample_sequences(12, cfg.seq_len, cfg.vocab, cfg.seed + 3);
    const double base_ce = corpus_cross_entropy(params, corpus);
    const double plateau = std::abs(
        (steered_corpus_cross_entropy(params, corpus, layer, direction, 1e5) - base_ce) -
        (steered_corpus_cross_entropy(params, corpus, layer, direction, 1e6) - base_ce));
    record("delta_ce_plateau", plateau < 1e-3, plateau, 1e-3);
    record("softmax_gap_largest_probe_alpha", gap_at_largest < 1e-3, gap_at_largest, 1e-3);

    artifacts.verdicts = std::move(verdicts);
    return artifacts;
}

void run_gen(const RunConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const DatasetSpec ds = build_dataset(config.dataset);
    write_file(out_dir / "dataset.json", dataset_to_json(ds).dump(2) + "\n");
}

void run_train(const RunConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const DatasetSpec ds = build_dataset(config.dataset);
    GdOptions options;
    options.seed = config.dataset.seed + 1000;
    const GdResult result = train_gd(ds, options);
    write_loss_trace_csv((out_dir / "loss_trace.csv").string(), result.loss_trace);
    write_file(out_dir / "ufm_params.json", ufm_to_json(result.params).dump() + "\n");

    nlohmann::json report;
    report["final_loss"] = result.loss_trace.back();
    report["dataset_entropy"] = dataset_entropy(ds);
    report["gap"] = result.loss_trace.back() - dataset_entropy(ds);
    report["steps"] = options.steps;
    report["learning_rate"] = options.learning_rate;
    write_file(out_dir / "train_report.json", report.dump(2) + "\n");
}

void run_sweep_command(const RunConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const BuiltInstance instance = build_instance(config);
    const SweepArtifacts artifacts = render_sweep(config, instance);
    write_file(out_dir / "next_token.csv", artifacts.next_token_csv);
    write_file(out_dir / "concept.csv", artifacts.concept_csv);
    write_file(out_dir / "cross_entropy.csv", artifacts.cross_entropy_csv);
    write_file(out_dir / "summary.json", artifacts.summary.dump(2) + "\n");
}

int run_transformer_limit_command(const RunConfig& config, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const TransformerArtifacts artifacts = render_transformer_limit(config);
    write_file(out_dir / "transformer_probe.csv", artifacts.probe_csv);
    write_file(out_dir / "transformer_verdicts.json", artifacts.verdicts.dump(2) + "\n");
    return artifacts.all_pass ? 0 : 1;
}

}  // namespace steerlab
