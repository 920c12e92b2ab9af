#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "steerlab/sweep_runner.hpp"
#include "steerlab/verify.hpp"

namespace {

struct GlobalOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    std::string grid_override;
    std::string dataset_path;  // verify-all only
};

steerlab::RunConfig resolve_config(const GlobalOptions& opts) {
    steerlab::RunConfig config =
        opts.config_path.empty() ? steerlab::default_config() : steerlab::load_config(opts.config_path);
    if (opts.seed_override) {
        config.dataset.seed = *opts.seed_override;
        config.steering.seed = *opts.seed_override + 1;
        config.transformer.seed = *opts.seed_override + 2;
    }
    if (!opts.grid_override.empty()) {
        steerlab::parse_alpha_grid(opts.grid_override);  // validate before committing
        config.sweep.grid = opts.grid_override;
    }
    if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
    return config;
}

void add_common_options(CLI::App* cmd, GlobalOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Path to a run-config JSON file");
    cmd->add_option("--out", opts.out_dir, "Output directory (overrides output_dir in the config)");
    cmd->add_option("--seed-override", opts.seed_override,
                    "Base seed N: dataset=N, steering=N+1, transformer=N+2");
    cmd->add_option("--grid", opts.grid_override, "Alpha grid, \"lo:hi:n\" or \"logsym:lo:hi:n\"");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Numerical laboratory for steering-strength analysis"};
    app.require_subcommand(1);

    GlobalOptions opts;
    CLI::App* gen = app.add_subcommand("gen", "Generate the dataset JSON for a config");
    CLI::App* train = app.add_subcommand("train", "Train the UFM with gradient descent");
    CLI::App* sweep = app.add_subcommand("sweep", "Emit delta-p / concept / cross-entropy curves");
    CLI::App* verify = app.add_subcommand("verify-all", "Run the full invariant suite");
    CLI::App* tlimit = app.add_subcommand("transformer-limit", "Probe the large-alpha transformer limit");
    for (CLI::App* cmd : {gen, train, sweep, verify, tlimit}) add_common_options(cmd, opts);
    verify->add_option("--dataset", opts.dataset_path,
                       "Verify a dataset JSON file instead of the config-built dataset");

    CLI11_PARSE(app, argc, argv);

    try {
        const steerlab::RunConfig config = resolve_config(opts);
        const std::filesystem::path out_dir = config.output_dir;

        if (gen->parsed()) {
            steerlab::run_gen(config, out_dir);
            std::cout << "wrote " << (out_dir / "dataset.json").string() << "\n";
            return 0;
        }
        if (train->parsed()) {
            steerlab::run_train(config, out_dir);
            std::cout << "wrote " << (out_dir / "loss_trace.csv").string() << " and ufm_params.json\n";
            return 0;
        }
        if (sweep->parsed()) {
            steerlab::run_sweep_command(config, out_dir);
            std::cout << "wrote next_token.csv, concept.csv, cross_entropy.csv, summary.json under "
                      << out_dir.string() << "\n";
            return 0;
        }
        if (verify->parsed()) {
            std::optional<steerlab::DatasetSpec> override_ds;
            if (!opts.dataset_path.empty()) {
                std::ifstream in(opts.dataset_path);
                if (!in) throw std::runtime_error("cannot open dataset file " + opts.dataset_path);
                nlohmann::json j;
                in >> j;
                override_ds = steerlab::dataset_from_json(j);
            }
            const std::vector<steerlab::CheckResult> checks = steerlab::verify_all(config, override_ds);
            const nlohmann::json report = steerlab::report_to_json(checks);
            std::filesystem::create_directories(out_dir);
            std::ofstream out(out_dir / "verify_report.json");
            out << report.dump(2) << "\n";
            std::cout << report.dump(2) << "\n";
            return steerlab::count_failures(checks) == 0 ? 0 : 1;
        }
        if (tlimit->parsed()) {
            const int status = steerlab::run_transformer_limit_command(config, out_dir);
            std::cout << "wrote transformer_probe.csv and transformer_verdicts.json under "
                      << out_dir.string() << (status == 0 ? " (all pass)" : " (failures)") << "\n";
            return status;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
