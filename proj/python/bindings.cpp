#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "steerlab/alpha_analysis.hpp"
#include "steerlab/run_config.hpp"
#include "steerlab/sweep_runner.hpp"
#include "steerlab/toy_transformer.hpp"
#include "steerlab/verify.hpp"

namespace py = pybind11;
using namespace steerlab;

namespace {

std::vector<std::vector<double>> matrix_rows(const Matrix& m) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows));
    for (int r = 0; r < m.rows; ++r) rows[static_cast<std::size_t>(r)].assign(m.row(r).begin(), m.row(r).end());
    return rows;
}

DatasetSpec make_symmetric_dataset(int vocab_size, int group_count, int sequence_length,
                                   double epsilon, int contexts_per_concept, std::uint64_t seed,
                                   std::vector<double> pi) {
    DatasetConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.group_count = group_count;
    cfg.sequence_length = sequence_length;
    cfg.epsilon = epsilon;
    cfg.contexts_per_concept = contexts_per_concept;
    cfg.seed = seed;
    cfg.pi = std::move(pi);
    return build_dataset(cfg);
}

DatasetSpec make_weighted_dataset(int vocab_size, int group_count, int sequence_length,
                                  double epsilon, std::vector<double> gamma, std::vector<double> omega,
                                  int contexts_per_concept, std::uint64_t seed,
                                  std::vector<double> pi) {
    DatasetConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.group_count = group_count;
    cfg.sequence_length = sequence_length;
    cfg.epsilon = epsilon;
    cfg.gamma = std::move(gamma);
    cfg.omega = std::move(omega);
    cfg.contexts_per_concept = contexts_per_concept;
    cfg.seed = seed;
    cfg.pi = std::move(pi);
    return build_dataset(cfg);
}

std::string peak_kind(const PeakPoint& p) {
    switch (p.kind) {
        case PeakPoint::Kind::plus_infinite: return "+inf";
        case PeakPoint::Kind::minus_infinite: return "-inf";
        default: return "finite";
    }
}

}  // namespace

PYBIND11_MODULE(_steerlab, m) {
    m.doc() = "Steering-strength analysis laboratory: concept datasets, the unconstrained "
              "features model, difference-of-means steering, alpha sweeps, and a toy transformer.";

    py::class_<ConceptPartition>(m, "ConceptPartition")
        .def_readonly("vocab_size", &ConceptPartition::vocab_size)
        .def_readonly("group_count", &ConceptPartition::group_count)
        .def_readonly("concept_size", &ConceptPartition::concept_size)
        .def("concept_of", &ConceptPartition::concept_of, py::arg("token"));
    m.def("build_partition", &build_partition, py::arg("vocab_size"), py::arg("group_count"));

    py::class_<Context>(m, "Context")
        .def_readonly("tokens", &Context::tokens)
        .def_readonly("concept_label", &Context::concept_label);

    py::class_<DatasetSpec>(m, "DatasetSpec")
        .def_readonly("partition", &DatasetSpec::partition)
        .def_readonly("in_concept_prob", &DatasetSpec::in_concept_prob)
        .def_readonly("off_concept_prob", &DatasetSpec::off_concept_prob)
        .def_readonly("contexts", &DatasetSpec::contexts)
        .def_readonly("context_weights", &DatasetSpec::context_weights)
        .def_readonly("sequence_length", &DatasetSpec::sequence_length)
        .def_property_readonly("num_contexts", &DatasetSpec::num_contexts)
        .def("to_json", [](const DatasetSpec& ds) { return dataset_to_json(ds).dump(); });
    m.def("dataset_from_json",
          [](const std::string& text) { return dataset_from_json(nlohmann::json::parse(text)); },
          py::arg("text"));
    m.def("make_symmetric_dataset", &make_symmetric_dataset, py::arg("vocab_size"),
          py::arg("group_count"), py::arg("sequence_length"), py::arg("epsilon"),
          py::arg("contexts_per_concept"), py::arg("seed"), py::arg("pi") = std::vector<double>{});
    m.def("make_weighted_dataset", &make_weighted_dataset, py::arg("vocab_size"),
          py::arg("group_count"), py::arg("sequence_length"), py::arg("epsilon"), py::arg("gamma"),
          py::arg("omega"), py::arg("contexts_per_concept"), py::arg("seed"),
          py::arg("pi") = std::vector<double>{});
    m.def("next_token_distribution", &next_token_distribution, py::arg("dataset"),
          py::arg("context_index"));
    m.def("dataset_entropy", &dataset_entropy, py::arg("dataset"));

    py::class_<UfmParams>(m, "UfmParams")
        .def_readonly("vocab_size", &UfmParams::vocab_size)
        .def_readonly("dim", &UfmParams::dim)
        .def_readonly("num_contexts", &UfmParams::num_contexts)
        .def("embedding", &UfmParams::embedding, py::arg("context_index"))
        .def("to_json", [](const UfmParams& p) { return ufm_to_json(p).dump(); });
    m.def("analytic_perfect_fit", &analytic_perfect_fit, py::arg("dataset"));
    m.def("logits", &logits, py::arg("params"), py::arg("context_index"));
    m.def("cross_entropy", &cross_entropy, py::arg("params"), py::arg("dataset"));
    m.def("train_gd",
          [](const DatasetSpec& ds, int dim, double learning_rate, int steps, double init_scale,
             std::uint64_t seed) {
              GdOptions options{dim, learning_rate, steps, init_scale, seed};
              GdResult result = train_gd(ds, options);
              return py::make_tuple(std::move(result.params), std::move(result.loss_trace));
          },
          py::arg("dataset"), py::arg("dim") = 0, py::arg("learning_rate") = 0.5,
          py::arg("steps") = 20000, py::arg("init_scale") = 0.01, py::arg("seed") = 0);

    py::class_<IndexSets>(m, "IndexSets")
        .def(py::init([](std::vector<int> positive, std::vector<int> negative) {
                 return IndexSets{std::move(positive), std::move(negative)};
             }),
             py::arg("positive"), py::arg("negative"))
        .def_readonly("positive", &IndexSets::positive)
        .def_readonly("negative", &IndexSets::negative)
        .def_property_readonly("pair_count", &IndexSets::pair_count);
    m.def("build_index_sets",
          [](const DatasetSpec& ds, int target, const std::string& mode, int pair_count,
             std::uint64_t seed, int opposite) {
              return build_index_sets(ds, target, negative_mode_from_string(mode), pair_count, seed,
                                      opposite);
          },
          py::arg("dataset"), py::arg("target_concept"), py::arg("mode"), py::arg("pair_count"),
          py::arg("seed"), py::arg("opposite_concept") = -1);
    m.def("steering_vector", &steering_vector, py::arg("params"), py::arg("sets"));
    m.def("steered_logits",
          [](const UfmParams& params, const std::vector<double>& v, int j, double alpha) {
              return steered_logits(params, v, j, alpha);
          },
          py::arg("params"), py::arg("direction"), py::arg("context_index"), py::arg("alpha"));

    py::class_<LogOddsProfile>(m, "LogOddsProfile")
        .def_readonly("values", &LogOddsProfile::values)
        .def_readonly("argmax_set", &LogOddsProfile::argmax_set)
        .def_readonly("argmin_set", &LogOddsProfile::argmin_set)
        .def_readonly("max_value", &LogOddsProfile::max_value)
        .def_readonly("min_value", &LogOddsProfile::min_value)
        .def("attains_max", &LogOddsProfile::attains_max, py::arg("token"))
        .def("attains_min", &LogOddsProfile::attains_min, py::arg("token"));
    m.def("log_odds", &log_odds, py::arg("dataset"), py::arg("sets"), py::arg("tie_tolerance") = 1e-9);
    m.def("steered_probs_closed_form", &steered_probs_closed_form, py::arg("dataset"),
          py::arg("profile"), py::arg("context_index"), py::arg("alpha"));

    m.def("delta_p", &delta_p);
    m.def("delta_p_derivative", &delta_p_derivative);
    m.def("expected_log_odds", &expected_log_odds);
    m.def("expected_log_odds_derivative", &expected_log_odds_derivative);
    py::class_<PeakPoint>(m, "PeakPoint")
        .def_property_readonly("kind", &peak_kind)
        .def_property_readonly("finite", &PeakPoint::finite)
        .def_readonly("alpha", &PeakPoint::alpha)
        .def_readonly("residual", &PeakPoint::residual);
    m.def("peak_alpha",
          [](const DatasetSpec& ds, const LogOddsProfile& profile, int j, int z, double lo, double hi,
             double tol) {
              PeakOptions options;
              options.bracket_lo = lo;
              options.bracket_hi = hi;
              options.tolerance = tol;
              return peak_alpha(ds, profile, j, z, options);
          },
          py::arg("dataset"), py::arg("profile"), py::arg("context_index"), py::arg("token"),
          py::arg("bracket_lo") = -10.0, py::arg("bracket_hi") = 10.0, py::arg("tolerance") = 1e-10);
    m.def("concept_increase", &concept_increase);
    py::class_<TanhParts>(m, "TanhParts")
        .def_readonly("intercept", &TanhParts::intercept)
        .def_readonly("drift", &TanhParts::drift)
        .def_readonly("reconstruction_error", &TanhParts::reconstruction_error);
    m.def("tanh_decomposition", &tanh_decomposition, py::arg("dataset"), py::arg("profile"),
          py::arg("context_index"), py::arg("concept"), py::arg("alpha"),
          py::arg("quadrature_points") = 512);
    m.def("delta_ce",
          [](const DatasetSpec& ds, const UfmParams& params, const std::vector<double>& v,
             double alpha) { return delta_ce(ds, params, v, alpha); },
          py::arg("dataset"), py::arg("params"), py::arg("direction"), py::arg("alpha"));
    m.def("ce_quadratic_coefficient", &ce_quadratic_coefficient, py::arg("dataset"),
          py::arg("profile"));
    m.def("delta_p_limit", &delta_p_limit, py::arg("dataset"), py::arg("profile"),
          py::arg("context_index"), py::arg("token"), py::arg("sign"));
    m.def("logsym_alpha_grid", &logsym_alpha_grid, py::arg("lo_magnitude"), py::arg("hi_magnitude"),
          py::arg("per_side"));

    py::class_<TransformerParams>(m, "TransformerParams")
        .def_property_readonly("layers", [](const TransformerParams& p) { return p.config.layers; })
        .def_property_readonly("dim", [](const TransformerParams& p) { return p.config.dim; })
        .def_property_readonly("vocab", [](const TransformerParams& p) { return p.config.vocab; })
        .def_property_readonly("norm",
                               [](const TransformerParams& p) { return std::string(to_string(p.config.norm_kind)); });
    m.def("make_transformer",
          [](int layers, int dim, int vocab, int seq_len, const std::string& norm_name,
             std::uint64_t seed) {
              TransformerConfig cfg;
              cfg.layers = layers;
              cfg.dim = dim;
              cfg.vocab = vocab;
              cfg.seq_len = seq_len;
              cfg.norm_kind = norm_kind_from_string(norm_name);
              cfg.seed = seed;
              return make_transformer(cfg);
          },
          py::arg("layers") = 2, py::arg("dim") = 16, py::arg("vocab") = 50, py::arg("seq_len") = 8,
          py::arg("norm") = "rmsnorm", py::arg("seed") = 0);
    m.def("make_direction", &make_direction, py::arg("dim"), py::arg("seed"));
    m.def("norm",
          [](const std::vector<double>& x, const std::vector<double>& gain, const std::string& kind) {
              return norm(x, gain, norm_kind_from_string(kind));
          },
          py::arg("x"), py::arg("gain"), py::arg("kind") = "rmsnorm");
    m.def("forward",
          [](const TransformerParams& params, const std::vector<int>& tokens) {
              return matrix_rows(forward(params, tokens));
          },
          py::arg("params"), py::arg("tokens"));
    m.def("forward_steered",
          [](const TransformerParams& params, const std::vector<int>& tokens, int layer,
             const std::vector<double>& v, double alpha, bool last_position_only) {
              return matrix_rows(forward_steered(params, tokens, layer, v, alpha, last_position_only));
          },
          py::arg("params"), py::arg("tokens"), py::arg("layer"), py::arg("direction"),
          py::arg("alpha"), py::arg("last_position_only") = false);
    m.def("limit_logits",
          [](const TransformerParams& params, const std::vector<double>& v, int sign) {
              return limit_logits(params, v, sign);
          },
          py::arg("params"), py::arg("direction"), py::arg("sign"));
    m.def("softmax_gap",
          [](const TransformerParams& params, const std::vector<int>& tokens, int layer,
             const std::vector<double>& v, double alpha) {
              return softmax_gap(params, tokens, layer, v, alpha);
          },
          py::arg("params"), py::arg("tokens"), py::arg("layer"), py::arg("direction"),
          py::arg("alpha"));
    m.def("remainder_bound_probe",
          [](const TransformerParams& params, const std::vector<int>& tokens, int layer,
             const std::vector<double>& v, const std::vector<double>& grid) {
              const RemainderProbe probe = remainder_bound_probe(params, tokens, layer, v, grid);
              return py::make_tuple(probe.alphas, probe.sup_remainder, probe.max_entry);
          },
          py::arg("params"), py::arg("tokens"), py::arg("layer"), py::arg("direction"),
          py::arg("alpha_grid"));
    m.def("sample_sequences", &sample_sequences, py::arg("count"), py::arg("seq_len"),
          py::arg("vocab"), py::arg("seed"));
    m.def("corpus_cross_entropy", &corpus_cross_entropy, py::arg("params"), py::arg("sequences"));
    m.def("steered_corpus_cross_entropy",
          [](const TransformerParams& params, const std::vector<std::vector<int>>& sequences,
             int layer, const std::vector<double>& v, double alpha) {
              return steered_corpus_cross_entropy(params, sequences, layer, v, alpha);
          },
          py::arg("params"), py::arg("sequences"), py::arg("layer"), py::arg("direction"),
          py::arg("alpha"));
    m.def("train_toy_gd",
          [](TransformerParams& params, const std::vector<std::vector<int>>& sequences,
             double learning_rate, int steps) {
              return train_toy_gd(params, sequences, learning_rate, steps);
          },
          py::arg("params"), py::arg("sequences"), py::arg("learning_rate") = 0.05,
          py::arg("steps") = 50);

    m.def("verify_all",
          [](const std::string& config_json) {
              const RunConfig config = config_json.empty()
                                           ? default_config()
                                           : config_from_json(nlohmann::json::parse(config_json));
              return report_to_json(verify_all(config)).dump();
          },
          py::arg("config_json") = std::string(), "Run the invariant suite; returns the JSON report.");
    m.def("default_config_json", [] { return config_to_json(default_config()).dump(); });
}
