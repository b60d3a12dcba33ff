#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dne/attacks.hpp"
#include "dne/error.hpp"
#include "dne/harness.hpp"
#include "dne/simplex.hpp"
#include "dne/smoothing.hpp"

namespace py = pybind11;
using namespace dne;

namespace {

std::string cells_json(const std::vector<CellResult>& cells) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : cells) j.push_back(c.to_json());
  return j.dump();
}

AttackBudget budget_of(double ratio, std::size_t population, std::size_t generations, std::uint64_t seed) {
  AttackBudget b;
  b.max_substitution_ratio = ratio;
  b.ga_population = population;
  b.ga_generations = generations;
  b.seed = seed;
  b.validate();
  return b;
}

py::dict result_dict(const AttackResult& r) {
  py::dict d;
  d["original_ids"] = r.original_ids;
  d["adversarial_ids"] = r.adversarial_ids;
  py::list subs;
  for (const auto& s : r.substitutions) subs.append(py::make_tuple(s.position, s.from, s.to));
  d["substitutions"] = subs;
  d["label"] = r.label;
  d["success"] = r.success;
  d["skipped"] = r.skipped;
  d["queries"] = r.queries;
  d["generations"] = r.generations;
  d["probs_before"] = r.probs_before;
  d["probs_after"] = r.probs_after;
  return d;
}

ProbabilityFn from_python(py::function fn) {
  return [fn = std::move(fn)](std::span<const TokenId> ids) {
    py::gil_scoped_acquire gil;
    return fn(std::vector<TokenId>(ids.begin(), ids.end())).cast<std::vector<double>>();
  };
}

}  // namespace

PYBIND11_MODULE(_dne, m) {
  m.doc() = "Dirichlet neighborhood ensemble core";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);

  m.def("derive_seed", py::overload_cast<std::uint64_t, std::string_view>(&derive_seed), py::arg("parent"),
        py::arg("name"));

  m.def(
      "sample_dirichlet",
      [](std::vector<double> alpha, std::uint64_t seed) {
        Rng rng(seed);
        return sample_dirichlet(ConcentrationVector{std::move(alpha)}, rng).beta;
      },
      py::arg("alpha"), py::arg("seed"));
  m.def("cbwd_weight", [](std::vector<double> probs, double r) { return cbwd_weight(probs, r); },
        py::arg("probs"), py::arg("r") = 3.0);

  py::class_<SynonymGraph>(m, "SynonymGraph")
      .def(py::init<std::size_t>(), py::arg("vocab_size"))
      .def("add_edge", &SynonymGraph::add_edge)
      .def("symmetrize", &SynonymGraph::symmetrize)
      .def("synonyms", [](const SynonymGraph& g, TokenId id) {
        const auto s = g.synonyms(id);
        return std::vector<TokenId>(s.begin(), s.end());
      });

  py::class_<ExperimentSpec>(m, "Spec")
      .def_readwrite("name", &ExperimentSpec::name)
      .def_readonly("seed", &ExperimentSpec::seed)
      .def_readwrite("output_dir", &ExperimentSpec::output_dir)
      .def_property_readonly("data_dir", [](const ExperimentSpec& s) { return s.data.train.parent_path(); })
      .def_property_readonly("mode", [](const ExperimentSpec& s) { return to_string(s.train.mode); })
      .def("smoothed", &ExperimentSpec::smoothed);
  m.def("load_spec", &load_spec, py::arg("path"), py::arg("overrides") = std::vector<std::string>{});
  m.def("default_spec", &default_spec, py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "generate_corpus",
      [](const ExperimentSpec& s) {
        generate_synthetic(s.corpus, s.data.train.parent_path());
        return s.data.train.parent_path();
      },
      py::arg("spec"));

  py::class_<Workspace>(m, "Workspace")
      .def_property_readonly("vocab_size", [](const Workspace& w) { return w.lexicon.vocab.size(); })
      .def_property_readonly("graph", [](const Workspace& w) { return w.lexicon.synonyms; })
      .def("token_id", [](const Workspace& w, const std::string& t) { return w.lexicon.vocab.lookup_or_unk(t); })
      .def("token", [](const Workspace& w, TokenId id) { return w.lexicon.vocab.token(id); })
      .def("examples", [](const Workspace& w, const std::string& split) {
        const Dataset& d = split == "train" ? w.train : split == "val" ? w.val : w.test;
        std::vector<std::pair<std::vector<TokenId>, std::size_t>> out;
        for (const auto& ex : d.examples) out.emplace_back(ex.ids, ex.label);
        return out;
      });
  m.def("load_workspace", &load_workspace, py::arg("spec"));

  py::class_<Classifier>(m, "Classifier")
      .def("probabilities",
           [](const Classifier& c, const std::vector<TokenId>& ids) { return c.probabilities(ids); })
      .def("predict", [](const Classifier& c, const std::vector<TokenId>& ids) { return argmax(c.probabilities(ids)); })
      .def_property_readonly("arch", [](const Classifier& c) { return to_string(c.config().arch); })
      .def_property_readonly("classes", [](const Classifier& c) { return c.config().classes; })
      .def("save", [](const Classifier& c, const std::filesystem::path& p) { save_checkpoint(c, p); });
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "train_model",
      [](const ExperimentSpec& spec, const Workspace& ws) {
        TrainResult r;
        auto model = train_model(spec, ws, &r);
        return py::make_tuple(std::move(model), r.best_epoch, r.best_val_acc);
      },
      py::arg("spec"), py::arg("workspace"));
  m.def("evaluate_clean", &evaluate_clean, py::arg("spec"), py::arg("model"), py::arg("workspace"));
  m.def(
      "smooth_predict",
      [](const Classifier& model, const std::vector<TokenId>& ids, const Workspace& ws, const ExperimentSpec& spec,
         std::uint64_t stream) {
        const auto r = smooth_predict(model, ids, ws.lexicon.synonyms, spec.ensemble,
                                      spec.ensemble.concentration(spec.train.dirichlet()), stream);
        return py::make_tuple(r.label, r.avg_probs);
      },
      py::arg("model"), py::arg("ids"), py::arg("workspace"), py::arg("spec"), py::arg("stream") = 0);

  m.def(
      "pwws_attack",
      [](py::function predict, const std::vector<TokenId>& ids, std::size_t label, const SynonymGraph& graph,
         double ratio) {
        Predictor p(from_python(std::move(predict)));
        return result_dict(pwws_attack(p, ids, label, graph, budget_of(ratio, 20, 20, 0)));
      },
      py::arg("predict"), py::arg("ids"), py::arg("label"), py::arg("graph"), py::arg("ratio") = 0.25);
  m.def(
      "genetic_attack",
      [](py::function predict, const std::vector<TokenId>& ids, std::size_t label, const SynonymGraph& graph,
         double ratio, std::size_t population, std::size_t generations, std::uint64_t seed) {
        Predictor p(from_python(std::move(predict)));
        return result_dict(
            genetic_attack(p, ids, label, graph, budget_of(ratio, population, generations, seed)));
      },
      py::arg("predict"), py::arg("ids"), py::arg("label"), py::arg("graph"), py::arg("ratio") = 0.25,
      py::arg("population") = 20, py::arg("generations") = 20, py::arg("seed") = 0);

  m.def("run_experiment", [](const ExperimentSpec& s) { return run_experiment(s).to_json().dump(); });
  m.def("run_comparison", [](const ExperimentSpec& s) { return cells_json(run_comparison(s)); });
  m.def("run_ablation", [](const ExperimentSpec& s) { return cells_json(run_ablation(s)); });
  m.def(
      "run_sweep",
      [](const ExperimentSpec& s, std::vector<double> alphas, std::vector<double> lambdas) {
        return cells_json(run_sweep(s, alphas, lambdas));
      },
      py::arg("spec"), py::arg("alphas") = std::vector<double>{0.1, 1.0},
      py::arg("lambdas") = std::vector<double>{0.02, 0.1, 0.5});
}
