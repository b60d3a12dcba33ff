#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dne/attacks.hpp"
#include "dne/dataset.hpp"
#include "dne/lexicon.hpp"
#include "dne/models.hpp"
#include "dne/smoothing.hpp"
#include "dne/training.hpp"

namespace dne {

/// Synthetic sentiment-like corpus. Every word belongs to one synonym
/// cluster; clusters are tight balls around random centers and carry a
/// signed polarity. A sentence's label is the sign of its polarity sum, so
/// within-cluster substitution never changes the gold label.
struct CorpusSpec {
  std::size_t clusters = 40;
  std::size_t cluster_size = 5;
  std::size_t dim = 16;
  std::size_t train = 2000;
  std::size_t val = 500;
  std::size_t test = 500;
  std::size_t min_len = 8;
  std::size_t max_len = 14;
  double center_scale = 1.0;  // std of cluster centers
  double word_noise = 0.3;    // std of a word around its center
  double polarity_signal = 0.0;  // centers shift by polarity * this along one shared direction
  double head_rate = 0.7;     // share of a cluster's occurrences using its head word
  std::string topology = "chain";  // chain: path through the cluster; clique: all pairs
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorpusFiles {
  std::filesystem::path embeddings;
  std::filesystem::path synonyms;
  std::filesystem::path train;
  std::filesystem::path val;
  std::filesystem::path test;
};

CorpusFiles corpus_files(const std::filesystem::path& dir);

/// Signed polarity of each cluster; a sentence is labelled 1 when its
/// words' polarities sum above zero.
std::vector<int> cluster_polarity(const CorpusSpec& spec);

/// Words are named c<cluster>s<member>, e.g. c03s1.
/// Writes embeddings.txt, synonyms.tsv and {train,val,test}.tsv under dir.
/// Output is a pure function of the spec.
CorpusFiles generate_synthetic(const CorpusSpec& spec, const std::filesystem::path& dir);

/// Which classifier the evaluation and attacks query.
enum class Deployment { Auto, Base, Smoothed };

std::string to_string(Deployment d);
Deployment parse_deployment(const std::string& name);

struct ExperimentSpec {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  CorpusSpec corpus;
  CorpusFiles data;
  bool symmetrize = true;
  ClassifierConfig model;
  TrainConfig train;
  EnsembleConfig ensemble;
  Deployment deploy = Deployment::Auto;  // Auto: base for ORIG, smoothed otherwise
  AttackBudget attack;
  std::size_t attack_examples = 500;
  std::vector<AttackKind> attacks{AttackKind::Pwws, AttackKind::Genetic};
  std::filesystem::path output_dir;

  /// Resolved choice for this spec's training mode.
  bool smoothed() const;
  /// Same spec with every derived seed recomputed from `seed`.
  void reseed();
  void validate() const;
};

/// Parses an INI-style config (sections [experiment], [data], [corpus],
/// [model], [train], [ensemble], [attack]). Overrides are `section.key=value`.
/// Data paths resolve against the config's directory; a relative output_dir
/// resolves against $DNE_OUTPUT_ROOT when set.
ExperimentSpec load_spec(const std::filesystem::path& config,
                         const std::vector<std::string>& overrides = {});
/// Same, starting from built-in defaults without a file.
ExperimentSpec default_spec(const std::vector<std::string>& overrides = {});

/// Loaded lexicon and splits for one spec.
struct Workspace {
  Lexicon lexicon;
  Dataset train, val, test;
};

Workspace load_workspace(const ExperimentSpec& spec);

/// Trains from the pretrained embeddings; writes metrics.jsonl, train.log
/// and model.ckpt (best validation epoch) into spec.output_dir.
Classifier train_model(const ExperimentSpec& spec, const Workspace& ws, TrainResult* result = nullptr);

ProbabilityFn deployed_predictor(const ExperimentSpec& spec, const Classifier& model,
                                 const SynonymGraph& graph, std::size_t example_index);

/// Clean accuracy of the deployed predictor on the test split.
double evaluate_clean(const ExperimentSpec& spec, const Classifier& model, const Workspace& ws);

/// Sorted test indices chosen uniformly without replacement from the spec seed.
std::vector<std::size_t> attack_indices(const ExperimentSpec& spec, std::size_t test_size);

struct CellResult {
  std::string name;
  bool ok = false;
  std::string error;
  double clean_acc = 0.0;  // on the attacked examples
  std::optional<double> pwws_acc;
  std::optional<double> ga_acc;
  std::size_t best_epoch = 0;
  std::size_t attacked = 0;

  nlohmann::ordered_json to_json() const;
};

/// Runs every attack in the spec; writes attack_<kind>.json and summary.json.
CellResult attack_model(const ExperimentSpec& spec, const Classifier& model, const Workspace& ws);

/// Train then attack. Failures are caught and reported in the result.
CellResult run_experiment(const ExperimentSpec& spec);

/// One cell per (alpha, lambda) in the grid, each in its own subdirectory.
std::vector<CellResult> run_sweep(const ExperimentSpec& spec,
                                  const std::vector<double>& alphas = {0.1, 1.0},
                                  const std::vector<double>& lambdas = {0.02, 0.1, 0.5});

/// Full DNE plus one row per disabled component.
std::vector<CellResult> run_ablation(const ExperimentSpec& spec);

/// ORIG, RAN and DNE under otherwise identical settings.
std::vector<CellResult> run_comparison(const ExperimentSpec& spec);

/// Aligned CLN / PWWS / GA table (percentages).
std::string format_table(const std::vector<CellResult>& cells);

/// Writes summary.json and summary.txt under dir.
void write_summary(const std::vector<CellResult>& cells, const std::filesystem::path& dir);

}  // namespace dne
