#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dne/dataset.hpp"
#include "dne/lexicon.hpp"
#include "dne/models.hpp"
#include "dne/smoothing.hpp"
#include "dne/training.hpp"

namespace dne {

/// Maps a token sequence to a class-probability vector.
using ProbabilityFn = std::function<std::vector<double>(std::span<const TokenId>)>;

/// Query interface used by the attacks; counts every model call.
class Predictor {
 public:
  explicit Predictor(ProbabilityFn fn) : fn_(std::move(fn)) {}
  std::vector<double> operator()(std::span<const TokenId> ids) {
    ++queries_;
    return fn_(ids);
  }
  std::size_t queries() const { return queries_; }

 private:
  ProbabilityFn fn_;
  std::size_t queries_ = 0;
};

ProbabilityFn base_predictor(const Classifier& model);
/// The smoothed classifier with a fixed per-example stream, so repeated
/// queries of one example share their random draws.
ProbabilityFn smoothed_predictor(const Classifier& model, const SynonymGraph& graph,
                                 EnsembleConfig cfg, DirichletParams conc, std::uint64_t stream);

struct AttackBudget {
  double max_substitution_ratio = 0.25;
  std::size_t ga_population = 20;
  std::size_t ga_generations = 20;
  double ga_mutation_rate = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
  /// floor(ratio * length).
  std::size_t max_substitutions(std::size_t length) const;
};

struct Substitution {
  std::size_t position = 0;
  TokenId from = kPadId;
  TokenId to = kPadId;
};

struct AttackResult {
  std::vector<TokenId> original_ids;
  std::vector<TokenId> adversarial_ids;
  std::vector<Substitution> substitutions;  // ascending position
  std::size_t label = 0;
  bool success = false;
  bool skipped = false;  // misclassified before any substitution
  std::size_t queries = 0;
  std::size_t generations = 0;  // genetic attack only
  std::vector<double> probs_before;
  std::vector<double> probs_after;
};

/// Greedy word-saliency attack. Saliency of position i is the drop in the
/// label probability when i becomes UNK; each position's best substitute is
/// the synonym with the largest drop; positions are visited in decreasing
/// softmax(saliency) * best-drop and substituted until the label flips or the
/// budget runs out.
AttackResult pwws_attack(Predictor& predict, std::span<const TokenId> ids, std::size_t label,
                         const SynonymGraph& graph, const AttackBudget& budget);

/// Population attack: fitness 1 - p_label, elitism, fitness-proportional
/// parents, uniform per-position crossover, random re-substitution mutation.
AttackResult genetic_attack(Predictor& predict, std::span<const TokenId> ids, std::size_t label,
                            const SynonymGraph& graph, const AttackBudget& budget,
                            std::uint64_t stream = 0);

/// True when every changed position holds a member of S(original word) and
/// the substitution count fits the budget.
bool substitutions_valid(const AttackResult& result, const SynonymGraph& graph,
                         const AttackBudget& budget);

enum class AttackKind { Pwws, Genetic };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

/// Builds the query function for one example (by dataset index).
using PredictorFactory = std::function<ProbabilityFn(std::size_t example_index)>;

struct RobustnessReport {
  AttackKind kind = AttackKind::Genetic;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double avg_substitutions = 0.0;  // over successful attacks
  double avg_queries = 0.0;
  std::vector<std::size_t> indices;
  std::vector<AttackResult> results;

  nlohmann::ordered_json to_json(const Vocabulary* vocab = nullptr) const;
};

/// Attacks every listed example. Examples misclassified before the attack
/// count against robust accuracy.
RobustnessReport evaluate_robustness(const PredictorFactory& factory, const Dataset& data,
                                     std::span<const std::size_t> indices, AttackKind kind,
                                     const SynonymGraph& graph, const AttackBudget& budget);

}  // namespace dne
