#include "dne/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dne/error.hpp"
#include "dne/rng.hpp"
#include "dne/simplex.hpp"

namespace dne {

ProbabilityFn base_predictor(const Classifier& model) {
  return [&model](std::span<const TokenId> ids) { return model.probabilities(ids); };
}

ProbabilityFn smoothed_predictor(const Classifier& model, const SynonymGraph& graph,
                                 EnsembleConfig cfg, DirichletParams conc, std::uint64_t stream) {
  cfg.validate();
  return [&model, &graph, cfg, conc, stream](std::span<const TokenId> ids) {
    return smooth_predict(model, ids, graph, cfg, conc, stream).avg_probs;
  };
}

void AttackBudget::validate() const {
  if (!(max_substitution_ratio > 0.0 && max_substitution_ratio <= 1.0))
    throw ParameterError("max_substitution_ratio must lie in (0, 1]");
  if (ga_population < 1) throw ParameterError("ga_population must be at least 1");
  if (ga_generations < 1) throw ParameterError("ga_generations must be at least 1");
  if (!(ga_mutation_rate >= 0.0 && ga_mutation_rate <= 1.0))
    throw ParameterError("ga_mutation_rate must lie in [0, 1]");
}

std::size_t AttackBudget::max_substitutions(std::size_t length) const {
  return static_cast<std::size_t>(std::floor(max_substitution_ratio * static_cast<double>(length) + 1e-9));
}

namespace {

bool flipped(std::span<const double> probs, std::size_t label) { return argmax(probs) != label; }

std::vector<std::size_t> attackable_positions(std::span<const TokenId> ids, const SynonymGraph& graph) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] != kPadId && !graph.synonyms(ids[i]).empty()) out.push_back(i);
  return out;
}

std::vector<Substitution> diff(std::span<const TokenId> from, std::span<const TokenId> to) {
  std::vector<Substitution> subs;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i] != to[i]) subs.push_back({i, from[i], to[i]});
  return subs;
}

AttackResult start_result(Predictor& predict, std::span<const TokenId> ids, std::size_t label) {
  AttackResult r;
  r.original_ids.assign(ids.begin(), ids.end());
  r.adversarial_ids = r.original_ids;
  r.label = label;
  r.probs_before = predict(ids);
  r.probs_after = r.probs_before;
  if (label >= r.probs_before.size()) throw ParameterError("label out of range for predictor output");
  if (flipped(r.probs_before, label)) {
    r.success = true;
    r.skipped = true;
  }
  return r;
}

void finish(AttackResult& r, const Predictor& predict) {
  r.substitutions = diff(r.original_ids, r.adversarial_ids);
  r.queries = predict.queries();
}

}  // namespace

AttackResult pwws_attack(Predictor& predict, std::span<const TokenId> ids, std::size_t label,
                         const SynonymGraph& graph, const AttackBudget& budget) {
  budget.validate();
  AttackResult r = start_result(predict, ids, label);
  const std::size_t limit = budget.max_substitutions(ids.size());
  const auto positions = attackable_positions(ids, graph);
  if (r.skipped || limit == 0 || positions.empty()) {
    finish(r, predict);
    return r;
  }

  const double p_label = r.probs_before[label];
  std::vector<TokenId> work(ids.begin(), ids.end());
  std::vector<double> saliency(positions.size());
  std::vector<double> best_drop(positions.size());
  std::vector<TokenId> best_word(positions.size());
  std::vector<std::vector<double>> best_probs(positions.size());

  for (std::size_t k = 0; k < positions.size(); ++k) {
    const std::size_t i = positions[k];
    work[i] = kUnkId;
    saliency[k] = p_label - predict(work)[label];
    bool first = true;
    for (TokenId syn : graph.synonyms(ids[i])) {
      work[i] = syn;
      auto probs = predict(work);
      const double drop = p_label - probs[label];
      if (first || drop > best_drop[k]) {
        best_drop[k] = drop;
        best_word[k] = syn;
        best_probs[k] = std::move(probs);
        first = false;
      }
    }
    work[i] = ids[i];
  }

  const auto weights = softmax(saliency);
  std::vector<double> score(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) score[k] = weights[k] * best_drop[k];
  std::vector<std::size_t> order(positions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  std::size_t used = 0;
  for (std::size_t k : order) {
    if (used == limit) break;
    work[positions[k]] = best_word[k];
    ++used;
    // The first substitution was already scored while picking substitutes.
    r.probs_after = used == 1 ? best_probs[k] : predict(work);
    if (flipped(r.probs_after, label)) {
      r.success = true;
      break;
    }
  }
  r.adversarial_ids = work;
  finish(r, predict);
  return r;
}

namespace {

class GeneticSearch {
 public:
  GeneticSearch(Predictor& predict, std::span<const TokenId> ids, std::size_t label,
                const SynonymGraph& graph, std::size_t limit, std::vector<std::size_t> positions,
                Rng& rng)
      : predict_(predict), original_(ids.begin(), ids.end()), label_(label), graph_(graph),
        limit_(limit), positions_(std::move(positions)), rng_(rng) {}

  using Individual = std::vector<TokenId>;

  const std::vector<double>& probs(const Individual& ind) {
    auto it = cache_.find(ind);
    if (it == cache_.end()) it = cache_.emplace(ind, predict_(ind)).first;
    return it->second;
  }

  double fitness(const Individual& ind) { return 1.0 - probs(ind)[label_]; }

  std::size_t changed(const Individual& ind) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < ind.size(); ++i) n += ind[i] != original_[i];
    return n;
  }

  /// Re-substitutes one random position. Once the budget is full only
  /// already-changed positions are eligible.
  void perturb(Individual& ind) {
    std::vector<std::size_t> eligible;
    if (changed(ind) < limit_) {
      eligible = positions_;
    } else {
      for (std::size_t i : positions_)
        if (ind[i] != original_[i]) eligible.push_back(i);
    }
    if (eligible.empty()) return;
    const std::size_t pos = eligible[rng_.index(eligible.size())];
    const auto options = graph_.substitutes(original_[pos]);
    std::vector<TokenId> choices;
    for (TokenId t : options)
      if (t != ind[pos]) choices.push_back(t);
    if (choices.empty()) return;
    ind[pos] = choices[rng_.index(choices.size())];
  }

  void enforce_budget(Individual& ind) {
    std::vector<std::size_t> changed_at;
    for (std::size_t i = 0; i < ind.size(); ++i)
      if (ind[i] != original_[i]) changed_at.push_back(i);
    while (changed_at.size() > limit_) {
      const std::size_t k = rng_.index(changed_at.size());
      ind[changed_at[k]] = original_[changed_at[k]];
      changed_at.erase(changed_at.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }

  std::size_t pick_parent(std::span<const double> fit) {
    const double total = std::accumulate(fit.begin(), fit.end(), 0.0);
    if (!(total > 0.0)) return rng_.index(fit.size());
    double u = rng_.uniform() * total;
    for (std::size_t i = 0; i < fit.size(); ++i) {
      u -= fit[i];
      if (u < 0.0) return i;
    }
    return fit.size() - 1;
  }

  Individual crossover(const Individual& a, const Individual& b) {
    Individual child(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) child[i] = rng_.bernoulli(0.5) ? a[i] : b[i];
    return child;
  }

  const Individual& original() const { return original_; }
  std::size_t label() const { return label_; }

 private:
  Predictor& predict_;
  Individual original_;
  std::size_t label_;
  const SynonymGraph& graph_;
  std::size_t limit_;
  std::vector<std::size_t> positions_;
  Rng& rng_;
  std::map<Individual, std::vector<double>> cache_;
};

}  // namespace

AttackResult genetic_attack(Predictor& predict, std::span<const TokenId> ids, std::size_t label,
                            const SynonymGraph& graph, const AttackBudget& budget,
                            std::uint64_t stream) {
  budget.validate();
  AttackResult r = start_result(predict, ids, label);
  const std::size_t limit = budget.max_substitutions(ids.size());
  auto positions = attackable_positions(ids, graph);
  if (r.skipped || limit == 0 || positions.empty()) {
    finish(r, predict);
    return r;
  }

  Rng rng(derive_seed(derive_seed(budget.seed, "genetic"), stream));
  GeneticSearch search(predict, ids, label, graph, limit, std::move(positions), rng);
  using Individual = GeneticSearch::Individual;

  std::vector<Individual> population(budget.ga_population, search.original());
  for (auto& ind : population) search.perturb(ind);

  std::vector<double> fit(population.size());
  std::size_t best = 0;
  auto evaluate = [&] {
    best = 0;
    for (std::size_t i = 0; i < population.size(); ++i) {
      fit[i] = search.fitness(population[i]);
      if (fit[i] > fit[best]) best = i;
    }
    return flipped(search.probs(population[best]), label);
  };

  bool done = evaluate();
  std::size_t generation = 0;
  while (!done && generation < budget.ga_generations) {
    ++generation;
    std::vector<Individual> next;
    next.reserve(population.size());
    next.push_back(population[best]);
    while (next.size() < population.size()) {
      const std::size_t a = search.pick_parent(fit);
      const std::size_t b = search.pick_parent(fit);
      Individual child = search.crossover(population[a], population[b]);
      search.enforce_budget(child);
      if (rng.bernoulli(budget.ga_mutation_rate)) search.perturb(child);
      next.push_back(std::move(child));
    }
    population = std::move(next);
    done = evaluate();
  }

  r.generations = generation;
  r.success = done;
  // Keep the original when nothing lowered the label probability.
  if (done || fit[best] > 1.0 - r.probs_before[label]) {
    r.adversarial_ids = population[best];
    r.probs_after = search.probs(population[best]);
  }
  finish(r, predict);
  return r;
}

bool substitutions_valid(const AttackResult& result, const SynonymGraph& graph,
                         const AttackBudget& budget) {
  if (result.original_ids.size() != result.adversarial_ids.size()) return false;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < result.original_ids.size(); ++i) {
    const TokenId from = result.original_ids[i];
    const TokenId to = result.adversarial_ids[i];
    if (from == to) continue;
    ++changed;
    const auto syn = graph.synonyms(from);
    if (!std::binary_search(syn.begin(), syn.end(), to)) return false;
  }
  return changed <= budget.max_substitutions(result.original_ids.size()) &&
         changed == result.substitutions.size();
}

std::string to_string(AttackKind kind) { return kind == AttackKind::Pwws ? "pwws" : "ga"; }

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "pwws") return AttackKind::Pwws;
  if (name == "ga" || name == "genetic") return AttackKind::Genetic;
  throw ParameterError("unknown attack '" + name + "' (expected pwws or ga)");
}

nlohmann::ordered_json RobustnessReport::to_json(const Vocabulary* vocab) const {
  nlohmann::ordered_json out;
  out["attack"] = to_string(kind);
  out["examples"] = results.size();
  out["clean_acc"] = clean_acc;
  out["robust_acc"] = robust_acc;
  out["avg_substitutions"] = avg_substitutions;
  out["avg_queries"] = avg_queries;
  auto tokens = [&](const std::vector<TokenId>& ids) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (TokenId id : ids) {
      if (vocab) arr.push_back(vocab->token(id));
      else arr.push_back(id);
    }
    return arr;
  };
  auto& rows = out["per_example"] = nlohmann::ordered_json::array();
  for (std::size_t n = 0; n < results.size(); ++n) {
    const auto& res = results[n];
    nlohmann::ordered_json row;
    row["index"] = indices[n];
    row["label"] = res.label;
    row["clean_correct"] = !res.skipped;
    row["robust_correct"] = !res.skipped && !res.success;
    row["success"] = res.success;
    row["skipped"] = res.skipped;
    row["queries"] = res.queries;
    if (kind == AttackKind::Genetic) row["generations"] = res.generations;
    row["original"] = tokens(res.original_ids);
    row["adversarial"] = tokens(res.adversarial_ids);
    auto& subs = row["substitutions"] = nlohmann::ordered_json::array();
    for (const auto& s : res.substitutions) {
      nlohmann::ordered_json item;
      item["position"] = s.position;
      if (vocab) {
        item["from"] = vocab->token(s.from);
        item["to"] = vocab->token(s.to);
      } else {
        item["from"] = s.from;
        item["to"] = s.to;
      }
      subs.push_back(std::move(item));
    }
    row["probs_before"] = res.probs_before;
    row["probs_after"] = res.probs_after;
    rows.push_back(std::move(row));
  }
  return out;
}

RobustnessReport evaluate_robustness(const PredictorFactory& factory, const Dataset& data,
                                     std::span<const std::size_t> indices, AttackKind kind,
                                     const SynonymGraph& graph, const AttackBudget& budget) {
  budget.validate();
  RobustnessReport report;
  report.kind = kind;
  report.indices.assign(indices.begin(), indices.end());
  std::size_t clean = 0, robust = 0, successes = 0, subs = 0, queries = 0;
  for (std::size_t index : indices) {
    if (index >= data.size()) throw ParameterError("attack index out of range");
    const Example& ex = data.examples[index];
    Predictor predict(factory(index));
    AttackResult res = kind == AttackKind::Pwws
                           ? pwws_attack(predict, ex.ids, ex.label, graph, budget)
                           : genetic_attack(predict, ex.ids, ex.label, graph, budget, index);
    if (!res.skipped) {
      ++clean;
      if (res.success) {
        ++successes;
        subs += res.substitutions.size();
      } else {
        ++robust;
      }
    }
    queries += res.queries;
    report.results.push_back(std::move(res));
  }
  const double n = static_cast<double>(indices.size());
  if (!indices.empty()) {
    report.clean_acc = static_cast<double>(clean) / n;
    report.robust_acc = static_cast<double>(robust) / n;
    report.avg_queries = static_cast<double>(queries) / n;
  }
  if (successes > 0) report.avg_substitutions = static_cast<double>(subs) / static_cast<double>(successes);
  return report;
}

}  // namespace dne
