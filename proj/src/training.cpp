#include "dne/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dne/error.hpp"

namespace dne {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Orig: return "orig";
    case TrainMode::Ran: return "ran";
    case TrainMode::Dne: return "dne";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "orig") return TrainMode::Orig;
  if (lower == "ran") return TrainMode::Ran;
  if (lower == "dne") return TrainMode::Dne;
  throw ParameterError("unknown training mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs == 0 || epochs > 20) throw ParameterError("epochs must lie in [1, 20]");
  if (batch == 0) throw ParameterError("batch must be positive");
  if (!(lr > 0.0)) throw ParameterError("lr must be positive");
  if (weight_decay < 0.0) throw ParameterError("weight_decay must be non-negative");
  if (!(grad_clip > 0.0)) throw ParameterError("grad_clip must be positive");
  if (adv_steps > 0 && !(adv_epsilon > 0.0)) throw ParameterError("adv_epsilon must be positive");
  if (mode == TrainMode::Dne) {
    if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
    if (!(lambda > 0.0 && lambda <= 0.5)) throw ParameterError("lambda must lie in (0, 0.5]");
  }
}

VirtualSentence make_virtual(std::span<const TokenId> ids, const SynonymGraph& graph,
                             const DirichletParams& params, bool expand, Rng& rng) {
  VirtualSentence vs;
  vs.ids.assign(ids.begin(), ids.end());
  vs.nbhs.reserve(ids.size());
  vs.points.reserve(ids.size());
  for (TokenId id : ids) {
    if (id == kPadId) {
      vs.nbhs.push_back(Neighborhood{kPadId, {kPadId}, {}});
      vs.points.push_back(SimplexPoint{{1.0}, {0.0}});
      continue;
    }
    vs.nbhs.push_back(neighborhood(graph, id, expand));
    vs.points.push_back(sample_dirichlet(build_alpha(vs.nbhs.back(), params.alpha, params.lambda), rng));
  }
  return vs;
}

namespace {

struct PointLoss {
  ad::NodeRef loss;
  std::size_t predicted = 0;
};

PointLoss scored_loss(const Classifier& model, const ad::NodeRef& embedded, std::size_t label) {
  if (label >= model.config().classes)
    throw ParameterError("label " + std::to_string(label) + " outside " +
                         std::to_string(model.config().classes) + " classes");
  auto scores = model.score(embedded);
  auto logp = ad::log_softmax_rows(scores);
  return {ad::scale(ad::pick(logp, 0, label), -1.0), argmax(scores->value())};
}

ad::NodeRef cross_entropy(const Classifier& model, const ad::NodeRef& embedded, std::size_t label) {
  return scored_loss(model, embedded, label).loss;
}

}  // namespace

ad::NodeRef virtual_loss(const Classifier& model, const VirtualSentence& vs, std::size_t label,
                         Rng* dropout_rng, bool coordinated) {
  return cross_entropy(model, model.embed_virtual(vs, dropout_rng, coordinated).sequence, label);
}

ad::NodeRef discrete_loss(const Classifier& model, std::span<const TokenId> ids, std::size_t label,
                          Rng* dropout_rng) {
  return cross_entropy(model, model.embed_discrete(ids, dropout_rng), label);
}

std::vector<VirtualSentence> search_iterates(const Classifier& model, const VirtualSentence& start,
                                             std::size_t label, const SearchOptions& options) {
  std::vector<VirtualSentence> iterates;
  if (options.steps == 0) return iterates;
  if (label >= model.config().classes) throw ParameterError("label outside class range");

  FrozenParameters frozen(model);
  const VirtualSentence* current = &start;
  for (std::size_t step = 0; step < options.steps; ++step) {
    auto emb = model.embed_virtual(*current, nullptr, true, true);
    auto logp = ad::pick(ad::log_softmax_rows(model.score(emb.sequence)), 0, label);
    ad::backward(logp);

    std::vector<double> norms(emb.etas.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < emb.etas.size(); ++i) {
      for (double g : emb.etas[i]->grad()) norms[i] += g * g;
      total += norms[i];
    }
    total = std::sqrt(total);
    if (!(total >= 1e-12)) break;

    VirtualSentence next{current->ids, current->nbhs, {}};
    next.points.reserve(current->size());
    for (std::size_t i = 0; i < emb.etas.size(); ++i) {
      const auto& g = emb.etas[i]->grad();
      std::vector<double> eta(current->points[i].eta);
      double factor = options.epsilon;
      if (options.update == SearchUpdate::Normalized) {
        const double norm = options.norm == SearchNorm::Global ? total : std::sqrt(norms[i]);
        factor = norm >= 1e-12 ? options.epsilon / norm : 0.0;
      }
      for (std::size_t j = 0; j < eta.size(); ++j) eta[j] -= factor * g[j];
      next.points.push_back(reparameterize(eta));
    }
    iterates.push_back(std::move(next));
    current = &iterates.back();
  }
  return iterates;
}

std::vector<VirtualSentence> adversarial_search(const Classifier& model,
                                                const VirtualSentence& start, std::size_t label,
                                                const SearchOptions& options) {
  if (options.steps == 0) throw ParameterError("adversarial search needs at least one step");
  if (!(options.epsilon > 0.0)) throw ParameterError("adversarial step size must be positive");
  auto iterates = search_iterates(model, start, label, options);
  if (iterates.empty()) iterates.push_back(start);
  return iterates;
}

std::vector<TokenId> random_substitution(std::span<const TokenId> ids, const SynonymGraph& graph,
                                         Rng& rng) {
  std::vector<TokenId> out(ids.begin(), ids.end());
  for (auto& id : out) {
    if (id == kPadId) continue;
    const auto syns = graph.synonyms(id);
    const std::size_t pick = rng.index(syns.size() + 1);
    if (pick > 0) id = syns[pick - 1];
  }
  return out;
}

void Adam::step(ParameterRegistry& params) {
  auto& all = params.all();
  if (m_.empty()) {
    for (const auto& p : all) {
      m_.emplace_back(p.node->value().size(), 0.0);
      v_.emplace_back(p.node->value().size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < all.size(); ++k) {
    auto& value = all[k].node->value();
    auto& grad = all[k].node->grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] + weight_decay_ * value[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::string to_json_line(const EpochMetrics& m, bool with_timing) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["mode"] = to_string(m.mode);
  j["train_loss"] = m.train_loss;
  j["train_acc"] = m.train_acc;
  j["val_acc"] = m.val_acc;
  if (with_timing) j["wall_ms"] = m.wall_ms;
  if (m.aborted) j["aborted"] = true;
  return j.dump();
}

double accuracy(const Classifier& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data.examples)
    if (argmax(model.probabilities(ex.ids)) == ex.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(Classifier& model, const Dataset& data, const Dataset* validation,
                  const SynonymGraph& graph, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ParameterError("training set is empty");

  Adam optimizer(cfg.lr, cfg.weight_decay);
  auto& params = model.params();
  const bool have_val = validation != nullptr && !validation->empty();
  TrainResult result;
  result.best_val_acc = -1.0;
  std::vector<double> best = params.snapshot();

  const std::uint64_t shuffle_root = derive_seed(cfg.seed, "shuffle");
  const std::uint64_t dirichlet_root = derive_seed(cfg.seed, "dirichlet");
  const std::uint64_t dropout_root = derive_seed(cfg.seed, "dropout");
  const std::uint64_t ran_root = derive_seed(cfg.seed, "ran");

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(shuffle_root, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffler.index(i)]);

    model.set_training(true);
    double loss_total = 0.0;
    std::size_t correct = 0;
    bool aborted = false;
    for (std::size_t begin = 0; begin < order.size() && !aborted; begin += cfg.batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch);
      const double batch_weight = 1.0 / static_cast<double>(end - begin);
      params.zero_grad();
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t index = order[b];
        const auto& ex = data.examples[index];
        Rng dropout(derive_seed(derive_seed(dropout_root, epoch), index));

        std::vector<PointLoss> losses;
        if (cfg.mode == TrainMode::Dne) {
          Rng dirichlet(derive_seed(derive_seed(dirichlet_root, epoch), index));
          auto start = make_virtual(ex.ids, graph, cfg.dirichlet(), cfg.expand_hull, dirichlet);
          auto iterates = search_iterates(model, start, ex.label, cfg.search());
          losses.push_back(scored_loss(
              model, model.embed_virtual(start, &dropout, cfg.coordinated_update).sequence, ex.label));
          for (const auto& it : iterates)
            losses.push_back(scored_loss(
                model, model.embed_virtual(it, &dropout, cfg.coordinated_update).sequence, ex.label));
        } else if (cfg.mode == TrainMode::Ran) {
          Rng ran(derive_seed(derive_seed(ran_root, epoch), index));
          const auto corrupted = random_substitution(ex.ids, graph, ran);
          losses.push_back(scored_loss(model, model.embed_discrete(corrupted, &dropout), ex.label));
        } else {
          losses.push_back(scored_loss(model, model.embed_discrete(ex.ids, &dropout), ex.label));
        }

        // Mean over the example's points (initial draw plus search iterates).
        const double point_weight = 1.0 / static_cast<double>(losses.size());
        double example_loss = 0.0;
        for (const auto& pl : losses) {
          example_loss += pl.loss->scalar() * point_weight;
          ad::backward(pl.loss, batch_weight * point_weight);
        }
        if (!std::isfinite(example_loss)) {
          aborted = true;
          break;
        }
        loss_total += example_loss;
        if (losses.front().predicted == ex.label) ++correct;
      }
      if (aborted) break;
      for (auto& p : params.all())
        for (double& g : p.node->grad()) g = std::clamp(g, -cfg.grad_clip, cfg.grad_clip);
      optimizer.step(params);
    }
    model.set_training(false);

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.mode = cfg.mode;
    metrics.train_loss = loss_total / static_cast<double>(data.size());
    metrics.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
    metrics.val_acc = have_val ? accuracy(model, *validation) : metrics.train_acc;
    metrics.aborted = aborted;
    metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    result.epochs.push_back(metrics);
    if (on_epoch) on_epoch(metrics);

    if (aborted) {
      result.diverged = true;
      break;
    }
    if (!have_val || metrics.val_acc > result.best_val_acc) {
      result.best_val_acc = metrics.val_acc;
      result.best_epoch = epoch;
      best = params.snapshot();
    }
  }
  params.restore(best);
  params.zero_grad();
  return result;
}

}  // namespace dne
