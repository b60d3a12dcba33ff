#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dne/dataset.hpp"
#include "dne/models.hpp"
#include "dne/virtual_sentence.hpp"

namespace dne {

enum class TrainMode { Orig, Ran, Dne };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

/// How one adversarial step turns the eta gradient into a displacement.
enum class SearchUpdate {
  Normalized,  // -epsilon * g / ||g||_2
  Raw,         // -epsilon * g
};

/// Scope of the L2 norm for SearchUpdate::Normalized.
enum class SearchNorm {
  Global,       // one norm over every position's eta
  PerPosition,  // each position normalised on its own
};

struct DirichletParams {
  double alpha = 0.1;
  double lambda = 0.1;
};

struct SearchOptions {
  std::size_t steps = 3;
  double epsilon = 10.0;
  SearchUpdate update = SearchUpdate::Normalized;
  SearchNorm norm = SearchNorm::Global;
};

struct TrainConfig {
  TrainMode mode = TrainMode::Dne;
  double alpha = 0.1;
  double lambda = 0.1;
  std::size_t adv_steps = 3;
  double adv_epsilon = 10.0;
  SearchUpdate search_update = SearchUpdate::Normalized;
  SearchNorm search_norm = SearchNorm::Global;
  double lr = 5e-4;
  double weight_decay = 1e-4;
  std::size_t batch = 32;
  double grad_clip = 1.0;  // gradients clipped elementwise to [-grad_clip, grad_clip]
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  bool expand_hull = true;
  bool coordinated_update = true;

  void validate() const;
  DirichletParams dirichlet() const { return {alpha, lambda}; }
  SearchOptions search() const { return {adv_steps, adv_epsilon, search_update, search_norm}; }
};

/// One Dirichlet draw per position over its (optionally expanded)
/// neighborhood. PAD positions get the single-vertex point on {PAD}.
VirtualSentence make_virtual(std::span<const TokenId> ids, const SynonymGraph& graph,
                             const DirichletParams& params, bool expand, Rng& rng);

/// -log softmax(score(embed_virtual(vs)))[label].
ad::NodeRef virtual_loss(const Classifier& model, const VirtualSentence& vs, std::size_t label,
                         Rng* dropout_rng = nullptr, bool coordinated = true);

/// Cross-entropy on a discrete sentence.
ad::NodeRef discrete_loss(const Classifier& model, std::span<const TokenId> ids, std::size_t label,
                          Rng* dropout_rng = nullptr);

/// Gradient descent on log p(label | vs) in eta coordinates with the model's
/// parameters frozen. Returns only the points actually reached; empty when
/// the first gradient already vanishes (norm < 1e-12).
std::vector<VirtualSentence> search_iterates(const Classifier& model, const VirtualSentence& start,
                                             std::size_t label, const SearchOptions& options);

/// As search_iterates, but an immediate stop yields {start}.
std::vector<VirtualSentence> adversarial_search(const Classifier& model,
                                                const VirtualSentence& start, std::size_t label,
                                                const SearchOptions& options);

/// Each non-PAD position replaced by a uniform draw from S(id).
std::vector<TokenId> random_substitution(std::span<const TokenId> ids, const SynonymGraph& graph,
                                         Rng& rng);

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  explicit Adam(double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterRegistry& params);
  std::size_t steps() const { return t_; }

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  TrainMode mode = TrainMode::Orig;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double wall_ms = 0.0;
  bool aborted = false;
};

/// One JSON object per epoch; wall_ms only when with_timing is set.
std::string to_json_line(const EpochMetrics& m, bool with_timing = true);

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  bool diverged = false;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains in place and leaves the model at the epoch with the best validation
/// accuracy (base classifier, clean inputs). Without a validation set the
/// last epoch is kept.
TrainResult train(Classifier& model, const Dataset& data, const Dataset* validation,
                  const SynonymGraph& graph, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Clean accuracy of the base classifier.
double accuracy(const Classifier& model, const Dataset& data);

}  // namespace dne
