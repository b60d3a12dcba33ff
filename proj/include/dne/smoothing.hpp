#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dne/lexicon.hpp"
#include "dne/models.hpp"
#include "dne/training.hpp"

namespace dne {

struct EnsembleConfig {
  std::size_t k = 16;
  double r = 3.0;
  double alpha = 0.0;  // test-time concentration; 0 reuses the training alpha
  std::uint64_t seed = 0;

  void validate() const;
  /// Concentrations used at test time given the training ones.
  DirichletParams concentration(const DirichletParams& trained) const;
};

struct EnsembleSample {
  std::vector<double> probs;
  double weight = 0.0;
};

struct EnsembleResult {
  std::size_t label = 0;
  std::vector<double> avg_probs;
  std::vector<EnsembleSample> per_sample;
};

/// Confidence weight sum_{c != y} (p_y - p_c)^r with y = argmax(probs).
double cbwd_weight(std::span<const double> probs, double r);

/// Weighted mean of the samples' probabilities; falls back to the plain mean
/// when every weight is zero. Label is the argmax with lowest-id ties.
EnsembleResult combine(std::vector<EnsembleSample> samples);

/// Monte-Carlo prediction of the smoothed classifier: k virtual copies over
/// the one-hop hulls S(x_i) (never the expanded ones), CBW-D weighted.
/// `stream` selects the per-example generator, seeded from (cfg.seed, stream).
EnsembleResult smooth_predict(const Classifier& model, std::span<const TokenId> ids,
                              const SynonymGraph& graph, const EnsembleConfig& cfg,
                              const DirichletParams& conc, std::uint64_t stream = 0);

}  // namespace dne
