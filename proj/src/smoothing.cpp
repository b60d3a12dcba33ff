#include "dne/smoothing.hpp"

#include <cmath>

#include "dne/error.hpp"
#include "dne/simplex.hpp"

namespace dne {

void EnsembleConfig::validate() const {
  if (k < 1) throw ParameterError("ensemble size k must be at least 1");
  if (!(r >= 1.0)) throw ParameterError("CBW-D exponent r must be at least 1");
  if (!(alpha >= 0.0)) throw ParameterError("test-time alpha must be non-negative");
}

DirichletParams EnsembleConfig::concentration(const DirichletParams& trained) const {
  return {alpha > 0.0 ? alpha : trained.alpha, trained.lambda};
}

double cbwd_weight(std::span<const double> probs, double r) {
  if (probs.empty()) return 0.0;
  const std::size_t top = argmax(probs);
  double w = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (c != top) w += std::pow(probs[top] - probs[c], r);
  return w;
}

EnsembleResult combine(std::vector<EnsembleSample> samples) {
  if (samples.empty()) throw ParameterError("cannot combine an empty ensemble");
  const std::size_t classes = samples.front().probs.size();
  double total = 0.0;
  for (const auto& s : samples) total += s.weight;
  const bool uniform = !(total > 0.0);

  EnsembleResult result;
  result.avg_probs.assign(classes, 0.0);
  for (const auto& s : samples) {
    const double w = uniform ? 1.0 : s.weight;
    for (std::size_t c = 0; c < classes; ++c) result.avg_probs[c] += w * s.probs[c];
  }
  const double norm = uniform ? static_cast<double>(samples.size()) : total;
  for (double& p : result.avg_probs) p /= norm;
  result.label = argmax(result.avg_probs);
  result.per_sample = std::move(samples);
  return result;
}

EnsembleResult smooth_predict(const Classifier& model, std::span<const TokenId> ids,
                              const SynonymGraph& graph, const EnsembleConfig& cfg,
                              const DirichletParams& conc, std::uint64_t stream) {
  cfg.validate();
  if (ids.empty()) throw ParameterError("cannot predict an empty sequence");
  Rng rng(derive_seed(derive_seed(cfg.seed, "smoothing"), stream));

  const auto& table = model.embedding()->value();
  const std::size_t d = model.config().embed_dim;
  std::vector<Neighborhood> nbhs;
  std::vector<ConcentrationVector> concs;
  nbhs.reserve(ids.size());
  for (TokenId id : ids) {
    nbhs.push_back(id == kPadId ? Neighborhood{kPadId, {kPadId}, {}} : neighborhood(graph, id, false));
    concs.push_back(build_alpha(nbhs.back(), conc.alpha, conc.lambda));
  }

  std::vector<EnsembleSample> samples;
  samples.reserve(cfg.k);
  std::vector<double> rows(ids.size() * d);
  for (std::size_t s = 0; s < cfg.k; ++s) {
    std::fill(rows.begin(), rows.end(), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto point = sample_dirichlet(concs[i], rng);
      for (std::size_t j = 0; j < point.size(); ++j) {
        const double b = point.beta[j];
        if (b == 0.0 || nbhs[i].at(j) == kPadId) continue;
        const double* row = table.data() + static_cast<std::size_t>(nbhs[i].at(j)) * d;
        for (std::size_t c = 0; c < d; ++c) rows[i * d + c] += b * row[c];
      }
    }
    auto probs = model.probabilities(rows, ids.size());
    const double w = cbwd_weight(probs, cfg.r);
    samples.push_back({std::move(probs), w});
  }
  return combine(std::move(samples));
}

}  // namespace dne
