#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dne/lexicon.hpp"
#include "dne/rng.hpp"

namespace dne {

/// Floor applied to beta before taking its logarithm.
inline constexpr double kLogFloor = 1e-30;

/// Dirichlet concentrations aligned with Neighborhood::vertices().
struct ConcentrationVector {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

/// A point on the probability simplex kept in two coordinates:
/// beta (the mixing weights) and eta with softmax(eta) == beta.
struct SimplexPoint {
  std::vector<double> beta;
  std::vector<double> eta;
  std::size_t size() const { return beta.size(); }

  /// Builds from weights; eta = log(max(beta, kLogFloor)).
  static SimplexPoint from_beta(std::vector<double> beta);
  /// beta = 1 at position j, 0 elsewhere.
  static SimplexPoint vertex(std::size_t m, std::size_t j);
};

/// Concentration alpha for one-hop vertices and alpha * lambda for two-hop
/// vertices, so the expected two-hop weight is lambda times the one-hop one.
/// Throws ParameterError unless alpha > 0 and 0 < lambda <= 0.5.
ConcentrationVector build_alpha(const Neighborhood& nbh, double alpha, double lambda);

/// log of a Gamma(shape, 1) variate. Marsaglia-Tsang squeeze for shape >= 1;
/// below 1 the shape is boosted, Gamma(a) = Gamma(a + 1) * U^(1/a), and the
/// product is kept in log space so tiny shapes cannot underflow.
double log_gamma_variate(double shape, Rng& rng);

/// Normalised independent Gamma(alpha_j, 1) draws.
SimplexPoint sample_dirichlet(const ConcentrationVector& conc, Rng& rng);

/// sum_j beta_j * row(vertex_j). Throws ShapeError on a length mismatch.
std::vector<double> convex_combine(const SimplexPoint& point, const Neighborhood& nbh,
                                   const EmbeddingMatrix& emb);

/// beta = softmax(eta); eta is stored as given.
SimplexPoint reparameterize(std::span<const double> eta);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> x);

}  // namespace dne
