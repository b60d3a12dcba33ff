#include "dne/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dne/error.hpp"

namespace dne {

SimplexPoint SimplexPoint::from_beta(std::vector<double> beta) {
  SimplexPoint p;
  p.eta.resize(beta.size());
  for (std::size_t j = 0; j < beta.size(); ++j) p.eta[j] = std::log(std::max(beta[j], kLogFloor));
  p.beta = std::move(beta);
  return p;
}

SimplexPoint SimplexPoint::vertex(std::size_t m, std::size_t j) {
  std::vector<double> beta(m, 0.0);
  beta.at(j) = 1.0;
  return from_beta(std::move(beta));
}

ConcentrationVector build_alpha(const Neighborhood& nbh, double alpha, double lambda) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw ParameterError("alpha must be positive, got " + std::to_string(alpha));
  if (!(lambda > 0.0 && lambda <= 0.5))
    throw ParameterError("lambda must lie in (0, 0.5], got " + std::to_string(lambda));
  ConcentrationVector conc;
  conc.values.assign(nbh.one_hop.size(), alpha);
  conc.values.resize(nbh.size(), alpha * lambda);
  return conc;
}

double log_gamma_variate(double shape, Rng& rng) {
  if (shape < 1.0) {
    const double boosted = log_gamma_variate(shape + 1.0, rng);
    return boosted + std::log(rng.uniform_open()) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

SimplexPoint sample_dirichlet(const ConcentrationVector& conc, Rng& rng) {
  const std::size_t m = conc.size();
  if (m == 0) throw ParameterError("empty concentration vector");
  for (double a : conc.values)
    if (!(a > 0.0)) throw ParameterError("concentration values must be positive");
  if (m == 1) {
    (void)log_gamma_variate(conc.values[0], rng);
    return SimplexPoint{{1.0}, {0.0}};
  }
  std::vector<double> logs(m);
  for (std::size_t j = 0; j < m; ++j) logs[j] = log_gamma_variate(conc.values[j], rng);
  const double top = *std::max_element(logs.begin(), logs.end());
  double total = 0.0;
  std::vector<double> beta(m);
  for (std::size_t j = 0; j < m; ++j) {
    beta[j] = std::exp(logs[j] - top);
    total += beta[j];
  }
  for (double& b : beta) b /= total;
  return SimplexPoint::from_beta(std::move(beta));
}

std::vector<double> convex_combine(const SimplexPoint& point, const Neighborhood& nbh,
                                   const EmbeddingMatrix& emb) {
  if (point.size() != nbh.size())
    throw ShapeError("simplex point has " + std::to_string(point.size()) +
                     " weights but the neighborhood has " + std::to_string(nbh.size()) +
                     " vertices");
  std::vector<double> out(emb.dim(), 0.0);
  for (std::size_t j = 0; j < point.size(); ++j) {
    const double b = point.beta[j];
    if (b == 0.0) continue;
    const auto row = emb.row(nbh.at(j));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += b * row[c];
  }
  return out;
}

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double top = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = std::exp(x[j] - top);
    total += out[j];
  }
  for (double& v : out) v /= total;
  return out;
}

SimplexPoint reparameterize(std::span<const double> eta) {
  SimplexPoint p;
  p.beta = softmax(eta);
  p.eta.assign(eta.begin(), eta.end());
  return p;
}

}  // namespace dne
