#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A graph is built eagerly by calling the op functions below; each result
// records its parents and a backward rule only when at least one parent
// requires a gradient, so pure inference builds no tape. Graphs are cheap
// and rebuilt per example.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dne/lexicon.hpp"

namespace dne::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Node;
using NodeRef = std::shared_ptr<Node>;

class Node {
 public:
  Node(Shape shape, std::vector<double> value, bool requires_grad);

  const Shape& shape() const { return shape_; }
  std::vector<double>& value() { return value_; }
  const std::vector<double>& value() const { return value_; }
  double value_at(std::size_t r, std::size_t c) const { return value_[r * shape_.cols + c]; }
  /// Value of a 1x1 node.
  double scalar() const;

  /// Gradient buffer, allocated (zero) on first access.
  std::vector<double>& grad();
  bool has_grad() const { return !grad_.empty(); }
  void zero_grad();

  bool requires_grad() const { return requires_grad_; }
  /// Leaves only: toggles whether ops built from this node record a tape.
  void set_requires_grad(bool on);
  bool is_leaf() const { return parents_.empty(); }
  const std::vector<NodeRef>& parents() const { return parents_; }

 private:
  friend NodeRef make_result(Shape, std::vector<double>, std::vector<NodeRef>,
                             std::function<void(Node&)>);
  friend void backward(const NodeRef&, double);

  Shape shape_;
  std::vector<double> value_;
  std::vector<double> grad_;
  bool requires_grad_;
  std::vector<NodeRef> parents_;
  std::function<void(Node&)> backward_;
};

/// Creates an op result. Parents and the backward rule are kept only when a
/// parent requires a gradient.
NodeRef make_result(Shape shape, std::vector<double> value, std::vector<NodeRef> parents,
                    std::function<void(Node&)> backward_rule);

NodeRef constant(Shape shape, std::vector<double> value);
NodeRef variable(Shape shape, std::vector<double> value);

/// Elementwise sum; b may also be a single row broadcast over a's rows.
NodeRef add(const NodeRef& a, const NodeRef& b);
/// Elementwise product of equal shapes.
NodeRef multiply(const NodeRef& a, const NodeRef& b);
NodeRef scale(const NodeRef& a, double factor);
/// Elementwise product with a constant mask (used for dropout).
NodeRef apply_mask(const NodeRef& a, std::vector<double> mask);
NodeRef matmul(const NodeRef& a, const NodeRef& b);
/// Same-padded 1-D convolution over rows. x: L x d, weight: (width*d) x F,
/// bias: 1 x F, width odd. Row block k of the weight multiplies x[t + k - width/2].
NodeRef conv1d(const NodeRef& x, const NodeRef& weight, const NodeRef& bias, std::size_t width);
/// Column-wise max over rows (ties: lowest row) -> 1 x cols.
NodeRef max_rows(const NodeRef& x);
/// Column-wise mean over rows -> 1 x cols.
NodeRef mean_rows(const NodeRef& x);
NodeRef relu(const NodeRef& x);
NodeRef softmax_rows(const NodeRef& x);
NodeRef log_softmax_rows(const NodeRef& x);
NodeRef log(const NodeRef& x);
/// Single element as a 1x1 node.
NodeRef pick(const NodeRef& x, std::size_t row, std::size_t col);
NodeRef sum(const NodeRef& x);

/// Rows of a |V| x d table. PAD reads as zero and never receives gradient.
NodeRef gather(const NodeRef& table, std::span<const TokenId> ids);

/// Row i = sum_j softmax(eta_i)_j * table[vertices[i][j]].
///
/// coordinated=true: gradient reaches every vertex row in proportion to its
/// weight, and every eta.
/// coordinated=false: the row is treated as table[vertices[i][0]] plus a
/// constant offset, so only the first (center) row gets gradient and the
/// etas get none.
NodeRef mix(const NodeRef& table, std::span<const std::vector<TokenId>> vertices,
            std::span<const NodeRef> etas, bool coordinated = true);

/// Back-propagates from a 1x1 node, seeding it with `seed`. Intermediate
/// gradients are recomputed on every call; leaf gradients accumulate across
/// calls until zero_grad().
void backward(const NodeRef& loss, double seed = 1.0);

}  // namespace dne::ad
