#include "dne/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dne/error.hpp"

namespace dne::ad {

namespace {

void require(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + a.str() + " and " + b.str());
}

bool wants(const NodeRef& n) { return n->requires_grad(); }

}  // namespace

std::string Shape::str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }

Node::Node(Shape shape, std::vector<double> value, bool requires_grad)
    : shape_(shape), value_(std::move(value)), requires_grad_(requires_grad) {
  if (value_.size() != shape_.size())
    throw ShapeError("node value has " + std::to_string(value_.size()) + " entries for shape " +
                     shape_.str());
}

double Node::scalar() const {
  if (shape_.size() != 1) throw ShapeError("scalar() on " + shape_.str());
  return value_[0];
}

std::vector<double>& Node::grad() {
  if (grad_.empty()) grad_.assign(value_.size(), 0.0);
  return grad_;
}

void Node::set_requires_grad(bool on) {
  if (!is_leaf()) throw ShapeError("set_requires_grad on a non-leaf node");
  requires_grad_ = on;
}

void Node::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

NodeRef make_result(Shape shape, std::vector<double> value, std::vector<NodeRef> parents,
                    std::function<void(Node&)> backward_rule) {
  const bool any = std::any_of(parents.begin(), parents.end(), wants);
  auto node = std::make_shared<Node>(shape, std::move(value), any);
  if (any) {
    node->parents_ = std::move(parents);
    node->backward_ = std::move(backward_rule);
  }
  return node;
}

NodeRef constant(Shape shape, std::vector<double> value) {
  return std::make_shared<Node>(shape, std::move(value), false);
}

NodeRef variable(Shape shape, std::vector<double> value) {
  return std::make_shared<Node>(shape, std::move(value), true);
}

NodeRef add(const NodeRef& a, const NodeRef& b) {
  const Shape sa = a->shape(), sb = b->shape();
  const bool broadcast = sb.rows == 1 && sa.rows != 1 && sa.cols == sb.cols;
  require(sa == sb || broadcast, "add", sa, sb);
  std::vector<double> out(a->value());
  const auto& bv = b->value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[broadcast ? i % sa.cols : i];
  return make_result(sa, std::move(out), {a, b}, [broadcast](Node& self) {
    const auto& g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    if (pa->requires_grad()) {
      auto& ga = pa->grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb->requires_grad()) {
      auto& gb = pb->grad();
      const std::size_t cols = self.shape().cols;
      for (std::size_t i = 0; i < g.size(); ++i) gb[broadcast ? i % cols : i] += g[i];
    }
  });
}

NodeRef multiply(const NodeRef& a, const NodeRef& b) {
  require(a->shape() == b->shape(), "multiply", a->shape(), b->shape());
  std::vector<double> out(a->value());
  const auto& bv = b->value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result(a->shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    if (pa->requires_grad()) {
      auto& ga = pa->grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value()[i];
    }
    if (pb->requires_grad()) {
      auto& gb = pb->grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value()[i];
    }
  });
}

NodeRef scale(const NodeRef& a, double factor) {
  std::vector<double> out(a->value());
  for (double& v : out) v *= factor;
  return make_result(a->shape(), std::move(out), {a}, [factor](Node& self) {
    const auto& g = self.grad();
    auto& ga = self.parents()[0]->grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

NodeRef apply_mask(const NodeRef& a, std::vector<double> mask) {
  if (mask.size() != a->value().size())
    throw ShapeError("apply_mask: mask of " + std::to_string(mask.size()) + " entries for " +
                     a->shape().str());
  std::vector<double> out(a->value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result(a->shape(), std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    const auto& g = self.grad();
    auto& ga = self.parents()[0]->grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += mask[i] * g[i];
  });
}

NodeRef matmul(const NodeRef& a, const NodeRef& b) {
  const Shape sa = a->shape(), sb = b->shape();
  require(sa.cols == sb.rows, "matmul", sa, sb);
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<double> out(m * n, 0.0);
  const auto& av = a->value();
  const auto& bv = b->value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = bv.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& g = self.grad();
    const auto& pa = self.parents()[0];
    const auto& pb = self.parents()[1];
    if (pa->requires_grad()) {
      auto& ga = pa->grad();
      const auto& bv = pb->value();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (pb->requires_grad()) {
      auto& gb = pb->grad();
      const auto& av = pa->value();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = av[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
        }
    }
  });
}

NodeRef conv1d(const NodeRef& x, const NodeRef& weight, const NodeRef& bias, std::size_t width) {
  if (width % 2 == 0) throw ShapeError("conv1d: kernel width must be odd");
  const Shape sx = x->shape(), sw = weight->shape(), sb = bias->shape();
  const std::size_t len = sx.rows, d = sx.cols, filters = sw.cols;
  require(sw.rows == width * d, "conv1d", sx, sw);
  require(sb.rows == 1 && sb.cols == filters, "conv1d bias", sw, sb);
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  const auto slen = static_cast<std::ptrdiff_t>(len);

  std::vector<double> out(len * filters);
  const auto& xv = x->value();
  const auto& wv = weight->value();
  const auto& bv = bias->value();
  for (std::size_t t = 0; t < len; ++t) {
    double* orow = out.data() + t * filters;
    std::copy(bv.begin(), bv.end(), orow);
    for (std::size_t k = 0; k < width; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
      if (src < 0 || src >= slen) continue;
      for (std::size_t c = 0; c < d; ++c) {
        const double xval = xv[static_cast<std::size_t>(src) * d + c];
        if (xval == 0.0) continue;
        const double* wrow = wv.data() + (k * d + c) * filters;
        for (std::size_t f = 0; f < filters; ++f) orow[f] += xval * wrow[f];
      }
    }
  }
  return make_result({len, filters}, std::move(out), {x, weight, bias},
                     [len, d, filters, width, half, slen](Node& self) {
    const auto& g = self.grad();
    const auto& px = self.parents()[0];
    const auto& pw = self.parents()[1];
    const auto& pb = self.parents()[2];
    if (pb->requires_grad()) {
      auto& gb = pb->grad();
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t f = 0; f < filters; ++f) gb[f] += g[t * filters + f];
    }
    const bool need_x = px->requires_grad(), need_w = pw->requires_grad();
    if (!need_x && !need_w) return;
    const auto& xv = px->value();
    const auto& wv = pw->value();
    for (std::size_t t = 0; t < len; ++t) {
      const double* grow = g.data() + t * filters;
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - half;
        if (src < 0 || src >= slen) continue;
        const auto s = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t wr = (k * d + c) * filters;
          if (need_x) {
            double acc = 0.0;
            for (std::size_t f = 0; f < filters; ++f) acc += grow[f] * wv[wr + f];
            px->grad()[s * d + c] += acc;
          }
          if (need_w) {
            const double xval = xv[s * d + c];
            auto& gw = pw->grad();
            for (std::size_t f = 0; f < filters; ++f) gw[wr + f] += xval * grow[f];
          }
        }
      }
    }
  });
}

NodeRef max_rows(const NodeRef& x) {
  const Shape s = x->shape();
  if (s.rows == 0) throw ShapeError("max_rows: empty input " + s.str());
  std::vector<double> out(s.cols);
  std::vector<std::size_t> arg(s.cols, 0);
  const auto& xv = x->value();
  for (std::size_t c = 0; c < s.cols; ++c) {
    double best = xv[c];
    for (std::size_t r = 1; r < s.rows; ++r)
      if (xv[r * s.cols + c] > best) {
        best = xv[r * s.cols + c];
        arg[c] = r;
      }
    out[c] = best;
  }
  return make_result({1, s.cols}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    const auto& g = self.grad();
    auto& gx = self.parents()[0]->grad();
    const std::size_t cols = arg.size();
    for (std::size_t c = 0; c < cols; ++c) gx[arg[c] * cols + c] += g[c];
  });
}

NodeRef mean_rows(const NodeRef& x) {
  const Shape s = x->shape();
  if (s.rows == 0) throw ShapeError("mean_rows: empty input " + s.str());
  std::vector<double> out(s.cols, 0.0);
  const auto& xv = x->value();
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) out[c] += xv[r * s.cols + c];
  const double inv = 1.0 / static_cast<double>(s.rows);
  for (double& v : out) v *= inv;
  return make_result({1, s.cols}, std::move(out), {x}, [s, inv](Node& self) {
    const auto& g = self.grad();
    auto& gx = self.parents()[0]->grad();
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) gx[r * s.cols + c] += g[c] * inv;
  });
}

NodeRef relu(const NodeRef& x) {
  std::vector<double> out(x->value());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x->shape(), std::move(out), {x}, [](Node& self) {
    const auto& g = self.grad();
    const auto& px = self.parents()[0];
    auto& gx = px->grad();
    const auto& xv = px->value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

NodeRef softmax_rows(const NodeRef& x) {
  const Shape s = x->shape();
  std::vector<double> out(s.size());
  const auto& xv = x->value();
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* in = xv.data() + r * s.cols;
    double* o = out.data() + r * s.cols;
    const double top = *std::max_element(in, in + s.cols);
    double total = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) total += (o[c] = std::exp(in[c] - top));
    for (std::size_t c = 0; c < s.cols; ++c) o[c] /= total;
  }
  return make_result(s, std::move(out), {x}, [s](Node& self) {
    const auto& g = self.grad();
    const auto& y = self.value();
    auto& gx = self.parents()[0]->grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t off = r * s.cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) dot += g[off + c] * y[off + c];
      for (std::size_t c = 0; c < s.cols; ++c) gx[off + c] += y[off + c] * (g[off + c] - dot);
    }
  });
}

NodeRef log_softmax_rows(const NodeRef& x) {
  const Shape s = x->shape();
  std::vector<double> out(s.size());
  const auto& xv = x->value();
  for (std::size_t r = 0; r < s.rows; ++r) {
    const double* in = xv.data() + r * s.cols;
    double* o = out.data() + r * s.cols;
    const double top = *std::max_element(in, in + s.cols);
    double total = 0.0;
    for (std::size_t c = 0; c < s.cols; ++c) total += std::exp(in[c] - top);
    const double lse = top + std::log(total);
    for (std::size_t c = 0; c < s.cols; ++c) o[c] = in[c] - lse;
  }
  return make_result(s, std::move(out), {x}, [s](Node& self) {
    const auto& g = self.grad();
    const auto& y = self.value();
    auto& gx = self.parents()[0]->grad();
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t off = r * s.cols;
      double gsum = 0.0;
      for (std::size_t c = 0; c < s.cols; ++c) gsum += g[off + c];
      for (std::size_t c = 0; c < s.cols; ++c) gx[off + c] += g[off + c] - std::exp(y[off + c]) * gsum;
    }
  });
}

NodeRef log(const NodeRef& x) {
  std::vector<double> out(x->value());
  for (double& v : out) v = std::log(v);
  return make_result(x->shape(), std::move(out), {x}, [](Node& self) {
    const auto& g = self.grad();
    const auto& px = self.parents()[0];
    auto& gx = px->grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / px->value()[i];
  });
}

NodeRef pick(const NodeRef& x, std::size_t row, std::size_t col) {
  const Shape s = x->shape();
  if (row >= s.rows || col >= s.cols)
    throw ShapeError("pick: index (" + std::to_string(row) + "," + std::to_string(col) +
                     ") outside " + s.str());
  const std::size_t at = row * s.cols + col;
  return make_result({1, 1}, {x->value()[at]}, {x}, [at](Node& self) {
    self.parents()[0]->grad()[at] += self.grad()[0];
  });
}

NodeRef sum(const NodeRef& x) {
  double total = 0.0;
  for (double v : x->value()) total += v;
  return make_result({1, 1}, {total}, {x}, [](Node& self) {
    const double g = self.grad()[0];
    for (double& v : self.parents()[0]->grad()) v += g;
  });
}

NodeRef gather(const NodeRef& table, std::span<const TokenId> ids) {
  const Shape st = table->shape();
  const std::size_t d = st.cols;
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= st.rows)
      throw ShapeError("gather: id " + std::to_string(id) + " outside table " + st.str());
    if (id == kPadId) continue;
    std::copy_n(table->value().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(id) * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<TokenId> rows(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [rows = std::move(rows), d](Node& self) {
    const auto& g = self.grad();
    auto& gt = self.parents()[0]->grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] == kPadId) continue;
      const std::size_t base = static_cast<std::size_t>(rows[i]) * d;
      for (std::size_t c = 0; c < d; ++c) gt[base + c] += g[i * d + c];
    }
  });
}

NodeRef mix(const NodeRef& table, std::span<const std::vector<TokenId>> vertices,
            std::span<const NodeRef> etas, bool coordinated) {
  if (vertices.size() != etas.size())
    throw ShapeError("mix: " + std::to_string(vertices.size()) + " positions but " +
                     std::to_string(etas.size()) + " eta vectors");
  const Shape st = table->shape();
  const std::size_t len = vertices.size(), d = st.cols;

  std::vector<std::vector<double>> betas(len);
  std::vector<double> out(len * d, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    const auto& verts = vertices[i];
    const auto& eta = etas[i];
    if (verts.empty() || eta->shape() != Shape{1, verts.size()})
      throw ShapeError("mix: position " + std::to_string(i) + " has " +
                       std::to_string(verts.size()) + " vertices but eta " + eta->shape().str());
    const auto& ev = eta->value();
    const double top = *std::max_element(ev.begin(), ev.end());
    auto& beta = betas[i];
    beta.resize(ev.size());
    double total = 0.0;
    for (std::size_t j = 0; j < ev.size(); ++j) total += (beta[j] = std::exp(ev[j] - top));
    for (double& b : beta) b /= total;
    for (std::size_t j = 0; j < verts.size(); ++j) {
      const auto id = verts[j];
      if (id < 0 || static_cast<std::size_t>(id) >= st.rows)
        throw ShapeError("mix: id " + std::to_string(id) + " outside table " + st.str());
      if (id == kPadId) continue;
      const double* row = table->value().data() + static_cast<std::size_t>(id) * d;
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += beta[j] * row[c];
    }
  }

  std::vector<NodeRef> parents;
  parents.reserve(len + 1);
  parents.push_back(table);
  parents.insert(parents.end(), etas.begin(), etas.end());
  std::vector<std::vector<TokenId>> verts(vertices.begin(), vertices.end());
  return make_result({len, d}, std::move(out), std::move(parents),
                     [verts = std::move(verts), betas = std::move(betas), d, coordinated](Node& self) {
    const auto& g = self.grad();
    const auto& ptable = self.parents()[0];
    const auto& tv = ptable->value();
    for (std::size_t i = 0; i < verts.size(); ++i) {
      const double* gi = g.data() + i * d;
      const auto& beta = betas[i];
      if (ptable->requires_grad()) {
        auto& gt = ptable->grad();
        if (coordinated) {
          for (std::size_t j = 0; j < verts[i].size(); ++j) {
            if (verts[i][j] == kPadId || beta[j] == 0.0) continue;
            double* row = gt.data() + static_cast<std::size_t>(verts[i][j]) * d;
            for (std::size_t c = 0; c < d; ++c) row[c] += beta[j] * gi[c];
          }
        } else if (verts[i][0] != kPadId) {
          double* row = gt.data() + static_cast<std::size_t>(verts[i][0]) * d;
          for (std::size_t c = 0; c < d; ++c) row[c] += gi[c];
        }
      }
      const auto& peta = self.parents()[i + 1];
      if (!coordinated || !peta->requires_grad()) continue;
      std::vector<double> dbeta(verts[i].size(), 0.0);
      double weighted = 0.0;
      for (std::size_t j = 0; j < verts[i].size(); ++j) {
        if (verts[i][j] == kPadId) continue;
        const double* row = tv.data() + static_cast<std::size_t>(verts[i][j]) * d;
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += gi[c] * row[c];
        dbeta[j] = acc;
        weighted += beta[j] * acc;
      }
      auto& ge = peta->grad();
      for (std::size_t j = 0; j < dbeta.size(); ++j) ge[j] += beta[j] * (dbeta[j] - weighted);
    }
  });
}

void backward(const NodeRef& loss, double seed) {
  if (loss->shape().size() != 1) throw ShapeError("backward: loss must be scalar, got " + loss->shape().str());
  if (!loss->requires_grad()) return;

  // Post-order DFS: parents before children.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents_.size()) {
      Node* parent = node->parents_[next++].get();
      if (parent->requires_grad() && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad_.assign(n->value_.size(), 0.0);
  loss->grad()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf() && (*it)->backward_) (*it)->backward_(**it);
}

}  // namespace dne::ad
