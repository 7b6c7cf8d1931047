// Copyright 2026 The TokenChain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tokenchain/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>

#include "tokenchain/error.hpp"

namespace tokenchain::ad {

namespace detail {

using BackwardFn = std::function<void(const struct Node&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  // Lazily allocated accumulator; nullptr when this node is not tracked.
  double* grad_ptr() {
    if (!requires_grad) return nullptr;
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

namespace {
thread_local bool g_grad_enabled = true;

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}
}  // namespace

// Builds the output node. History is recorded only when recording is on and
// some input is tracked; otherwise the result is a constant.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> value,
                     std::span<const Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

using detail::make_result;
using detail::Node;

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

Node* N(const Tensor& t) { return t.node(); }

void require(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a, op);
  require(b, op);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
}

void require_rank2(const Tensor& t, const char* op) {
  require(t, op);
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         detail::shape_str(t.shape()));
}

std::size_t last_dim(const Tensor& t, const char* op) {
  require(t, op);
  if (t.rank() == 0 || t.shape().back() == 0)
    throw DimensionError(std::string(op) + ": empty last axis");
  return t.shape().back();
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw DimensionError("from_data: shape " + detail::shape_str(shape) +
                         " does not match " + std::to_string(data.size()) +
                         " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw DimensionError("shape of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw IndexError("axis out of range");
  return shape()[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  if (!node_ || !node_->requires_grad) return {};
  node_->grad_ptr();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_ || !node_->requires_grad) return {};
  node_->grad_ptr();
  return node_->grad;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

void Tensor::zero_grad() {
  if (requires_grad()) node_->grad.assign(node_->value.size(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor with " +
                                        std::to_string(size()) + " elements");
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) throw DimensionError("at(i, j) on non-matrix");
  if (i >= shape()[0] || j >= shape()[1]) throw IndexError("at(i, j) out of range");
  return node_->value[i * shape()[1] + j];
}

void Tensor::backward() const {
  if (size() != 1) throw DimensionError("backward() requires a scalar output");
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  node_->grad_ptr()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return from_data(node_->shape, node_->value, false);
}

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) {
  detail::g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return detail::g_grad_enabled; }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ " +
                         detail::shape_str(a.shape()) + " * " +
                         detail::shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Node* na = N(a);
  Node* nb = N(b);
  return make_result({m, n}, std::move(out), {&a, &b},
                     [na, nb, m, k, n](const Node& self) {
    const double* G = self.grad.data();
    if (double* ga = na->grad_ptr()) {
      const double* B = nb->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = nb->grad_ptr()) {
      const double* A = na->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto v = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  Node* na = N(a);
  return make_result({n, m}, std::move(out), {&a}, [na, m, n](const Node& self) {
    double* ga = na->grad_ptr();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2(x, "affine");
  require_rank2(w, "affine");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) throw DimensionError("affine: inner extents differ");
  if (b.rank() != 1 || b.dim(0) != n) throw DimensionError("affine: bias extent");
  std::vector<double> out(m * n);
  const double* X = x.data().data();
  const double* W = w.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    std::copy(B, B + n, row);
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = X[i * k + p];
      const double* wrow = W + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * wrow[j];
    }
  }
  Node* nx = N(x);
  Node* nw = N(w);
  Node* nb = N(b);
  return make_result({m, n}, std::move(out), {&x, &w, &b},
                     [nx, nw, nb, m, k, n](const Node& self) {
    const double* G = self.grad.data();
    if (double* gx = nx->grad_ptr()) {
      const double* W = nw->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * W[p * n + j];
          gx[i * k + p] += acc;
        }
    }
    if (double* gw = nw->grad_ptr()) {
      const double* X = nx->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = X[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gw[p * n + j] += xv * G[i * n + j];
        }
    }
    if (double* gb = nb->grad_ptr()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <class Fwd, class Dfdx>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Dfdx dfdx) {
  require(a, op);
  const auto v = a.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  Node* na = N(a);
  return make_result(a.shape(), std::move(out), {&a}, [na, dfdx](const Node& self) {
    double* ga = na->grad_ptr();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.grad[i] * dfdx(na->value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Node* na = N(a);
  Node* nb = N(b);
  return make_result(a.shape(), std::move(out), {&a, &b}, [na, nb](const Node& self) {
    if (double* ga = na->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = nb->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Node* na = N(a);
  Node* nb = N(b);
  return make_result(a.shape(), std::move(out), {&a, &b}, [na, nb](const Node& self) {
    if (double* ga = na->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = nb->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Node* na = N(a);
  Node* nb = N(b);
  return make_result(a.shape(), std::move(out), {&a, &b}, [na, nb](const Node& self) {
    if (double* ga = na->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        ga[i] += self.grad[i] * nb->value[i];
    if (double* gb = nb->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        gb[i] += self.grad[i] * na->value[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  const std::size_t n = last_dim(a, "add_row");
  if (b.rank() != 1 || b.dim(0) != n) throw DimensionError("add_row: row extent");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % n];
  Node* na = N(a);
  Node* nb = N(b);
  return make_result(a.shape(), std::move(out), {&a, &b}, [na, nb, n](const Node& self) {
    if (double* ga = na->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = nb->grad_ptr())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % n] += self.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  // tanh approximation
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return unary(
      a, "gelu",
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
      },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  require(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  Node* na = N(a);
  return make_result({}, {s}, {&a}, [na](const Node& self) {
    double* ga = na->grad_ptr();
    for (std::size_t i = 0; i < na->value.size(); ++i) ga[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a, "mean");
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax_temp(const Tensor& h, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax_temp: tau must be positive");
  const std::size_t c = last_dim(h, "softmax_temp");
  const std::size_t rows = h.size() / c;
  std::vector<double> out(h.size());
  const auto v = h.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * c;
    double* o = out.data() + r * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c; ++i) mx = std::max(mx, in[i] / tau);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) z += (o[i] = std::exp(in[i] / tau - mx));
    for (std::size_t i = 0; i < c; ++i) o[i] /= z;
  }
  Node* nh = N(h);
  return make_result(h.shape(), std::move(out), {&h},
                     [nh, rows, c, tau](const Node& self) {
    double* gh = nh->grad_ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = self.value.data() + r * c;
      const double* g = self.grad.data() + r * c;
      double dot = 0.0;
      for (std::size_t i = 0; i < c; ++i) dot += g[i] * p[i];
      for (std::size_t i = 0; i < c; ++i) gh[r * c + i] += p[i] * (g[i] - dot) / tau;
    }
  });
}

Tensor log_softmax_temp(const Tensor& h, double tau) {
  if (!(tau > 0.0)) throw ParameterError("log_softmax_temp: tau must be positive");
  const std::size_t c = last_dim(h, "log_softmax_temp");
  const std::size_t rows = h.size() / c;
  std::vector<double> out(h.size());
  const auto v = h.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * c;
    double* o = out.data() + r * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c; ++i) mx = std::max(mx, in[i] / tau);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) z += std::exp(in[i] / tau - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < c; ++i) o[i] = in[i] / tau - lse;
  }
  Node* nh = N(h);
  return make_result(h.shape(), std::move(out), {&h},
                     [nh, rows, c, tau](const Node& self) {
    double* gh = nh->grad_ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* lp = self.value.data() + r * c;
      const double* g = self.grad.data() + r * c;
      double gs = 0.0;
      for (std::size_t i = 0; i < c; ++i) gs += g[i];
      for (std::size_t i = 0; i < c; ++i)
        gh[r * c + i] += (g[i] - std::exp(lp[i]) * gs) / tau;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = last_dim(x, "layer_norm");
  if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 || beta.dim(0) != n)
    throw DimensionError("layer_norm: affine extent");
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const auto v = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += in[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (in[i] - mu) * inv_std[r];
      out[r * n + i] = xhat[r * n + i] * gv[i] + bv[i];
    }
  }
  Node* nx = N(x);
  Node* ng = N(gamma);
  Node* nb = N(beta);
  return make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                     [nx, ng, nb, n, rows, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](const Node& self) {
    double* gx = nx->grad_ptr();
    double* gg = ng->grad_ptr();
    double* gb = nb->grad_ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * n;
      const double* xh = xhat.data() + r * n;
      if (gg)
        for (std::size_t i = 0; i < n; ++i) gg[i] += g[i] * xh[i];
      if (gb)
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      if (gx) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dxh = g[i] * ng->value[i];
          s1 += dxh;
          s2 += dxh * xh[i];
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double dxh = g[i] * ng->value[i];
          gx[r * n + i] += inv_std[r] * (dxh - inv_n * s1 - xh[i] * inv_n * s2);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing

Tensor gather(const Tensor& x, std::span<const int> index) {
  require_rank2(x, "gather");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (index.size() != m) throw DimensionError("gather: one index per row required");
  std::vector<double> out(m);
  std::vector<std::size_t> flat(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= n)
      throw IndexError("gather: index " + std::to_string(index[i]) +
                       " out of range for " + std::to_string(n) + " columns");
    flat[i] = i * n + static_cast<std::size_t>(index[i]);
    out[i] = x.data()[flat[i]];
  }
  Node* nx = N(x);
  return make_result({m}, std::move(out), {&x},
                     [nx, flat = std::move(flat)](const Node& self) {
    double* gx = nx->grad_ptr();
    for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += self.grad[i];
  });
}

Tensor one_hot(int index, std::size_t classes) {
  if (index < 0 || static_cast<std::size_t>(index) >= classes)
    throw IndexError("one_hot: index " + std::to_string(index) + " out of range");
  std::vector<double> out(classes, 0.0);
  out[static_cast<std::size_t>(index)] = 1.0;
  return Tensor::from_data({classes}, std::move(out));
}

Tensor one_hot(std::span<const int> index, std::size_t classes) {
  std::vector<double> out(index.size() * classes, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= classes)
      throw IndexError("one_hot: index " + std::to_string(index[i]) + " out of range");
    out[i * classes + static_cast<std::size_t>(index[i])] = 1.0;
  }
  return Tensor::from_data({index.size(), classes}, std::move(out));
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  require(x, "masked_fill");
  if (mask.size() != x.size()) throw DimensionError("masked_fill: mask size");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  Node* nx = N(x);
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return make_result(x.shape(), std::move(out), {&x},
                     [nx, keep = std::move(keep)](const Node& self) {
    double* gx = nx->grad_ptr();
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (!keep[i]) gx[i] += self.grad[i];
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding_lookup");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) +
                       " outside vocabulary of " + std::to_string(v));
    rows[i] = static_cast<std::size_t>(ids[i]);
    std::copy_n(table.data().data() + rows[i] * d, d, out.data() + i * d);
  }
  Node* nt = N(table);
  return make_result({ids.size(), d}, std::move(out), {&table},
                     [nt, d, rows = std::move(rows)](const Node& self) {
    double* gt = nt->grad_ptr();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[rows[i] * d + j] += self.grad[i * d + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  std::vector<Node*> nodes;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column mismatch");
    offsets.push_back(rows * cols);
    rows += p.dim(0);
    nodes.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result_n({rows, cols}, std::move(out), parts,
                               [nodes = std::move(nodes),
                                offsets = std::move(offsets)](const Node& self) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      double* g = nodes[k]->grad_ptr();
      if (!g) continue;
      for (std::size_t i = 0; i < nodes[k]->value.size(); ++i)
        g[i] += self.grad[offsets[k] + i];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  if (begin > end || end > x.dim(0)) throw IndexError("slice_rows: bad range");
  const std::size_t cols = x.dim(1);
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  Node* nx = N(x);
  return make_result({end - begin, cols}, std::move(out), {&x},
                     [nx, begin, cols](const Node& self) {
    double* gx = nx->grad_ptr();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * cols + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Attention

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, bool causal) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != m)
    throw DimensionError("attention: q/k/v extents disagree");
  if (heads == 0 || d % heads != 0)
    throw DimensionError("attention: width not divisible by head count");
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();

  // probs[h][i][j]
  std::vector<double> probs(heads * n * m, 0.0);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      double* p = probs.data() + (h * n + i) * m;
      const std::size_t jmax = causal ? std::min(m, i + 1) : m;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < jmax; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += Q[i * d + c0 + c] * K[j * d + c0 + c];
        p[j] = acc * s;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < jmax; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j < jmax; ++j) p[j] /= z;
      double* o = out.data() + i * d + c0;
      for (std::size_t j = 0; j < jmax; ++j) {
        const double pj = p[j];
        const double* vr = V + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) o[c] += pj * vr[c];
      }
    }
  }

  Node* nq = N(q);
  Node* nk = N(k);
  Node* nv = N(v);
  return make_result({n, d}, std::move(out), {&q, &k, &v},
                     [nq, nk, nv, n, m, d, dh, heads, s, causal,
                      probs = std::move(probs)](const Node& self) {
    const double* G = self.grad.data();
    const double* Q = nq->value.data();
    const double* K = nk->value.data();
    const double* V = nv->value.data();
    double* gq = nq->grad_ptr();
    double* gk = nk->grad_ptr();
    double* gv = nv->grad_ptr();
    std::vector<double> dp(m);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = probs.data() + (h * n + i) * m;
        const std::size_t jmax = causal ? std::min(m, i + 1) : m;
        const double* g = G + i * d + c0;
        double dot = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += g[c] * V[j * d + c0 + c];
          dp[j] = acc;
          dot += acc * p[j];
          if (gv)
            for (std::size_t c = 0; c < dh; ++c) gv[j * d + c0 + c] += p[j] * g[c];
        }
        for (std::size_t j = 0; j < jmax; ++j) {
          const double ds = p[j] * (dp[j] - dot) * s;
          if (ds == 0.0) continue;
          if (gq)
            for (std::size_t c = 0; c < dh; ++c) gq[i * d + c0 + c] += ds * K[j * d + c0 + c];
          if (gk)
            for (std::size_t c = 0; c < dh; ++c) gk[j * d + c0 + c] += ds * Q[i * d + c0 + c];
        }
      }
    }
  });
}

Tensor straight_through(const Tensor& soft, std::vector<double> hard) {
  require(soft, "straight_through");
  if (hard.size() != soft.size()) throw DimensionError("straight_through: size mismatch");
  Node* ns = N(soft);
  return make_result(soft.shape(), std::move(hard), {&soft}, [ns](const Node& self) {
    double* gs = ns->grad_ptr();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gs[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// CTC

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> targets) {
  std::size_t need = targets.size();
  for (std::size_t i = 1; i < targets.size(); ++i)
    if (targets[i] == targets[i - 1]) ++need;
  return need;
}

Tensor ctc_loss(const Tensor& logits, std::span<const int> targets, int blank) {
  require_rank2(logits, "ctc_loss");
  const std::size_t T = logits.dim(0), K = logits.dim(1);
  if (blank < 0 || static_cast<std::size_t>(blank) >= K)
    throw IndexError("ctc_loss: blank outside alphabet");
  for (int y : targets)
    if (y < 0 || static_cast<std::size_t>(y) >= K || y == blank)
      throw IndexError("ctc_loss: target id " + std::to_string(y) + " invalid");
  if (T == 0 || T < ctc_min_frames(targets))
    throw InfeasibleAlignmentError("ctc_loss: " + std::to_string(T) +
                                   " frames cannot align " +
                                   std::to_string(targets.size()) + " labels");

  const std::size_t S = 2 * targets.size() + 1;
  std::vector<int> ext(S, blank);
  for (std::size_t i = 0; i < targets.size(); ++i) ext[2 * i + 1] = targets[i];

  // log-softmax over the alphabet per frame
  std::vector<double> lp(T * K);
  const auto v = logits.data();
  for (std::size_t t = 0; t < T; ++t) {
    double mx = kNegInf;
    for (std::size_t c = 0; c < K; ++c) mx = std::max(mx, v[t * K + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < K; ++c) z += std::exp(v[t * K + c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < K; ++c) lp[t * K + c] = v[t * K + c] - lse;
  }
  auto skip_ok = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp[static_cast<std::size_t>(ext[0])];
  if (S > 1) alpha[1] = lp[static_cast<std::size_t>(ext[1])];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      if (a != kNegInf) a += lp[t * K + static_cast<std::size_t>(ext[s])];
      alpha[t * S + s] = a;
    }
  }
  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);
  if (!std::isfinite(log_p))
    throw NumericError("ctc_loss: alignment probability underflowed");

  Node* nl = N(logits);
  return make_result({}, {-log_p}, {&logits},
                     [nl, T, K, S, ext = std::move(ext), lp = std::move(lp),
                      alpha = std::move(alpha), log_p, blank](const Node& self) {
    // beta[t][s]: log prob of frames t+1..T-1 given state s at frame t.
    std::vector<double> beta(T * S, kNegInf);
    beta[(T - 1) * S + S - 1] = 0.0;
    if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
    auto skip_from = [&](std::size_t s) {
      return s + 2 < S && ext[s + 2] != blank && ext[s + 2] != ext[s];
    };
    for (std::size_t t = T - 1; t-- > 0;) {
      for (std::size_t s = 0; s < S; ++s) {
        double b = beta[(t + 1) * S + s] + lp[(t + 1) * K + static_cast<std::size_t>(ext[s])];
        if (s + 1 < S)
          b = log_add(b, beta[(t + 1) * S + s + 1] +
                             lp[(t + 1) * K + static_cast<std::size_t>(ext[s + 1])]);
        if (skip_from(s))
          b = log_add(b, beta[(t + 1) * S + s + 2] +
                             lp[(t + 1) * K + static_cast<std::size_t>(ext[s + 2])]);
        beta[t * S + s] = b;
      }
    }
    double* g = nl->grad_ptr();
    const double up = self.grad[0];
    std::vector<double> gamma(K);
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(gamma.begin(), gamma.end(), 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        const double ab = alpha[t * S + s] + beta[t * S + s];
        if (ab == kNegInf) continue;
        gamma[static_cast<std::size_t>(ext[s])] += std::exp(ab - log_p);
      }
      for (std::size_t c = 0; c < K; ++c)
        g[t * K + c] += up * (std::exp(lp[t * K + c]) - gamma[c]);
    }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference checking

namespace {

double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("grad_check: non-finite ") + what);
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (!x.requires_grad()) throw ParameterError("grad_check: x must require grad");
  x.zero_grad();
  Tensor y = f(x);
  checked(y.item(), "output");
  y.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  double worst = 0.0;
  auto data = x.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    double plus, minus;
    {
      NoGradGuard guard;
      data[i] = orig + eps;
      plus = checked(f(x).item(), "output");
      data[i] = orig - eps;
      minus = checked(f(x).item(), "output");
    }
    data[i] = orig;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double err =
        std::abs(checked(analytic[i], "gradient") - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params,
                         double eps, std::size_t max_coords_per_param) {
  for (Tensor& p : params) {
    if (!p.requires_grad()) throw ParameterError("grad_check_params: parameter without grad");
    p.zero_grad();
  }
  Tensor y = f();
  checked(y.item(), "output");
  y.backward();
  double worst = 0.0;
  for (Tensor& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto data = p.mutable_data();
    const std::size_t n = data.size();
    const std::size_t probes =
        max_coords_per_param == 0 ? n : std::min(n, max_coords_per_param);
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = probes == n ? k : (k * n) / probes;
      const double orig = data[i];
      double plus, minus;
      {
        NoGradGuard guard;
        data[i] = orig + eps;
        plus = checked(f().item(), "output");
        data[i] = orig - eps;
        minus = checked(f().item(), "output");
      }
      data[i] = orig;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(checked(analytic[i], "gradient") - numeric) /
                         std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace tokenchain::ad
