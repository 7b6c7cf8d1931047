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

#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double arrays. A Tensor is a shared handle onto a graph node; operations
// record their inputs and a backward closure whenever gradient recording is
// enabled and at least one input requires a gradient.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace tokenchain::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  // Writable view of the values. Intended for leaves (parameters, inputs);
  // writing into an interior node does not invalidate its consumers.
  std::span<double> mutable_data();
  // Empty span when the tensor does not require a gradient.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  bool requires_grad() const;
  bool is_leaf() const;
  void zero_grad();

  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t i, std::size_t j) const;

  // Seeds d(this)/d(this) = 1 and accumulates into every reachable leaf
  // that requires a gradient. Only valid on single-element tensors.
  void backward() const;

  // Same values, no history, no gradient.
  Tensor detach() const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[m x k] * w[k x n] + b[n]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[... x n] + b[n], broadcast over leading axes.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor square(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- normalisation over the last axis ----
Tensor softmax_temp(const Tensor& h, double tau);
Tensor log_softmax_temp(const Tensor& h, double tau);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---- indexing ----
// x[m x n], index[m] -> [m] with out[i] = x[i, index[i]].
Tensor gather(const Tensor& x, std::span<const int> index);
Tensor one_hot(int index, std::size_t classes);
Tensor one_hot(std::span<const int> index, std::size_t classes);
// Positions where mask != 0 are replaced by value and receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);
// table[V x d], ids[n] -> [n x d]
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

// ---- sequence ops ----
// Multi-head scaled dot-product attention. q[n x d], k/v[m x d]; d must be
// divisible by heads. With causal set, query i only sees keys j <= i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, bool causal);

// Forward value is `hard` (same shape as soft); backward hands the incoming
// gradient to `soft` unchanged.
Tensor straight_through(const Tensor& soft, std::vector<double> hard);

// -log P_CTC(targets | logits) over logits[T x K], log-space forward-backward.
// Throws InfeasibleAlignmentError when T cannot cover the targets.
Tensor ctc_loss(const Tensor& logits, std::span<const int> targets, int blank);

// Minimum number of frames a CTC alignment of `targets` needs.
std::size_t ctc_min_frames(std::span<const int> targets);

// ---- verification ----
// max_i |analytic_i - numeric_i| / max(1, |numeric_i|) with central
// differences of step eps. f must be deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps = 1e-4);

// Same check over a set of parameters that `f` closes over. When
// max_coords_per_param > 0 only that many evenly spaced coordinates of each
// parameter are probed.
double grad_check_params(const std::function<Tensor()>& f,
                         std::span<Tensor> params, double eps = 1e-4,
                         std::size_t max_coords_per_param = 0);

}  // namespace tokenchain::ad
