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

// Parameter containers, pre-norm transformer building blocks and the AdamW
// optimiser shared by the ASR, T2S and S2A models.

#include <cstddef>
#include <string>
#include <vector>

#include "tokenchain/autodiff.hpp"
#include "tokenchain/random.hpp"

namespace tokenchain::nn {

using ad::Tensor;

enum class Init { zeros, ones, xavier, normal_small };

class ParamSet {
 public:
  Tensor add(std::string name, ad::Shape shape, Init init, Rng& rng);

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  // Undefined tensor when absent.
  Tensor find(const std::string& name) const;
  void zero_grad();
  double grad_norm() const;
  // Value equality of every parameter (names, shapes and bits).
  bool same_values(const ParamSet& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

struct Linear {
  Tensor w;
  Tensor b;
  Tensor operator()(const Tensor& x) const { return ad::affine(x, w, b); }
};
Linear make_linear(ParamSet& ps, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, bool zero_init = false);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gamma, beta); }
};
LayerNorm make_layer_norm(ParamSet& ps, const std::string& name, std::size_t d, Rng& rng);

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;
  Tensor operator()(const Tensor& x, const Tensor& memory, bool causal) const;
};
MultiHeadAttention make_attention(ParamSet& ps, const std::string& name,
                                  std::size_t d, std::size_t heads, Rng& rng);

struct FeedForward {
  Linear up, down;
  Tensor operator()(const Tensor& x) const { return down(ad::gelu(up(x))); }
};
FeedForward make_feed_forward(ParamSet& ps, const std::string& name, std::size_t d,
                              std::size_t hidden, Rng& rng);

// Pre-norm block: self-attention, optional cross-attention over a memory,
// position-wise feed-forward; residual around each.
struct TransformerBlock {
  LayerNorm ln_self;
  MultiHeadAttention self_attn;
  bool has_cross = false;
  LayerNorm ln_cross;
  MultiHeadAttention cross_attn;
  LayerNorm ln_ff;
  FeedForward ff;
  bool causal = false;

  Tensor operator()(const Tensor& x, const Tensor* memory = nullptr) const;
};

struct BlockShape {
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t ffn = 128;
};
TransformerBlock make_block(ParamSet& ps, const std::string& name, const BlockShape& shape,
                            bool causal, bool cross, Rng& rng);

// Row-wise sinusoid-free learned positions: rows [0, n) of the table.
Tensor positions(const Tensor& table, std::size_t n);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.01;
  double max_grad_norm = 1.0;  // <= 0 disables clipping
};

// Decoupled weight decay on matrices only; vectors (biases, norms) are not
// decayed. Holds moments indexed like the ParamSet it is stepped with.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // Returns the gradient norm before clipping.
  double step(ParamSet& params, double lr);

  const AdamWConfig& config() const { return cfg_; }
  long long steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(long long steps, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  AdamWConfig cfg_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace tokenchain::nn
