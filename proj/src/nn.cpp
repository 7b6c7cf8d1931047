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

#include "tokenchain/nn.hpp"

#include <cmath>

#include "tokenchain/error.hpp"

namespace tokenchain::nn {

Tensor ParamSet::add(std::string name, ad::Shape shape, Init init, Rng& rng) {
  for (const auto& n : names_)
    if (n == name) throw ConfigError("duplicate parameter name " + name);
  const std::size_t count = ad::shape_size(shape);
  std::vector<double> data(count, 0.0);
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case Init::xavier: {
      const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : 1.0;
      const double fan_out = shape.size() >= 2 ? static_cast<double>(shape[1])
                                               : static_cast<double>(count);
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> u(-a, a);
      for (double& x : data) x = u(rng);
      break;
    }
    case Init::normal_small: {
      std::normal_distribution<double> n(0.0, 0.1);
      for (double& x : data) x = n(rng);
      break;
    }
  }
  Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
  names_.push_back(std::move(name));
  tensors_.push_back(t);
  return t;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

Tensor ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  return {};
}

void ParamSet::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

double ParamSet::grad_norm() const {
  double s = 0.0;
  for (const auto& t : tensors_)
    for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

bool ParamSet::same_values(const ParamSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
    const auto a = tensors_[i].data();
    const auto b = other.tensors_[i].data();
    if (!std::equal(a.begin(), a.end(), b.begin())) return false;
  }
  return true;
}

Linear make_linear(ParamSet& ps, const std::string& name, std::size_t in,
                   std::size_t out, Rng& rng, bool zero_init) {
  return Linear{ps.add(name + ".w", {in, out}, zero_init ? Init::zeros : Init::xavier, rng),
                ps.add(name + ".b", {out}, Init::zeros, rng)};
}

LayerNorm make_layer_norm(ParamSet& ps, const std::string& name, std::size_t d, Rng& rng) {
  return LayerNorm{ps.add(name + ".gamma", {d}, Init::ones, rng),
                   ps.add(name + ".beta", {d}, Init::zeros, rng)};
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const Tensor& memory,
                                      bool causal) const {
  return o(ad::attention(q(x), k(memory), v(memory), heads, causal));
}

MultiHeadAttention make_attention(ParamSet& ps, const std::string& name, std::size_t d,
                                  std::size_t heads, Rng& rng) {
  MultiHeadAttention m;
  m.q = make_linear(ps, name + ".q", d, d, rng);
  m.k = make_linear(ps, name + ".k", d, d, rng);
  m.v = make_linear(ps, name + ".v", d, d, rng);
  m.o = make_linear(ps, name + ".o", d, d, rng);
  m.heads = heads;
  return m;
}

FeedForward make_feed_forward(ParamSet& ps, const std::string& name, std::size_t d,
                              std::size_t hidden, Rng& rng) {
  return FeedForward{make_linear(ps, name + ".up", d, hidden, rng),
                     make_linear(ps, name + ".down", hidden, d, rng)};
}

Tensor TransformerBlock::operator()(const Tensor& x, const Tensor* memory) const {
  Tensor h = ln_self(x);
  Tensor out = ad::add(x, self_attn(h, h, causal));
  if (has_cross) {
    if (memory == nullptr) throw InputError("cross-attention block needs a memory");
    out = ad::add(out, cross_attn(ln_cross(out), *memory, false));
  }
  return ad::add(out, ff(ln_ff(out)));
}

TransformerBlock make_block(ParamSet& ps, const std::string& name, const BlockShape& shape,
                            bool causal, bool cross, Rng& rng) {
  TransformerBlock b;
  b.ln_self = make_layer_norm(ps, name + ".ln_self", shape.d_model, rng);
  b.self_attn = make_attention(ps, name + ".self", shape.d_model, shape.heads, rng);
  b.has_cross = cross;
  if (cross) {
    b.ln_cross = make_layer_norm(ps, name + ".ln_cross", shape.d_model, rng);
    b.cross_attn = make_attention(ps, name + ".cross", shape.d_model, shape.heads, rng);
  }
  b.ln_ff = make_layer_norm(ps, name + ".ln_ff", shape.d_model, rng);
  b.ff = make_feed_forward(ps, name + ".ff", shape.d_model, shape.ffn, rng);
  b.causal = causal;
  return b;
}

Tensor positions(const Tensor& table, std::size_t n) {
  if (n > table.dim(0))
    throw InputError("sequence of length " + std::to_string(n) +
                     " exceeds the model's maximum of " + std::to_string(table.dim(0)));
  return ad::slice_rows(table, 0, n);
}

double AdamW::step(ParamSet& params, double lr) {
  auto& ts = params.tensors();
  if (m_.size() != ts.size()) {
    m_.assign(ts.size(), {});
    v_.assign(ts.size(), {});
    for (std::size_t i = 0; i < ts.size(); ++i) {
      m_[i].assign(ts[i].size(), 0.0);
      v_[i].assign(ts[i].size(), 0.0);
    }
  }
  const double norm = params.grad_norm();
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient norm");
  const double clip =
      cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm ? cfg_.max_grad_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    auto p = ts[i].mutable_data();
    const auto g = ts[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const bool decay = ts[i].rank() >= 2;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
      p[j] -= lr * (update + (decay ? cfg_.weight_decay * p[j] : 0.0));
    }
  }
  return norm;
}

void AdamW::restore(long long steps, std::vector<std::vector<double>> m,
                    std::vector<std::vector<double>> v) {
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace tokenchain::nn
