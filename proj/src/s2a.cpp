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

#include "tokenchain/s2a.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "tokenchain/error.hpp"
#include "tokenchain/t2s.hpp"

namespace tokenchain::s2a {

void S2aConfig::validate() const {
  if (semantic_size < 4 || acoustic_size < 2) throw ConfigError("S2A vocabulary sizes too small");
  if (num_layers < 2) throw ConfigError("S2A needs at least one acoustic layer");
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw ConfigError("S2A width must be a positive multiple of the head count");
  if (blocks == 0 || ffn == 0 || max_len == 0) throw ConfigError("S2A layer counts must be positive");
}

std::size_t MaskPlan::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

std::vector<double> layer_weights(int Q, double progress) {
  if (Q < 2) throw ParameterError("need at least one acoustic layer");
  if (progress < 0.0 || progress > 1.0) throw ParameterError("progress must lie in [0, 1]");
  const int n = Q - 1;
  const double coarse_total = static_cast<double>(n) * (n + 1) / 2.0;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int j = 2; j <= Q; ++j) {
    const double coarse = static_cast<double>(Q - j + 1) / coarse_total;
    w[static_cast<std::size_t>(j - 2)] = (1.0 - progress) * coarse + progress / n;
  }
  return w;
}

MaskPlan sample_mask_plan(std::size_t T, int Q, std::size_t prompt_len, double progress, Rng& rng) {
  if (T <= prompt_len) throw InputError("sequence must extend beyond the prompt");
  const auto w = layer_weights(Q, progress);
  MaskPlan plan;
  plan.layer = 2 + static_cast<int>(std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng));
  plan.prompt_len = prompt_len;
  const double u = uniform01(rng);
  plan.fraction = std::pow(std::cos(std::numbers::pi * u / 2.0), 2);
  const std::size_t free = T - prompt_len;
  const auto n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(plan.fraction * static_cast<double>(free))), 1, free);
  std::vector<std::size_t> order(free);
  std::iota(order.begin(), order.end(), prompt_len);
  std::shuffle(order.begin(), order.end(), rng);
  plan.mask.assign(T, 0);
  for (std::size_t i = 0; i < n; ++i) plan.mask[order[i]] = 1;
  return plan;
}

S2aModel::S2aModel(S2aConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed({cfg_.seed, 0x52a}));
  const std::size_t d = cfg_.d_model;
  const auto layers = static_cast<std::size_t>(cfg_.num_layers - 1);
  sem_emb_ = params_.add("sem_emb", {static_cast<std::size_t>(cfg_.semantic_size), d},
                         nn::Init::normal_small, rng);
  null_emb_ = params_.add("null_emb", {1, d}, nn::Init::normal_small, rng);
  layer_emb_ = params_.add("layer_emb", {layers, d}, nn::Init::normal_small, rng);
  pos_ = params_.add("pos", {cfg_.max_len, d}, nn::Init::normal_small, rng);
  for (std::size_t l = 0; l < layers; ++l)
    ac_emb_.push_back(params_.add("ac_emb" + std::to_string(l + 2),
                                  {static_cast<std::size_t>(cfg_.acoustic_size) + 1, d},
                                  nn::Init::normal_small, rng));
  const nn::BlockShape shape{d, cfg_.heads, cfg_.ffn};
  for (std::size_t i = 0; i < cfg_.blocks; ++i)
    blocks_.push_back(nn::make_block(params_, "block" + std::to_string(i), shape, false, false, rng));
  ln_ = nn::make_layer_norm(params_, "ln", d, rng);
  for (std::size_t l = 0; l < layers; ++l)
    heads_.push_back(nn::make_linear(params_, "head" + std::to_string(l + 2), d,
                                     static_cast<std::size_t>(cfg_.acoustic_size), rng, true));
}

Tensor S2aModel::conditioning(std::span<const int> s) const {
  if (s.empty()) throw InputError("S2A input is empty");
  return ad::embedding_lookup(sem_emb_, s);
}

Tensor S2aModel::null_conditioning(std::size_t T) const {
  return ad::embedding_lookup(null_emb_, std::vector<int>(T, 0));
}

Tensor S2aModel::logits(const Tensor& cond, const Stack& lower, std::span<const int> canvas,
                        int j) const {
  if (j < 2 || j > cfg_.num_layers) throw IndexError("target layer out of range");
  const std::size_t T = cond.dim(0);
  if (canvas.size() != T) throw DimensionError("layer canvas must cover every position");
  if (lower.size() < static_cast<std::size_t>(j - 2)) throw DimensionError("missing lower layers");
  Tensor x = cond;
  for (int l = 2; l < j; ++l) {
    const auto& row = lower[static_cast<std::size_t>(l - 2)];
    if (row.size() != T) throw DimensionError("acoustic rows must cover every position");
    for (int id : row)
      if (id < 0 || id >= cfg_.acoustic_size) throw IndexError("acoustic id out of range");
    x = ad::add(x, ad::embedding_lookup(ac_emb_[static_cast<std::size_t>(l - 2)], row));
  }
  x = ad::add(x, ad::embedding_lookup(ac_emb_[static_cast<std::size_t>(j - 2)], canvas));
  x = ad::add(x, ad::embedding_lookup(layer_emb_, std::vector<int>(T, j - 2)));
  x = ad::add(x, nn::positions(pos_, T));
  for (const auto& block : blocks_) x = block(x);
  return heads_[static_cast<std::size_t>(j - 2)](ln_(x));
}

Tensor cfg_dropout(const Tensor& conditioning, const Tensor& null_rows, double p_drop, Rng& rng,
                   bool* dropped) {
  if (p_drop < 0.0 || p_drop >= 1.0) throw ParameterError("drop probability must lie in [0, 1)");
  const bool drop = uniform01(rng) < p_drop;
  if (dropped) *dropped = drop;
  return drop ? null_rows : conditioning;
}

namespace {

void validate_plan(const S2aModel& model, const corpus::Utterance& u, const MaskPlan& plan) {
  const auto& cfg = model.config();
  if (u.a.size() != static_cast<std::size_t>(cfg.num_layers - 1))
    throw DimensionError("acoustic stack depth does not match the model");
  if (plan.mask.size() != u.s.size()) throw DimensionError("mask must cover every position");
  if (plan.layer < 2 || plan.layer > cfg.num_layers) throw IndexError("target layer out of range");
  for (std::size_t t = 0; t < plan.prompt_len && t < plan.mask.size(); ++t)
    if (plan.mask[t]) throw InputError("prompt positions cannot be masked");
  if (plan.masked_count() == 0) throw InputError("mask plan selects no positions");
}

}  // namespace

Tensor s2a_forward(const S2aModel& model, const corpus::Utterance& u, const MaskPlan& plan,
                   bool drop_conditioning) {
  validate_plan(model, u, plan);
  std::vector<int> canvas = u.a[static_cast<std::size_t>(plan.layer - 2)];
  for (std::size_t t = 0; t < canvas.size(); ++t)
    if (plan.mask[t]) canvas[t] = model.config().mask_id();
  Tensor cond = drop_conditioning ? model.null_conditioning(u.s.size()) : model.conditioning(u.s);
  return model.logits(cond, u.a, canvas, plan.layer);
}

Tensor s2a_loss(const S2aModel& model, const corpus::Utterance& u, const MaskPlan& plan,
                bool drop_conditioning) {
  return masked_ce(s2a_forward(model, u, plan, drop_conditioning),
                   u.a[static_cast<std::size_t>(plan.layer - 2)], plan);
}

Tensor masked_ce(const Tensor& logits, std::span<const int> target, const MaskPlan& plan) {
  if (logits.rank() != 2 || logits.dim(0) != target.size() || plan.mask.size() != target.size())
    throw DimensionError("masked_ce: logits, targets and mask must align");
  if (plan.masked_count() == 0) throw InputError("mask plan selects no positions");
  std::vector<int> labels(target.size(), 0);
  std::vector<double> weights(target.size(), 0.0);
  for (std::size_t t = 0; t < target.size(); ++t) {
    if (!plan.mask[t]) continue;
    labels[t] = target[t];
    weights[t] = 1.0;
  }
  const double count = static_cast<double>(plan.masked_count());
  const std::size_t n = weights.size();
  Tensor picked = ad::gather(ad::log_softmax_temp(logits, 1.0), labels);
  return ad::scale(ad::sum(ad::mul(picked, Tensor::from_data({n}, std::move(weights)))), -1.0 / count);
}

Stack decode_iterative(const S2aModel& model, std::span<const int> s, const Stack& a_prompt,
                       const DecodeOptions& opt, Rng& rng) {
  const auto& cfg = model.config();
  if (opt.steps_per_layer < 1) throw ParameterError("steps_per_layer must be at least 1");
  if (opt.temperature < 0.0) throw ParameterError("temperature must be non-negative");
  const auto layers = static_cast<std::size_t>(cfg.num_layers - 1);
  if (a_prompt.size() != layers) throw DimensionError("prompt must supply every acoustic layer");
  const std::size_t T = s.size();
  const std::size_t P = a_prompt[0].size();
  for (const auto& row : a_prompt)
    if (row.size() != P) throw DimensionError("prompt rows must share one length");
  if (P > T) throw InputError("prompt longer than the semantic sequence");

  ad::NoGradGuard guard;
  Tensor cond = model.conditioning(s);
  Tensor uncond = opt.guidance != 1.0 ? model.null_conditioning(T) : Tensor{};
  const auto V = static_cast<std::size_t>(cfg.acoustic_size);
  Stack out(layers, std::vector<int>(T, cfg.mask_id()));
  for (std::size_t l = 0; l < layers; ++l)
    std::copy(a_prompt[l].begin(), a_prompt[l].end(), out[l].begin());

  for (int j = 2; j <= cfg.num_layers; ++j) {
    auto& canvas = out[static_cast<std::size_t>(j - 2)];
    const std::size_t total = T - P;
    for (int k = 1; k <= opt.steps_per_layer && total > 0; ++k) {
      std::vector<std::size_t> masked;
      for (std::size_t t = P; t < T; ++t)
        if (canvas[t] == cfg.mask_id()) masked.push_back(t);
      if (masked.empty()) break;
      Tensor lp = ad::log_softmax_temp(model.logits(cond, out, canvas, j), 1.0);
      if (uncond.defined()) {
        Tensor lu = ad::log_softmax_temp(model.logits(uncond, out, canvas, j), 1.0);
        lp = ad::add(ad::scale(lp, opt.guidance), ad::scale(lu, 1.0 - opt.guidance));
      }
      std::vector<int> pick(masked.size());
      std::vector<double> confidence(masked.size());
      for (std::size_t m = 0; m < masked.size(); ++m) {
        const std::size_t t = masked[m];
        std::vector<double> p(V);
        double mx = -std::numeric_limits<double>::infinity();
        const double inv_temp = opt.temperature > 0.0 ? 1.0 / opt.temperature : 1.0;
        for (std::size_t c = 0; c < V; ++c) mx = std::max(mx, lp.at(t, c) * inv_temp);
        double z = 0.0;
        for (std::size_t c = 0; c < V; ++c) z += p[c] = std::exp(lp.at(t, c) * inv_temp - mx);
        for (double& x : p) x /= z;
        const std::size_t c = opt.temperature > 0.0
                                  ? std::discrete_distribution<std::size_t>(p.begin(), p.end())(rng)
                                  : static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        pick[m] = static_cast<int>(c);
        confidence[m] = p[c];
      }
      const double keep_frac = std::cos(std::numbers::pi / 2.0 * k / opt.steps_per_layer);
      auto remain = static_cast<std::size_t>(std::floor(static_cast<double>(total) * keep_frac));
      if (k == opt.steps_per_layer) remain = 0;
      remain = std::min(remain, masked.size() - 1);
      std::vector<std::size_t> order(masked.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
      for (std::size_t i = 0; i < masked.size() - remain; ++i)
        canvas[masked[order[i]]] = pick[order[i]];
    }
  }
  return out;
}

MaskedAccuracy masked_accuracy(const S2aModel& model, std::span<const corpus::Utterance> eval,
                               std::span<const corpus::Utterance> reference, double prompt_lo,
                               double prompt_hi, Rng& rng) {
  const auto& cfg = model.config();
  const auto layers = static_cast<std::size_t>(cfg.num_layers - 1);
  std::vector<std::vector<long>> freq(layers, std::vector<long>(static_cast<std::size_t>(cfg.acoustic_size), 0));
  for (const auto& u : reference)
    for (std::size_t l = 0; l < layers && l < u.a.size(); ++l)
      for (int id : u.a[l]) ++freq[l][static_cast<std::size_t>(id)];
  std::vector<int> majority(layers);
  for (std::size_t l = 0; l < layers; ++l)
    majority[l] = static_cast<int>(std::max_element(freq[l].begin(), freq[l].end()) - freq[l].begin());

  ad::NoGradGuard guard;
  MaskedAccuracy acc;
  double hits = 0.0, base = 0.0;
  for (const auto& u : eval) {
    if (u.s.size() < 2) continue;
    const auto P = t2s::sample_prompt_length(u.s.size(), prompt_lo, prompt_hi, rng);
    const auto plan = sample_mask_plan(u.s.size(), cfg.num_layers, P, 1.0, rng);
    Tensor logits = s2a_forward(model, u, plan);
    const auto& truth = u.a[static_cast<std::size_t>(plan.layer - 2)];
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (!plan.mask[t]) continue;
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.dim(1); ++c)
        if (logits.at(t, c) > logits.at(t, best)) best = c;
      hits += static_cast<int>(best) == truth[t];
      base += majority[static_cast<std::size_t>(plan.layer - 2)] == truth[t];
      ++acc.count;
    }
  }
  if (acc.count > 0) {
    acc.model = hits / static_cast<double>(acc.count);
    acc.majority = base / static_cast<double>(acc.count);
  }
  return acc;
}

}  // namespace tokenchain::s2a
