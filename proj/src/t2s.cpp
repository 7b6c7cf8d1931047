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

#include "tokenchain/t2s.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tokenchain/corpus.hpp"
#include "tokenchain/error.hpp"

namespace tokenchain::t2s {

using corpus::Vocabulary;

void T2sConfig::validate() const {
  if (text_size < 8 || semantic_size < 16) throw ConfigError("T2S vocabulary sizes too small");
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw ConfigError("T2S width must be a positive multiple of the head count");
  if (layers == 0 || ffn == 0 || max_len < 4) throw ConfigError("T2S layer counts must be positive");
}

std::size_t PrefixBatch::text_rows() const {
  return soft_text.defined() ? soft_text.dim(0) : text.size();
}

std::vector<int> PrefixBatch::semantic_inputs() const {
  std::vector<int> in{Vocabulary::bos};
  in.insert(in.end(), prompt.begin(), prompt.end());
  in.insert(in.end(), target.begin(), target.end() - 1);
  return in;
}

std::vector<int> PrefixBatch::segments() const {
  std::vector<int> seg(text_rows(), static_cast<int>(Segment::text));
  seg.insert(seg.end(), prompt.size() + 1, static_cast<int>(Segment::prompt));
  seg.insert(seg.end(), target.size() - 1, static_cast<int>(Segment::target));
  return seg;
}

void PrefixBatch::validate(int text_size, int semantic_size) const {
  if (target.empty() || target.back() != Vocabulary::eos)
    throw InputError("T2S targets must end with eos");
  const std::size_t n = text_rows() + prompt.size() + target.size();
  if (labels.size() != n || mask.size() != n)
    throw DimensionError("T2S labels and mask must cover every row");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }))
    throw InputError("T2S label mask selects no positions");
  if (soft_text.defined()) {
    if (soft_text.rank() != 2 || soft_text.dim(1) != static_cast<std::size_t>(text_size))
      throw DimensionError("soft text rows must have one column per text class");
  } else {
    for (int id : text)
      if (id < 0 || id >= text_size) throw IndexError("text id out of range");
  }
  for (int id : labels)
    if (id < 0 || id >= semantic_size) throw IndexError("semantic label out of range");
  for (int id : prompt)
    if (id < 0 || id >= semantic_size) throw IndexError("semantic prompt id out of range");
}

namespace {

PrefixBatch make_semantic_part(PrefixBatch b, std::size_t L, std::span<const int> s,
                               std::size_t prompt_len) {
  if (prompt_len > s.size()) throw InputError("prompt longer than the reference");
  b.prompt.assign(s.begin(), s.begin() + static_cast<long>(prompt_len));
  b.target.assign(s.begin() + static_cast<long>(prompt_len), s.end());
  b.target.push_back(Vocabulary::eos);
  // Row L + j predicts stream[j + 1] of [SBOS, s_1 .. s_T, eos].
  b.labels.assign(L, Vocabulary::pad);
  b.mask.assign(L, 0);
  for (std::size_t j = 0; j <= s.size(); ++j) {
    b.labels.push_back(j < s.size() ? s[j] : Vocabulary::eos);
    b.mask.push_back(j >= prompt_len ? 1 : 0);
  }
  return b;
}

}  // namespace

PrefixBatch make_prefix_batch(std::span<const int> text, std::span<const int> s,
                              std::size_t prompt_len) {
  PrefixBatch b;
  b.text.assign(text.begin(), text.end());
  return make_semantic_part(std::move(b), text.size(), s, prompt_len);
}

PrefixBatch make_prefix_batch(const Tensor& soft_text, std::span<const int> s,
                              std::size_t prompt_len) {
  if (soft_text.rank() != 2) throw DimensionError("soft text must be a matrix");
  PrefixBatch b;
  b.soft_text = soft_text;
  return make_semantic_part(std::move(b), soft_text.dim(0), s, prompt_len);
}

T2sModel::T2sModel(T2sConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed({cfg_.seed, 0x725}));
  const std::size_t d = cfg_.d_model;
  text_emb_ = params_.add("text_emb", {static_cast<std::size_t>(cfg_.text_size), d},
                          nn::Init::normal_small, rng);
  sem_emb_ = params_.add("sem_emb", {static_cast<std::size_t>(cfg_.semantic_size), d},
                         nn::Init::normal_small, rng);
  seg_emb_ = params_.add("seg_emb", {3, d}, nn::Init::normal_small, rng);
  pos_ = params_.add("pos", {cfg_.max_len, d}, nn::Init::normal_small, rng);
  const nn::BlockShape shape{d, cfg_.heads, cfg_.ffn};
  for (std::size_t i = 0; i < cfg_.layers; ++i)
    blocks_.push_back(nn::make_block(params_, "block" + std::to_string(i), shape, true, false, rng));
  ln_ = nn::make_layer_norm(params_, "ln", d, rng);
  out_ = nn::make_linear(params_, "out", d, static_cast<std::size_t>(cfg_.semantic_size), rng, true);
}

T2sModel T2sModel::clone() const {
  T2sModel copy(cfg_);
  auto& dst = copy.params_.tensors();
  const auto& src = params_.tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    std::copy(src[i].data().begin(), src[i].data().end(), dst[i].mutable_data().begin());
  return copy;
}

Tensor T2sModel::embed_text(std::span<const int> ids) const {
  return ad::embedding_lookup(text_emb_, ids);
}

Tensor T2sModel::embed_soft_text(const Tensor& rows) const {
  if (rows.rank() != 2 || rows.dim(1) != static_cast<std::size_t>(cfg_.text_size))
    throw DimensionError("soft text rows must have one column per text class");
  return ad::matmul(rows, text_emb_);
}

Tensor T2sModel::forward(const Tensor& text_embedded, std::span<const int> semantic,
                         std::span<const int> segments) const {
  if (semantic.empty()) throw InputError("T2S needs at least the SBOS row");
  Tensor sem = ad::embedding_lookup(sem_emb_, semantic);
  Tensor x = sem;
  if (text_embedded.defined() && text_embedded.dim(0) > 0) {
    const Tensor parts[] = {text_embedded, sem};
    x = ad::concat_rows(parts);
  }
  if (segments.size() != x.dim(0)) throw DimensionError("one segment id per row required");
  x = ad::add(x, ad::embedding_lookup(seg_emb_, segments));
  x = ad::add(x, nn::positions(pos_, x.dim(0)));
  for (const auto& block : blocks_) x = block(x);
  return out_(ln_(x));
}

Tensor t2s_forward(const T2sModel& model, const PrefixBatch& batch) {
  const auto& cfg = model.config();
  batch.validate(cfg.text_size, cfg.semantic_size);
  Tensor text = batch.soft_text.defined() ? model.embed_soft_text(batch.soft_text)
                                          : (batch.text.empty() ? Tensor{}
                                                                : model.embed_text(batch.text));
  return model.forward(text, batch.semantic_inputs(), batch.segments());
}

Tensor loss_t2s(const Tensor& logits, const PrefixBatch& batch) {
  if (logits.rank() != 2 || logits.dim(0) != batch.rows())
    throw DimensionError("loss_t2s: one logit row per prefix row required");
  const double count =
      static_cast<double>(std::count_if(batch.mask.begin(), batch.mask.end(),
                                        [](std::uint8_t m) { return m != 0; }));
  if (count == 0.0) throw InputError("T2S label mask selects no positions");
  std::vector<double> weights(batch.mask.begin(), batch.mask.end());
  // Unlabelled rows read class 0 and are weighted out.
  std::vector<int> labels(batch.rows());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = batch.mask[i] ? batch.labels[i] : 0;
  Tensor picked = ad::gather(ad::log_softmax_temp(logits, 1.0), labels);
  const std::size_t n = weights.size();
  Tensor w = Tensor::from_data({n}, std::move(weights));
  return ad::scale(ad::sum(ad::mul(picked, w)), -1.0 / count);
}

std::size_t sample_prompt_length(std::size_t T, double lo, double hi, Rng& rng) {
  if (!(lo >= 0.0 && lo <= hi && hi < 1.0))
    throw ParameterError("prompt fraction range must satisfy 0 <= lo <= hi < 1");
  const double u = lo + (hi - lo) * uniform01(rng);
  if (T == 0) return 0;
  const auto n = static_cast<std::size_t>(std::llround(u * static_cast<double>(T)));
  return std::min(n, T - 1);
}

std::vector<int> sample_prompt(std::span<const int> s, double lo, double hi, Rng& rng) {
  const std::size_t n = sample_prompt_length(s.size(), lo, hi, rng);
  return {s.begin(), s.begin() + static_cast<long>(n)};
}

std::vector<int> generate(const T2sModel& model, std::span<const int> text,
                          std::span<const int> prompt, const GenerateOptions& opt, Rng& rng) {
  if (opt.max_len < 1) throw ParameterError("max_len must be at least 1");
  if (opt.strategy == GenerateOptions::Strategy::top_k && opt.k < 1)
    throw ParameterError("top-k needs k >= 1");
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  Tensor text_rows = text.empty() ? Tensor{} : model.embed_text(text);
  std::vector<int> semantic{Vocabulary::bos};
  semantic.insert(semantic.end(), prompt.begin(), prompt.end());
  std::vector<int> segments(text.size(), static_cast<int>(Segment::text));
  segments.insert(segments.end(), semantic.size(), static_cast<int>(Segment::prompt));
  const std::size_t room = cfg.max_len > segments.size() ? cfg.max_len - segments.size() : 0;
  const std::size_t limit = std::min(opt.max_len, room);

  std::vector<int> out;
  const auto V = static_cast<std::size_t>(cfg.semantic_size);
  while (out.size() < limit) {
    Tensor logits = model.forward(text_rows, semantic, segments);
    const std::size_t r = logits.dim(0) - 1;
    std::vector<std::pair<double, int>> scored;
    for (std::size_t c = 0; c < V; ++c) {
      const int id = static_cast<int>(c);
      if (id == Vocabulary::pad || id == Vocabulary::bos) continue;
      scored.emplace_back(logits.at(r, c), id);
    }
    // Descending score, lower id first on ties.
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    int next = scored.front().second;
    if (opt.strategy == GenerateOptions::Strategy::top_k && opt.k > 1) {
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(opt.k), scored.size());
      std::vector<double> w(k);
      for (std::size_t i = 0; i < k; ++i) w[i] = std::exp(scored[i].first - scored[0].first);
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      next = scored[pick(rng)].second;
    }
    if (next == Vocabulary::eos) break;
    out.push_back(next);
    semantic.push_back(next);
    segments.push_back(static_cast<int>(Segment::target));
  }
  return out;
}

}  // namespace tokenchain::t2s
