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

#include "tokenchain/asr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tokenchain/error.hpp"

namespace tokenchain::asr {

using corpus::Vocabulary;

void AsrConfig::validate() const {
  if (text_size < 8 || semantic_size < 16) throw ConfigError("ASR vocabulary sizes too small");
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw ConfigError("ASR width must be a positive multiple of the head count");
  if (enc_layers == 0 || dec_layers == 0 || ffn == 0 || max_len == 0)
    throw ConfigError("ASR layer counts must be positive");
}

void AsrLossCfg::validate() const {
  if (eta < 0.0 || eta > 1.0) throw ParameterError("eta must lie in [0, 1]");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ParameterError("label smoothing must lie in [0, 1)");
}

AsrModel::AsrModel(AsrConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed({cfg_.seed, 0xa5a}));
  const auto C = static_cast<std::size_t>(cfg_.text_size);
  const auto V = static_cast<std::size_t>(cfg_.semantic_size);
  const std::size_t d = cfg_.d_model;
  const nn::BlockShape shape{d, cfg_.heads, cfg_.ffn};
  sem_emb_ = params_.add("enc.sem_emb", {V, d}, nn::Init::normal_small, rng);
  enc_pos_ = params_.add("enc.pos", {cfg_.max_len, d}, nn::Init::normal_small, rng);
  for (std::size_t i = 0; i < cfg_.enc_layers; ++i)
    encoder_.push_back(nn::make_block(params_, "enc.block" + std::to_string(i), shape,
                                      false, false, rng));
  enc_ln_ = nn::make_layer_norm(params_, "enc.ln", d, rng);
  ctc_ = nn::make_linear(params_, "ctc", d, C + 1, rng, true);

  text_emb_ = params_.add("dec.text_emb", {C, d}, nn::Init::normal_small, rng);
  dec_pos_ = params_.add("dec.pos", {cfg_.max_len, d}, nn::Init::normal_small, rng);
  for (std::size_t i = 0; i < cfg_.dec_layers; ++i)
    decoder_.push_back(nn::make_block(params_, "dec.block" + std::to_string(i), shape,
                                      true, true, rng));
  dec_ln_ = nn::make_layer_norm(params_, "dec.ln", d, rng);
  out_ = nn::make_linear(params_, "dec.out", d, C, rng, true);
}

AsrModel AsrModel::clone() const {
  AsrModel copy(cfg_);
  auto& dst = copy.params_.tensors();
  const auto& src = params_.tensors();
  for (std::size_t i = 0; i < src.size(); ++i)
    std::copy(src[i].data().begin(), src[i].data().end(), dst[i].mutable_data().begin());
  return copy;
}

Tensor AsrModel::encode(std::span<const int> s) const {
  if (s.empty()) throw InputError("ASR input is empty");
  Tensor x = ad::add(ad::embedding_lookup(sem_emb_, s), nn::positions(enc_pos_, s.size()));
  for (const auto& block : encoder_) x = block(x);
  return enc_ln_(x);
}

Tensor AsrModel::decode(const Tensor& enc_states, std::span<const int> y_in) const {
  if (y_in.empty()) throw InputError("ASR decoder input is empty");
  Tensor x = ad::add(ad::embedding_lookup(text_emb_, y_in), nn::positions(dec_pos_, y_in.size()));
  for (const auto& block : decoder_) x = block(x, &enc_states);
  return out_(dec_ln_(x));
}

std::vector<int> teacher_input(std::span<const int> y) {
  std::vector<int> in;
  in.reserve(y.size() + 1);
  in.push_back(Vocabulary::bos);
  in.insert(in.end(), y.begin(), y.end());
  return in;
}

std::vector<int> teacher_targets(std::span<const int> y) {
  std::vector<int> out(y.begin(), y.end());
  out.push_back(Vocabulary::eos);
  return out;
}

AsrOutputs asr_forward(const AsrModel& model, std::span<const int> s, std::span<const int> y_in) {
  if (y_in.empty() || y_in.front() != Vocabulary::bos)
    throw InputError("decoder input must start with bos");
  AsrOutputs out;
  out.enc_states = model.encode(s);
  out.ctc_logits = model.ctc_head(out.enc_states);
  out.dec_logits = model.decode(out.enc_states, y_in);
  return out;
}

Tensor loss_ce(const Tensor& dec_logits, std::span<const int> targets, double tau,
               double label_smoothing) {
  if (dec_logits.rank() != 2 || dec_logits.dim(0) != targets.size())
    throw DimensionError("loss_ce: one logit row per target required");
  const double L = static_cast<double>(targets.size());
  Tensor lp = ad::log_softmax_temp(dec_logits, tau);
  Tensor nll = ad::scale(ad::sum(ad::gather(lp, targets)), -1.0 / L);
  if (label_smoothing == 0.0) return nll;
  const double C = static_cast<double>(dec_logits.dim(1));
  Tensor uniform = ad::scale(ad::sum(lp), -1.0 / (L * C));
  return ad::add(ad::scale(nll, 1.0 - label_smoothing), ad::scale(uniform, label_smoothing));
}

Tensor loss_ctc(const Tensor& ctc_logits, std::span<const int> y, int blank) {
  return ad::ctc_loss(ctc_logits, y, blank);
}

Tensor loss_asr(const Tensor& ce, const Tensor& ctc, double eta) {
  if (eta < 0.0 || eta > 1.0) throw ParameterError("eta must lie in [0, 1]");
  if (eta == 0.0) return ce;
  if (eta == 1.0) return ctc;
  return ad::add(ad::scale(ce, 1.0 - eta), ad::scale(ctc, eta));
}

double loss_asr(double ce, double ctc, double eta) {
  if (eta < 0.0 || eta > 1.0) throw ParameterError("eta must lie in [0, 1]");
  return (1.0 - eta) * ce + eta * ctc;
}

AsrLosses asr_losses(const AsrModel& model, const corpus::Utterance& u, const AsrLossCfg& cfg) {
  cfg.validate();
  AsrLosses l;
  const auto y_in = teacher_input(u.y);
  l.outputs = asr_forward(model, u.s, y_in);
  l.ce = loss_ce(l.outputs.dec_logits, teacher_targets(u.y), cfg.tau, cfg.label_smoothing);
  l.ctc = loss_ctc(l.outputs.ctc_logits, u.y, model.blank());
  l.total = loss_asr(l.ce, l.ctc, cfg.eta);
  return l;
}

namespace {

std::vector<double> last_row_logprobs(const AsrModel& model, const Tensor& enc,
                                      std::span<const int> prefix) {
  Tensor logits = model.decode(enc, prefix);
  const std::size_t C = logits.dim(1);
  const std::size_t r = logits.dim(0) - 1;
  Tensor row = ad::slice_rows(logits, r, r + 1);
  Tensor lp = ad::log_softmax_temp(row, 1.0);
  return {lp.data().begin(), lp.data().begin() + static_cast<long>(C)};
}

std::size_t length_cap(std::span<const int> s, const AsrConfig& cfg) {
  return std::min<std::size_t>(3 * s.size(), cfg.max_len - 1);
}

}  // namespace

std::vector<int> decode_greedy(const AsrModel& model, std::span<const int> s) {
  ad::NoGradGuard guard;
  Tensor enc = model.encode(s);
  std::vector<int> prefix{Vocabulary::bos};
  const std::size_t cap = length_cap(s, model.config());
  for (std::size_t step = 0; step < cap; ++step) {
    const auto lp = last_row_logprobs(model, enc, prefix);
    const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (best == Vocabulary::eos) break;
    prefix.push_back(best);
  }
  return {prefix.begin() + 1, prefix.end()};
}

BeamResult decode_beam(const AsrModel& model, std::span<const int> s, int beam) {
  if (beam < 1) throw ParameterError("beam width must be at least 1");
  ad::NoGradGuard guard;
  Tensor enc = model.encode(s);
  struct Hyp {
    std::vector<int> tokens;  // without bos
    double logp = 0.0;
  };
  const std::size_t cap = length_cap(s, model.config());
  std::vector<Hyp> alive{Hyp{}};
  std::vector<BeamResult> finished;
  auto finish = [&](const Hyp& h, double eos_lp) {
    BeamResult r;
    r.tokens = h.tokens;
    r.score = (h.logp + eos_lp) / static_cast<double>(h.tokens.size() + 1);
    finished.push_back(std::move(r));
  };

  for (std::size_t step = 0; step < cap && !alive.empty(); ++step) {
    struct Cand {
      std::size_t hyp;
      int token;
      double logp;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      std::vector<int> prefix{Vocabulary::bos};
      prefix.insert(prefix.end(), alive[h].tokens.begin(), alive[h].tokens.end());
      const auto lp = last_row_logprobs(model, enc, prefix);
      for (std::size_t c = 0; c < lp.size(); ++c)
        cands.push_back({h, static_cast<int>(c), alive[h].logp + lp[c]});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
    std::vector<Hyp> next;
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(beam), cands.size());
    for (std::size_t i = 0; i < keep; ++i) {
      const Cand& c = cands[i];
      if (c.token == Vocabulary::eos) {
        finish(alive[c.hyp], c.logp - alive[c.hyp].logp);
      } else {
        Hyp h = alive[c.hyp];
        h.tokens.push_back(c.token);
        h.logp = c.logp;
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
    if (finished.size() >= static_cast<std::size_t>(beam)) {
      alive.clear();
      break;
    }
  }
  // Hypotheses still open at the cap are closed with a forced eos.
  for (const Hyp& h : alive) {
    std::vector<int> prefix{Vocabulary::bos};
    prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
    finish(h, last_row_logprobs(model, enc, prefix)[Vocabulary::eos]);
  }
  const auto best = std::max_element(
      finished.begin(), finished.end(),
      [](const BeamResult& a, const BeamResult& b) { return a.score < b.score; });
  return *best;
}

double normalized_logprob(const AsrModel& model, std::span<const int> s,
                          std::span<const int> hyp) {
  ad::NoGradGuard guard;
  Tensor enc = model.encode(s);
  Tensor lp = ad::log_softmax_temp(model.decode(enc, teacher_input(hyp)), 1.0);
  const auto targets = teacher_targets(hyp);
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    total += lp.at(i, static_cast<std::size_t>(targets[i]));
  return total / static_cast<double>(targets.size());
}

}  // namespace tokenchain::asr
