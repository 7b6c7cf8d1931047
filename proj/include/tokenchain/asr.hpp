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

// Semantic tokens -> text. Pre-norm transformer encoder over semantic ids
// with a CTC head (text classes plus blank), and a causal transformer
// decoder with cross-attention producing per-position text logits.

#include <cstdint>
#include <span>
#include <vector>

#include "tokenchain/autodiff.hpp"
#include "tokenchain/corpus.hpp"
#include "tokenchain/nn.hpp"

namespace tokenchain::asr {

using ad::Tensor;

struct AsrConfig {
  int text_size = 32;
  int semantic_size = 64;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t ffn = 128;
  std::size_t max_len = 256;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const AsrConfig&) const = default;
};

struct AsrLossCfg {
  double eta = 0.3;              // CTC interpolation weight
  double label_smoothing = 0.0;
  double tau = 1.0;              // temperature of the supervised CE posteriors

  void validate() const;
};

struct AsrOutputs {
  Tensor dec_logits;   // [L x C]
  Tensor enc_states;   // [T x d]
  Tensor ctc_logits;   // [T x (C+1)]
};

class AsrModel {
 public:
  explicit AsrModel(AsrConfig cfg);
  AsrModel(AsrModel&&) noexcept = default;
  AsrModel& operator=(AsrModel&&) noexcept = default;
  AsrModel(const AsrModel&) = delete;
  AsrModel& operator=(const AsrModel&) = delete;

  // Independent parameters with identical values.
  AsrModel clone() const;

  const AsrConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  Tensor encode(std::span<const int> s) const;
  Tensor ctc_head(const Tensor& enc_states) const { return ctc_(enc_states); }
  // Teacher-forced decoder logits for every position of y_in.
  Tensor decode(const Tensor& enc_states, std::span<const int> y_in) const;

  int blank() const { return cfg_.text_size; }

 private:
  AsrConfig cfg_;
  nn::ParamSet params_;
  Tensor sem_emb_, enc_pos_, text_emb_, dec_pos_;
  std::vector<nn::TransformerBlock> encoder_, decoder_;
  nn::LayerNorm enc_ln_, dec_ln_;
  nn::Linear ctc_, out_;
};

// [bos, y_1 .. y_L] and [y_1 .. y_L, eos]
std::vector<int> teacher_input(std::span<const int> y);
std::vector<int> teacher_targets(std::span<const int> y);

AsrOutputs asr_forward(const AsrModel& model, std::span<const int> s, std::span<const int> y_in);

// -(1/L) sum_t log softmax(h_t / tau)[y_t], optionally label-smoothed.
Tensor loss_ce(const Tensor& dec_logits, std::span<const int> targets, double tau,
               double label_smoothing = 0.0);
Tensor loss_ctc(const Tensor& ctc_logits, std::span<const int> y, int blank);
Tensor loss_asr(const Tensor& ce, const Tensor& ctc, double eta);
double loss_asr(double ce, double ctc, double eta);

struct AsrLosses {
  Tensor total;
  Tensor ce;
  Tensor ctc;
  AsrOutputs outputs;
};
AsrLosses asr_losses(const AsrModel& model, const corpus::Utterance& u, const AsrLossCfg& cfg);

// Autoregressive argmax (lowest id on ties) until eos or 3*T tokens.
std::vector<int> decode_greedy(const AsrModel& model, std::span<const int> s);

struct BeamResult {
  std::vector<int> tokens;
  double score = 0.0;  // log-probability per emitted token, eos included
};
// Length-normalised beam search; beam == 1 reproduces decode_greedy.
BeamResult decode_beam(const AsrModel& model, std::span<const int> s, int beam);

// Length-normalised log-probability of hyp followed by eos.
double normalized_logprob(const AsrModel& model, std::span<const int> s,
                          std::span<const int> hyp);

}  // namespace tokenchain::asr
