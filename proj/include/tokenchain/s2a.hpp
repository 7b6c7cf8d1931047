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

// Semantic -> acoustic masked generative model. Acoustic layers are numbered
// 2..Q (row j - 2 of Utterance::a). Predicting layer j, position t embeds
// the semantic token, the ground truth of layers 2..j-1 and the (possibly
// masked) layer-j token; layers above j are never visible. The first
// prompt_len positions are a given prompt and are never masked.

#include <cstdint>
#include <span>
#include <vector>

#include "tokenchain/autodiff.hpp"
#include "tokenchain/corpus.hpp"
#include "tokenchain/nn.hpp"
#include "tokenchain/random.hpp"

namespace tokenchain::s2a {

using ad::Tensor;
using Stack = std::vector<std::vector<int>>;  // (Q-1) rows of length T

struct S2aConfig {
  int semantic_size = 64;
  int acoustic_size = 32;
  int num_layers = 4;  // Q, counting the semantic layer
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t ffn = 128;
  std::size_t max_len = 256;
  std::uint64_t seed = 3;

  void validate() const;
  int mask_id() const { return acoustic_size; }
  bool operator==(const S2aConfig&) const = default;
};

struct MaskPlan {
  int layer = 2;                      // target layer j in 2..Q
  std::vector<std::uint8_t> mask;     // length T, 1 = masked
  std::size_t prompt_len = 0;
  double fraction = 0.0;              // sampled cos^2 fraction

  std::size_t masked_count() const;
};

// Categorical over j in 2..Q mixing weights (Q - j + 1) (progress 0) with a
// uniform law (progress 1).
std::vector<double> layer_weights(int Q, double progress);
MaskPlan sample_mask_plan(std::size_t T, int Q, std::size_t prompt_len, double progress, Rng& rng);

class S2aModel {
 public:
  explicit S2aModel(S2aConfig cfg);
  S2aModel(S2aModel&&) noexcept = default;
  S2aModel& operator=(S2aModel&&) noexcept = default;
  S2aModel(const S2aModel&) = delete;
  S2aModel& operator=(const S2aModel&) = delete;

  const S2aConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Semantic conditioning rows [T x d].
  Tensor conditioning(std::span<const int> s) const;
  Tensor null_conditioning(std::size_t T) const;
  // Layer-j logits [T x V_a]. `lower` holds at least rows 2..j-1; `canvas`
  // is the layer-j row with mask ids at masked positions.
  Tensor logits(const Tensor& cond, const Stack& lower, std::span<const int> canvas, int j) const;

 private:
  S2aConfig cfg_;
  nn::ParamSet params_;
  Tensor sem_emb_, null_emb_, layer_emb_, pos_;
  std::vector<Tensor> ac_emb_;  // per layer, V_a + 1 rows (last = mask)
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_;
  std::vector<nn::Linear> heads_;
};

// Replaces the conditioning by the null rows with probability p_drop.
Tensor cfg_dropout(const Tensor& conditioning, const Tensor& null_rows, double p_drop, Rng& rng,
                   bool* dropped = nullptr);

// Layer-j logits for an utterance under a plan; masked positions read the mask id.
Tensor s2a_forward(const S2aModel& model, const corpus::Utterance& u, const MaskPlan& plan,
                   bool drop_conditioning = false);
// Mean CE over the masked positions of layer j.
Tensor s2a_loss(const S2aModel& model, const corpus::Utterance& u, const MaskPlan& plan,
                bool drop_conditioning = false);
Tensor masked_ce(const Tensor& logits, std::span<const int> target, const MaskPlan& plan);

struct DecodeOptions {
  int steps_per_layer = 4;
  double guidance = 1.0;     // 1 disables classifier-free guidance
  double temperature = 1.0;  // 0 picks the argmax
};

// Generates layers 2..Q with confidence-ranked cosine unmasking.
// a_prompt holds (Q-1) rows of the prompt length.
Stack decode_iterative(const S2aModel& model, std::span<const int> s, const Stack& a_prompt,
                       const DecodeOptions& opt, Rng& rng);

struct MaskedAccuracy {
  double model = 0.0;
  double majority = 0.0;
  std::size_t count = 0;
};
// Argmax accuracy at masked positions of sampled plans (uniform layer law),
// alongside the per-layer majority class estimated from `reference`.
MaskedAccuracy masked_accuracy(const S2aModel& model, std::span<const corpus::Utterance> eval,
                               std::span<const corpus::Utterance> reference, double prompt_lo,
                               double prompt_hi, Rng& rng);

}  // namespace tokenchain::s2a
