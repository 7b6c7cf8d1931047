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

// Text -> semantic causal LM over the concatenated sequence
//   [text rows | SBOS | prompt | targets]
// where row i predicts token i+1 and only rows that predict a target (or
// the final eos) are labelled. Text rows may be ids or probability rows;
// probability rows are embedded as a mixture of the text embeddings.

#include <cstdint>
#include <span>
#include <vector>

#include "tokenchain/autodiff.hpp"
#include "tokenchain/nn.hpp"
#include "tokenchain/random.hpp"

namespace tokenchain::t2s {

using ad::Tensor;

struct T2sConfig {
  int text_size = 32;
  int semantic_size = 64;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t layers = 3;
  std::size_t ffn = 128;
  std::size_t max_len = 256;
  std::uint64_t seed = 2;

  void validate() const;
  bool operator==(const T2sConfig&) const = default;
};

enum class Segment : int { text = 0, prompt = 1, target = 2 };

struct PrefixBatch {
  std::vector<int> text;         // text ids; ignored when soft_text is defined
  Tensor soft_text;              // [L x C] probability (or one-hot) rows
  std::vector<int> prompt;       // s_p, a prefix of the reference s
  std::vector<int> target;       // remaining reference tokens followed by eos
  std::vector<int> labels;       // next-token label per row (pad where unlabelled)
  std::vector<std::uint8_t> mask;

  std::size_t text_rows() const;
  std::size_t rows() const { return labels.size(); }
  // Semantic ids fed after the text rows: SBOS, prompt, target without eos.
  std::vector<int> semantic_inputs() const;
  std::vector<int> segments() const;
  void validate(int text_size, int semantic_size) const;
};

PrefixBatch make_prefix_batch(std::span<const int> text, std::span<const int> s,
                              std::size_t prompt_len);
PrefixBatch make_prefix_batch(const Tensor& soft_text, std::span<const int> s,
                              std::size_t prompt_len);

class T2sModel {
 public:
  explicit T2sModel(T2sConfig cfg);
  T2sModel(T2sModel&&) noexcept = default;
  T2sModel& operator=(T2sModel&&) noexcept = default;
  T2sModel(const T2sModel&) = delete;
  T2sModel& operator=(const T2sModel&) = delete;

  T2sModel clone() const;

  const T2sConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Causal logits [rows x V] for text embedding rows followed by semantic ids.
  Tensor forward(const Tensor& text_embedded, std::span<const int> semantic,
                 std::span<const int> segments) const;
  Tensor embed_text(std::span<const int> ids) const;
  Tensor embed_soft_text(const Tensor& rows) const;

 private:
  T2sConfig cfg_;
  nn::ParamSet params_;
  Tensor text_emb_, sem_emb_, seg_emb_, pos_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm ln_;
  nn::Linear out_;
};

Tensor t2s_forward(const T2sModel& model, const PrefixBatch& batch);

// Masked mean next-token CE over labelled rows.
Tensor loss_t2s(const Tensor& logits, const PrefixBatch& batch);

// Prefix of round(u*T) tokens, u ~ U[lo, hi], at most T-1 tokens.
std::vector<int> sample_prompt(std::span<const int> s, double lo, double hi, Rng& rng);
std::size_t sample_prompt_length(std::size_t T, double lo, double hi, Rng& rng);

struct GenerateOptions {
  enum class Strategy { greedy, top_k } strategy = Strategy::greedy;
  int k = 1;
  std::size_t max_len = 64;
};

// Continuation after the prompt, without eos. pad and SBOS are never emitted.
std::vector<int> generate(const T2sModel& model, std::span<const int> text,
                          std::span<const int> prompt, const GenerateOptions& opt, Rng& rng);

}  // namespace tokenchain::t2s
