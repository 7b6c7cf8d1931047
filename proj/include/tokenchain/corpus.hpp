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

// Synthetic paired corpus: text token sequences drawn from a bigram
// language, expanded into semantic tokens by a noisy decodable channel, with
// acoustic token layers derived from a keyed hash of (semantic id, layer,
// speaker). A shifted domain remaps part of the semantic alphabet onto ids
// the source domain never emits and raises the noise.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tokenchain/random.hpp"

namespace tokenchain::corpus {

// Text and semantic alphabets share the special-id layout below. The CTC
// blank is the extra class `text_size` of the CTC head and the acoustic mask
// is the extra embedding row `acoustic_size`.
struct Vocabulary {
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int first_regular = 3;

  int text_size = 32;
  int semantic_size = 64;
  int acoustic_size = 32;
  int num_acoustic_layers = 3;  // Q - 1

  int ctc_blank() const { return text_size; }
  int acoustic_mask() const { return acoustic_size; }
  int regular_text_count() const { return text_size - first_regular; }

  // Throws ConfigError when an invariant is violated.
  void validate() const;
  // Spelling of a text id; specials render as <pad>/<bos>/<eos>.
  std::string word(int text_id) const;
  std::string spell(std::span<const int> text) const;

  bool operator==(const Vocabulary&) const = default;
};

struct Template {
  std::vector<int> tokens;
  double prob = 1.0;
  bool operator==(const Template&) const = default;
};

struct ChannelSpec {
  // Indexed by text id; specials have no templates.
  std::vector<std::vector<Template>> expansions;
  double noise = 0.0;   // per-token substitution probability
  double jitter = 0.0;  // per-token probability of an extra repeat
  // Semantic id remapping applied after noise; identity for the source domain.
  std::vector<int> domain_map;
  int speaker_count = 4;
  double acoustic_noise = 0.0;
  std::uint64_t acoustic_key = 0;

  void validate(const Vocabulary& vocab) const;

  // Per-token maximum-likelihood inversion: undo the domain map, collapse
  // adjacent repeats, emit the text owner of each template head.
  std::vector<int> decode(std::span<const int> semantic) const;

  // Text id whose templates start with this (unmapped) semantic id, or -1.
  int head_owner(int semantic_id) const;

  bool operator==(const ChannelSpec&) const = default;
};

// Bigram text language without self-transitions.
struct TextModel {
  std::vector<double> initial;                 // over text ids
  std::vector<std::vector<double>> transition; // [prev][next]
  bool operator==(const TextModel&) const = default;
};

enum class Domain { source, shifted };
std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct Utterance {
  std::vector<int> y;               // text ids, length L
  std::vector<int> s;               // semantic ids, length T
  std::vector<std::vector<int>> a;  // (Q-1) rows of length T
  Domain domain = Domain::source;
  int speaker = 0;

  bool operator==(const Utterance&) const = default;
};

struct ChannelParams {
  double noise = 0.03;
  double jitter = 0.1;
  int speaker_count = 4;
  double acoustic_noise = 0.02;
  int max_templates = 3;
  int max_template_len = 3;
};

struct ShiftParams {
  double noise = 0.06;
  double jitter = 0.2;
  int swapped_ids = 16;  // capped at the reserved pool size
};

// Source-domain channel: each regular text id owns one head semantic id;
// templates are the head followed by up to two shared tail ids. The upper
// part of the semantic alphabet is left unused (reserved for domain shift).
ChannelSpec make_source_channel(const Vocabulary& vocab, const ChannelParams& params,
                                std::uint64_t seed);
ChannelSpec make_shifted_channel(const ChannelSpec& source, const Vocabulary& vocab,
                                 const ShiftParams& params, std::uint64_t seed);
TextModel make_text_model(const Vocabulary& vocab, std::uint64_t seed);

std::vector<int> sample_text(const TextModel& lm, int min_len, int max_len, Rng& rng);

// Intermediate quantities kept for statistics and tests.
struct SynthesisTrace {
  std::vector<int> clean;                 // after expansion and jitter, before noise
  std::vector<std::uint8_t> substituted;  // per position
};

Utterance synthesize_utterance(const ChannelSpec& spec, const Vocabulary& vocab,
                               std::span<const int> text, int speaker, std::uint64_t seed,
                               Domain domain = Domain::source,
                               SynthesisTrace* trace = nullptr);

// Deterministic acoustic id for layer row `layer` (0 = RVQ-2).
int acoustic_code(const ChannelSpec& spec, const Vocabulary& vocab, int semantic_id,
                  int layer, int speaker);

using Split = std::vector<Utterance>;

struct SplitSizes {
  int pretrain = 500;
  int chain_train = 5000;
  int chain_dev = 200;
  int chain_test = 200;
  int shifted_train = 5000;
  int shifted_dev = 200;
  int shifted_test = 200;
};

struct CorpusConfig {
  Vocabulary vocab;
  ChannelParams channel;
  ShiftParams shift;
  SplitSizes sizes;
  int min_len = 4;
  int max_len = 16;
  std::uint64_t seed = 1;
  // Utterance i of split k is drawn from seeds in
  // [seed_bases[k], seed_bases[k] + seed_block).
  std::vector<std::uint64_t> seed_bases = {1'000'000, 2'000'000, 3'000'000, 4'000'000,
                                           5'000'000, 6'000'000, 7'000'000};
  std::uint64_t seed_block = 1'000'000;
  bool with_shifted = true;

  void validate() const;
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {
      "pretrain",      "chain_train", "chain_dev",   "chain_test",
      "shifted_train", "shifted_dev", "shifted_test"};
  return names;
}

struct Corpora {
  Vocabulary vocab;
  ChannelSpec source_channel;
  ChannelSpec shifted_channel;
  TextModel text_model;
  Split pretrain, chain_train, chain_dev, chain_test;
  Split shifted_train, shifted_dev, shifted_test;

  const Split& split(const std::string& name) const;
  Split& split(const std::string& name);
  const ChannelSpec& channel_for(Domain d) const {
    return d == Domain::source ? source_channel : shifted_channel;
  }
};

Corpora build_corpora(const CorpusConfig& config);

// One utterance per line:
// domain TAB speaker TAB y:csv TAB s:csv TAB a:rows-of-csv-joined-by-';'
std::string format_utterance(const Utterance& u);
Utterance parse_utterance(const std::string& line, std::size_t line_number);
void save_split(const std::filesystem::path& path, const Split& split);
Split load_split(const std::filesystem::path& path);

// Directory layout: world.json (vocabulary, channels, text model) plus one
// <split>.tsv per non-empty split.
void save_corpora(const std::filesystem::path& dir, const Corpora& c);
Corpora load_corpora(const std::filesystem::path& dir);

// Total variation distance between semantic unigram distributions.
double semantic_unigram_tv(const Split& a, const Split& b, int semantic_size);

}  // namespace tokenchain::corpus
