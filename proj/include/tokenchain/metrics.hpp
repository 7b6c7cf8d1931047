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

// Levenshtein error counts, word/character error rates and correct-rate deltas.

#include <span>
#include <string_view>
#include <vector>

#include "tokenchain/corpus.hpp"

namespace tokenchain::metrics {

struct ErrorReport {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long ref_len = 0;
  double rate = 0.0;  // (S + D + I) / max(1, ref_len)

  long errors() const { return substitutions + deletions + insertions; }
  // Pools counts (corpus-level rate) and recomputes the rate.
  ErrorReport& operator+=(const ErrorReport& other);
  bool operator==(const ErrorReport&) const = default;
};

// Minimal S + D + I; among optimal alignments the traceback prefers
// substitution, then deletion, then insertion.
ErrorReport edit_distance(std::span<const int> ref, std::span<const int> hyp);
ErrorReport edit_distance(std::string_view ref, std::string_view hyp);

// Character errors over the spelled words, spaces included.
ErrorReport character_errors(const corpus::Vocabulary& vocab, std::span<const int> ref,
                             std::span<const int> hyp);

// Percent change of the correct rate (1 - error rate).
double relative_change(double before, double after);

// Generated semantic tokens decoded to text by inverting the channel, scored
// against the reference text.
ErrorReport t2s_content_wer(std::span<const int> generated_s, std::span<const int> ref_text,
                            const corpus::ChannelSpec& channel);

}  // namespace tokenchain::metrics
