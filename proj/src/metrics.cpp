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

#include "tokenchain/metrics.hpp"

#include <algorithm>
#include <string>

#include "tokenchain/error.hpp"

namespace tokenchain::metrics {

namespace {

double rate_of(long errors, long ref_len) {
  return static_cast<double>(errors) / static_cast<double>(std::max(1L, ref_len));
}

template <typename Seq>
ErrorReport levenshtein(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<long> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> long& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<long>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<long>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1),
                           at(i - 1, j) + 1, at(i, j - 1) + 1});
  ErrorReport r;
  r.ref_len = static_cast<long>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i, j) == at(i - 1, j - 1)) {
      --i, --j;
    } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
      ++r.substitutions, --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++r.deletions, --i;
    } else {
      ++r.insertions, --j;
    }
  }
  r.rate = rate_of(r.errors(), r.ref_len);
  return r;
}

}  // namespace

ErrorReport& ErrorReport::operator+=(const ErrorReport& other) {
  substitutions += other.substitutions;
  deletions += other.deletions;
  insertions += other.insertions;
  ref_len += other.ref_len;
  rate = rate_of(errors(), ref_len);
  return *this;
}

ErrorReport edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  return levenshtein(ref, hyp);
}

ErrorReport edit_distance(std::string_view ref, std::string_view hyp) {
  return levenshtein(ref, hyp);
}

ErrorReport character_errors(const corpus::Vocabulary& vocab, std::span<const int> ref,
                             std::span<const int> hyp) {
  return edit_distance(vocab.spell(ref), vocab.spell(hyp));
}

double relative_change(double before, double after) {
  if (before < 0.0 || before > 1.0 || after < 0.0 || after > 1.0)
    throw ParameterError("error rates must lie in [0, 1]");
  if (before == 1.0) throw ParameterError("relative change undefined for a zero correct rate");
  return 100.0 * ((1.0 - after) - (1.0 - before)) / (1.0 - before);
}

ErrorReport t2s_content_wer(std::span<const int> generated_s, std::span<const int> ref_text,
                            const corpus::ChannelSpec& channel) {
  const auto decoded = channel.decode(generated_s);
  return edit_distance(ref_text, decoded);
}

}  // namespace tokenchain::metrics
