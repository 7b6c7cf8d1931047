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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "tokenchain/corpus.hpp"
#include "tokenchain/error.hpp"

namespace tokenchain::t2s {
namespace {

T2sConfig micro_config() {
  T2sConfig c;
  c.text_size = 10;
  c.semantic_size = 16;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn = 12;
  c.max_len = 40;
  c.seed = 3;
  return c;
}

Tensor one_hot_rows(const std::vector<int>& ids, std::size_t C) {
  std::vector<double> v(ids.size() * C, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) v[i * C + static_cast<std::size_t>(ids[i])] = 1.0;
  return Tensor::from_data({ids.size(), C}, std::move(v));
}

TEST(PrefixBatch, LayoutAndMask) {
  const std::vector<int> text{3, 4};
  const std::vector<int> s{5, 6, 7};
  const PrefixBatch b = make_prefix_batch(text, s, 1);
  EXPECT_EQ(b.rows(), 6u);
  EXPECT_EQ(b.prompt, (std::vector<int>{5}));
  EXPECT_EQ(b.target, (std::vector<int>{6, 7, corpus::Vocabulary::eos}));
  EXPECT_EQ(b.semantic_inputs(), (std::vector<int>{corpus::Vocabulary::bos, 5, 6, 7}));
  EXPECT_EQ(b.mask, (std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(b.labels, (std::vector<int>{0, 0, 5, 6, 7, corpus::Vocabulary::eos}));
  EXPECT_EQ(b.segments(), (std::vector<int>{0, 0, 1, 1, 2, 2}));
  const int masked = std::count(b.mask.begin(), b.mask.end(), 1);
  EXPECT_EQ(static_cast<std::size_t>(masked), b.target.size());
  EXPECT_THROW(make_prefix_batch(text, s, 4), InputError);
}

TEST(T2sForward, ShapeAndErrors) {
  T2sModel model(micro_config());
  const std::vector<int> text{3, 4};
  const std::vector<int> s{5, 6, 7};
  PrefixBatch b = make_prefix_batch(text, s, 1);
  Tensor logits = t2s_forward(model, b);
  EXPECT_EQ(logits.shape(), (ad::Shape{6, 16}));
  b.mask.assign(b.mask.size(), 0);
  EXPECT_THROW(t2s_forward(model, b), InputError);
  EXPECT_THROW(loss_t2s(logits, b), InputError);
}

TEST(T2sForward, OneHotRowsEqualIds) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 1);
  const std::vector<int> text{3, 9, 4, 5};
  const std::vector<int> s{5, 6, 7, 8, 9};
  Tensor a = t2s_forward(model, make_prefix_batch(text, s, 2));
  Tensor b = t2s_forward(model, make_prefix_batch(one_hot_rows(text, 10), s, 2));
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(T2sForward, IsCausal) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 2);
  const std::vector<int> text{3, 9, 4};
  std::vector<int> s{5, 6, 7, 8, 9, 10};
  Tensor a = t2s_forward(model, make_prefix_batch(text, s, 1));
  s[4] = 12;  // input row 3 + 1 + 4 = 8
  Tensor b = t2s_forward(model, make_prefix_batch(text, s, 1));
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < a.dim(1); ++c) EXPECT_DOUBLE_EQ(a.at(r, c), b.at(r, c)) << r;
  double diff = 0.0;
  for (std::size_t c = 0; c < a.dim(1); ++c) diff += std::abs(a.at(8, c) - b.at(8, c));
  EXPECT_GT(diff, 1e-8);
}

TEST(T2sLoss, MatchesPerPositionOracle) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<int> text{3, 4, 5};
    std::vector<int> s;
    for (int i = 0; i < 6; ++i) s.push_back(3 + static_cast<int>(rng() % 13));
    const PrefixBatch b = make_prefix_batch(text, s, static_cast<std::size_t>(trial % 5));
    std::vector<double> v(b.rows() * 16);
    for (double& x : v) x = n(rng);
    Tensor logits = Tensor::from_data({b.rows(), 16}, v);
    double total = 0.0;
    double count = 0.0;
    for (std::size_t r = 0; r < b.rows(); ++r) {
      if (!b.mask[r]) continue;
      double z = 0.0;
      for (std::size_t c = 0; c < 16; ++c) z += std::exp(v[r * 16 + c]);
      total += std::log(z) - v[r * 16 + static_cast<std::size_t>(b.labels[r])];
      count += 1.0;
    }
    EXPECT_NEAR(loss_t2s(logits, b).item(), total / count, 1e-10);
  }
}

TEST(T2sLoss, SingleRowMaskAndPerfectLogits) {
  const std::vector<int> text{3};
  const std::vector<int> s{5, 6};
  PrefixBatch b = make_prefix_batch(text, s, 0);
  std::vector<double> v(b.rows() * 16, 0.0);
  for (std::size_t r = 0; r < b.rows(); ++r) v[r * 16 + static_cast<std::size_t>(b.labels[r])] = 1000.0;
  EXPECT_EQ(loss_t2s(Tensor::from_data({b.rows(), 16}, v), b).item(), 0.0);

  std::vector<double> w(b.rows() * 16);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.37 * static_cast<double>(i));
  Tensor logits = Tensor::from_data({b.rows(), 16}, w);
  b.mask.assign(b.rows(), 0);
  b.mask[2] = 1;
  double z = 0.0;
  for (std::size_t c = 0; c < 16; ++c) z += std::exp(w[2 * 16 + c]);
  EXPECT_NEAR(loss_t2s(logits, b).item(),
              std::log(z) - w[2 * 16 + static_cast<std::size_t>(b.labels[2])], 1e-12);
}

TEST(T2sLoss, InvariantToLabelsOutsideMask) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 5);
  const std::vector<int> text{3, 4};
  const std::vector<int> s{5, 6, 7, 8};
  PrefixBatch b = make_prefix_batch(text, s, 2);
  Tensor logits = t2s_forward(model, b);
  const double base = loss_t2s(logits, b).item();
  for (std::size_t r = 0; r < b.rows(); ++r)
    if (!b.mask[r]) b.labels[r] = static_cast<int>(3 + (r * 5) % 13);
  EXPECT_EQ(loss_t2s(logits, b).item(), base);
}

TEST(T2sGradient, SoftTextRowsMatchFiniteDifferences) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 6);
  std::mt19937_64 rng(6);
  std::vector<double> v(3 * 10);
  for (double& x : v) x = uniform01(rng);
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 10; ++c) z += v[r * 10 + c];
    for (std::size_t c = 0; c < 10; ++c) v[r * 10 + c] /= z;
  }
  Tensor soft = Tensor::from_data({3, 10}, v, true);
  const std::vector<int> s{5, 6, 7, 8};
  auto f = [&](const Tensor& p) { return loss_t2s(t2s_forward(model, make_prefix_batch(p, s, 1)), make_prefix_batch(p, s, 1)); };
  EXPECT_LT(ad::grad_check(f, soft, 1e-5), 1e-3);
}

TEST(T2sGradient, ParametersMatchFiniteDifferences) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 7);
  const std::vector<int> text{3, 4, 5};
  const std::vector<int> s{5, 6, 7, 8};
  auto f = [&] {
    const PrefixBatch b = make_prefix_batch(text, s, 1);
    return loss_t2s(t2s_forward(model, b), b);
  };
  EXPECT_LT(ad::grad_check_params(f, model.params().tensors(), 1e-5, 6), 1e-4);
}

TEST(SamplePrompt, Examples) {
  Rng rng(1);
  const std::vector<int> s{3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  EXPECT_TRUE(sample_prompt(s, 0.0, 0.0, rng).empty());
  EXPECT_EQ(sample_prompt(s, 0.5, 0.5, rng), (std::vector<int>{3, 4, 5, 6, 7}));
  EXPECT_EQ(sample_prompt(std::vector<int>{3}, 0.9, 0.9, rng).size(), 0u);
  EXPECT_THROW(sample_prompt(s, 0.4, 0.2, rng), ParameterError);
  EXPECT_THROW(sample_prompt(s, 0.1, 1.0, rng), ParameterError);
}

// Exact law of min(round(u*T), T-1) for u ~ U[lo, hi].
std::vector<double> prompt_length_pmf(std::size_t T, double lo, double hi) {
  std::vector<double> p(T, 0.0);
  for (std::size_t n = 0; n <= T; ++n) {
    const double a = std::max(lo, (static_cast<double>(n) - 0.5) / static_cast<double>(T));
    const double b = std::min(hi, (static_cast<double>(n) + 0.5) / static_cast<double>(T));
    if (b > a) p[std::min(n, T - 1)] += (b - a) / (hi - lo);
  }
  return p;
}

TEST(SamplePrompt, LengthsFollowInducedDistribution) {
  Rng rng(2);
  for (const auto& [T, lo, hi] : {std::tuple<std::size_t, double, double>{10, 0.1, 0.3},
                                  {17, 0.1, 0.3}, {6, 0.0, 0.9}}) {
    const auto pmf = prompt_length_pmf(T, lo, hi);
    std::vector<double> observed(T, 0.0);
    std::vector<double> expected(T);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) observed[sample_prompt_length(T, lo, hi, rng)] += 1.0;
    for (std::size_t n = 0; n < T; ++n) expected[n] = pmf[n] * draws;
    EXPECT_GT(testing::chi_square_p(observed, expected), 0.01) << "T=" << T;
  }
}

TEST(Generate, GreedyDeterministicAndTopOneMatches) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 8, 0.8);
  const std::vector<int> text{3, 4, 5};
  const std::vector<int> prompt{6};
  GenerateOptions greedy;
  greedy.max_len = 12;
  Rng r1(1), r2(2);
  const auto a = generate(model, text, prompt, greedy, r1);
  EXPECT_EQ(a, generate(model, text, prompt, greedy, r2));
  GenerateOptions top1 = greedy;
  top1.strategy = GenerateOptions::Strategy::top_k;
  top1.k = 1;
  EXPECT_EQ(a, generate(model, text, prompt, top1, r1));
  EXPECT_LE(a.size(), 12u);
  for (int id : a) {
    EXPECT_NE(id, corpus::Vocabulary::pad);
    EXPECT_NE(id, corpus::Vocabulary::bos);
    EXPECT_NE(id, corpus::Vocabulary::eos);
  }
  GenerateOptions bad = greedy;
  bad.max_len = 0;
  EXPECT_THROW(generate(model, text, prompt, bad, r1), ParameterError);
}

TEST(Generate, TopKSamplesStayInTopK) {
  T2sModel model(micro_config());
  testing::perturb(model.params(), 9, 0.8);
  GenerateOptions opt;
  opt.strategy = GenerateOptions::Strategy::top_k;
  opt.k = 3;
  opt.max_len = 1;
  const std::vector<int> text{3, 4};
  Tensor logits;
  {
    ad::NoGradGuard g;
    logits = model.forward(model.embed_text(text), std::vector<int>{corpus::Vocabulary::bos},
                           std::vector<int>{0, 0, 1});
  }
  std::vector<std::pair<double, int>> scored;
  for (int c = 2; c < 16; ++c) scored.emplace_back(logits.at(2, static_cast<std::size_t>(c)), c);
  std::sort(scored.begin(), scored.end(), std::greater<>());
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto out = generate(model, text, {}, opt, rng);
    if (out.empty()) continue;
    const bool in_top = out[0] == scored[0].second || out[0] == scored[1].second ||
                        out[0] == scored[2].second;
    EXPECT_TRUE(in_top);
  }
}

}  // namespace
}  // namespace tokenchain::t2s
