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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "test_util.hpp"
#include "tokenchain/error.hpp"

namespace tokenchain::asr {
namespace {

AsrConfig micro_config() {
  AsrConfig c;
  c.text_size = 10;
  c.semantic_size = 16;
  c.d_model = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ffn = 12;
  c.max_len = 32;
  c.seed = 5;
  return c;
}

// Sum over every frame labelling whose collapse equals y.
double brute_force_ctc(const std::vector<std::vector<double>>& logits, const std::vector<int>& y,
                       int blank) {
  const std::size_t T = logits.size();
  const std::size_t K = logits[0].size();
  std::vector<std::vector<double>> prob(T, std::vector<double>(K));
  for (std::size_t t = 0; t < T; ++t) {
    double z = 0.0;
    for (double v : logits[t]) z += std::exp(v);
    for (std::size_t k = 0; k < K; ++k) prob[t][k] = std::exp(logits[t][k]) / z;
  }
  double total = 0.0;
  std::vector<std::size_t> path(T, 0);
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (std::size_t t = 0; t < T; ++t) {
      const int k = static_cast<int>(path[t]);
      if (k != prev && k != blank) collapsed.push_back(k);
      prev = k;
    }
    if (collapsed == y) {
      double p = 1.0;
      for (std::size_t t = 0; t < T; ++t) p *= prob[t][path[t]];
      total += p;
    }
    std::size_t i = 0;
    while (i < T && ++path[i] == K) path[i++] = 0;
    if (i == T) break;
  }
  return -std::log(total);
}

TEST(AsrCtc, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.5);
  const int blank = 3;
  const std::vector<std::vector<int>> targets{{0}, {1, 2}, {0, 0}, {2, 1, 2}, {0, 1, 0, 1}};
  for (std::size_t T = 1; T <= 8; ++T) {
    for (const auto& y : targets) {
      std::vector<std::vector<double>> rows(T, std::vector<double>(4));
      std::vector<double> flat;
      for (auto& r : rows)
        for (double& v : r) flat.push_back(v = n(rng));
      Tensor logits = Tensor::from_data({T, 4}, flat);
      if (T < ad::ctc_min_frames(y)) {
        EXPECT_THROW(loss_ctc(logits, y, blank), InfeasibleAlignmentError);
        continue;
      }
      EXPECT_NEAR(loss_ctc(logits, y, blank).item(), brute_force_ctc(rows, y, blank), 1e-8)
          << "T=" << T << " |y|=" << y.size();
    }
  }
}

TEST(AsrLoss, UntrainedModelGivesLogC) {
  AsrModel model(AsrConfig{});
  corpus::Utterance u;
  u.y = {3, 4, 5};
  u.s = {3, 4, 4, 5, 6};
  const auto l = asr_losses(model, u, AsrLossCfg{});
  EXPECT_NEAR(l.ce.item(), std::log(32.0), 1e-12);
  EXPECT_NEAR(l.total.item(), 0.7 * l.ce.item() + 0.3 * l.ctc.item(), 1e-12);
}

TEST(AsrLoss, HybridArithmetic) {
  EXPECT_DOUBLE_EQ(loss_asr(2.0, 4.0, 0.3), 2.6);
  EXPECT_DOUBLE_EQ(loss_asr(2.0, 4.0, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(loss_asr(2.0, 4.0, 1.0), 4.0);
  EXPECT_NEAR(loss_asr(Tensor::scalar(2.0), Tensor::scalar(4.0), 0.3).item(), 2.6, 1e-15);
  EXPECT_THROW(loss_asr(2.0, 4.0, 1.5), ParameterError);
  EXPECT_THROW(loss_asr(2.0, 4.0, -0.1), ParameterError);
}

TEST(AsrLoss, CrossEntropyTemperatureAndSmoothing) {
  Tensor h = Tensor::from_data({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  const std::vector<int> y{1, 2};
  for (double tau : {0.5, 1.0, 2.0}) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      double z = 0.0;
      for (std::size_t k = 0; k < 3; ++k) z += std::exp(h.at(i, k) / tau);
      expect -= h.at(i, static_cast<std::size_t>(y[i])) / tau - std::log(z);
    }
    EXPECT_NEAR(loss_ce(h, y, tau).item(), expect / 2.0, 1e-12);
  }
  // Smoothing 1 - eps on the target, eps spread uniformly.
  double nll = loss_ce(h, y, 1.0).item();
  double uniform = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(h.at(i, k));
    for (std::size_t k = 0; k < 3; ++k) uniform -= (h.at(i, k) - std::log(z)) / 6.0;
  }
  EXPECT_NEAR(loss_ce(h, y, 1.0, 0.1).item(), 0.9 * nll + 0.1 * uniform, 1e-12);
  EXPECT_THROW(loss_ce(h, std::vector<int>{1}, 1.0), DimensionError);
  EXPECT_THROW(loss_ce(h, y, 0.0), ParameterError);
}

TEST(AsrModel, DecoderIsCausal) {
  AsrModel model(micro_config());
  testing::perturb(model.params(), 3);
  const std::vector<int> s{3, 4, 5, 6, 7};
  Tensor enc = model.encode(s);
  std::vector<int> a{1, 3, 4, 5, 6};
  std::vector<int> b = a;
  b[3] = 8;
  Tensor la = model.decode(enc, a);
  Tensor lb = model.decode(enc, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < la.dim(1); ++k) EXPECT_DOUBLE_EQ(la.at(i, k), lb.at(i, k));
  double diff = 0.0;
  for (std::size_t k = 0; k < la.dim(1); ++k) diff += std::abs(la.at(3, k) - lb.at(3, k));
  EXPECT_GT(diff, 1e-6);
}

TEST(AsrModel, OutputShapes) {
  AsrModel model(AsrConfig{});
  const std::vector<int> s{3, 4, 5, 6, 7, 8};
  const std::vector<int> y{3, 4};
  const auto out = asr_forward(model, s, teacher_input(y));
  EXPECT_EQ(out.dec_logits.shape(), (ad::Shape{3, 32}));
  EXPECT_EQ(out.ctc_logits.shape(), (ad::Shape{6, 33}));
  EXPECT_EQ(out.enc_states.shape(), (ad::Shape{6, 64}));
  EXPECT_THROW(asr_forward(model, s, y), InputError);
  EXPECT_THROW(model.encode(std::vector<int>{}), InputError);
  EXPECT_THROW(model.encode(std::vector<int>{64}), IndexError);
}

TEST(AsrModel, ParameterGradientsMatchFiniteDifferences) {
  AsrModel model(micro_config());
  testing::perturb(model.params(), 4);
  corpus::Utterance u;
  u.y = {3, 5, 4};
  u.s = {3, 3, 7, 5, 4, 9};
  auto f = [&] { return asr_losses(model, u, AsrLossCfg{}).total; };
  EXPECT_LT(ad::grad_check_params(f, model.params().tensors(), 1e-5, 6), 1e-4);
}

TEST(AsrModel, CloneIsIndependent) {
  AsrModel a(micro_config());
  AsrModel b = a.clone();
  EXPECT_TRUE(a.params().same_values(b.params()));
  b.params().tensors()[0].mutable_data()[0] += 1.0;
  EXPECT_FALSE(a.params().same_values(b.params()));
}

TEST(AsrDecode, BeamOfOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    AsrModel model(micro_config());
    testing::perturb(model.params(), seed, 0.6);
    const std::vector<int> s{3, 4, 5, 9, 10};
    const auto greedy = decode_greedy(model, s);
    const auto beam = decode_beam(model, s, 1);
    EXPECT_EQ(greedy, beam.tokens);
    EXPECT_LE(greedy.size(), 3 * s.size());
  }
}

TEST(AsrDecode, BeamScoreIsNormalisedLogProbability) {
  AsrModel model(micro_config());
  testing::perturb(model.params(), 9, 0.6);
  const std::vector<int> s{3, 4, 5, 9};
  for (int width : {1, 3, 5}) {
    const auto r = decode_beam(model, s, width);
    EXPECT_NEAR(r.score, normalized_logprob(model, s, r.tokens), 1e-9);
  }
  EXPECT_THROW(decode_beam(model, s, 0), ParameterError);
}

TEST(AsrDecode, UniformModelScoresMinusLogC) {
  AsrModel model(AsrConfig{});
  const std::vector<int> s{3, 4};
  const auto r = decode_beam(model, s, 4);
  EXPECT_NEAR(r.score, -std::log(32.0), 1e-12);
}

}  // namespace
}  // namespace tokenchain::asr
