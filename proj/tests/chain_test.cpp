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

#include "tokenchain/chain.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tokenchain/error.hpp"

namespace tokenchain::chain {
namespace {

asr::AsrConfig micro_asr() {
  asr::AsrConfig c;
  c.text_size = 10;
  c.semantic_size = 16;
  c.d_model = 8;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ffn = 12;
  c.max_len = 32;
  return c;
}

t2s::T2sConfig micro_t2s() {
  t2s::T2sConfig c;
  c.text_size = 10;
  c.semantic_size = 16;
  c.d_model = 8;
  c.layers = 1;
  c.ffn = 12;
  c.max_len = 40;
  return c;
}

std::vector<corpus::Utterance> micro_batch() {
  corpus::Utterance a;
  a.y = {3, 4, 5};
  a.s = {3, 4, 4, 9, 5};
  corpus::Utterance b;
  b.y = {6, 7};
  b.s = {6, 10, 7, 11};
  return {a, b};
}

TEST(StArgmax, ForwardExamples) {
  Tensor p = Tensor::from_data({2, 3}, {0.1, 0.7, 0.2, 0.4, 0.2, 0.4});
  Tensor h = st_argmax(p);
  EXPECT_EQ(std::vector<double>(h.data().begin(), h.data().end()),
            (std::vector<double>{0, 1, 0, 1, 0, 0}));
  Tensor tie = st_argmax(Tensor::from_data({1, 2}, {0.5, 0.5}));
  EXPECT_EQ(tie.at(0, 0), 1.0);
  EXPECT_EQ(tie.at(0, 1), 0.0);
}

TEST(StArgmax, BackwardIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor p = Tensor::from_data({3, 4}, {0.1, 0.2, 0.3, 0.4, 0.25, 0.25, 0.25, 0.25,
                                        0.7, 0.1, 0.1, 0.1}, true);
  std::vector<double> w(12);
  for (double& x : w) x = std::normal_distribution<double>(0.0, 1.0)(rng);
  Tensor loss = ad::sum(ad::mul(st_argmax(p), Tensor::from_data({3, 4}, w)));
  loss.backward();
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(p.grad()[i], w[i]);
}

TEST(StGumbel, ForwardFrequenciesMatchSoftmaxForAnyTau) {
  const std::vector<double> logits{0.5, -0.3, 1.2, 0.0, -1.0};
  std::vector<double> probs(5);
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  for (std::size_t c = 0; c < 5; ++c) probs[c] = std::exp(logits[c]) / z;
  const std::size_t n = 100000;
  std::vector<double> rows;
  for (std::size_t i = 0; i < n; ++i) rows.insert(rows.end(), logits.begin(), logits.end());
  Tensor h = Tensor::from_data({n, 5}, rows);
  for (double tau : {0.75, 1.0, 1.5}) {
    Rng rng(derive_seed({7, static_cast<std::uint64_t>(tau * 100)}));
    Tensor hard = st_gumbel(h, tau, rng);
    std::vector<double> counts(5, 0.0), expected(5);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 5; ++c) counts[c] += hard.at(i, c);
    for (std::size_t c = 0; c < 5; ++c) expected[c] = probs[c] * static_cast<double>(n);
    EXPECT_GT(testing::chi_square_p(counts, expected), 0.001) << "tau=" << tau;
  }
}

TEST(StGumbel, SameNoiseSameSampleAcrossTau) {
  Rng rng(3);
  const auto g = gumbel_noise(40, rng);
  std::vector<double> v(40);
  for (std::size_t i = 0; i < 40; ++i) v[i] = std::sin(1.3 * static_cast<double>(i));
  Tensor h = Tensor::from_data({8, 5}, v);
  Tensor a = st_gumbel(h, 0.75, g);
  Tensor b = st_gumbel(h, 1.5, g);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(StGumbel, DominantLogitAlmostAlwaysWins) {
  const std::size_t n = 20000;
  std::vector<double> rows;
  for (std::size_t i = 0; i < n; ++i) rows.insert(rows.end(), {10.0, -10.0});
  Rng rng(4);
  Tensor hard = st_gumbel(Tensor::from_data({n, 2}, rows), 1.0, rng);
  double zero = 0.0;
  for (std::size_t i = 0; i < n; ++i) zero += hard.at(i, 0);
  EXPECT_GT(zero / static_cast<double>(n), 0.999);
}

TEST(StGumbel, BackwardMatchesRelaxationFiniteDifferences) {
  Rng rng(5);
  const auto g = gumbel_noise(12, rng);
  std::vector<double> hv(12), wv(12);
  for (std::size_t i = 0; i < 12; ++i) {
    hv[i] = std::cos(0.9 * static_cast<double>(i));
    wv[i] = std::sin(0.4 * static_cast<double>(i) + 0.1);
  }
  for (double tau : {0.5, 1.0, 2.0}) {
    Tensor h = Tensor::from_data({3, 4}, hv, true);
    Tensor w = Tensor::from_data({3, 4}, wv);
    ad::sum(ad::mul(st_gumbel(h, tau, g), w)).backward();
    // Oracle: finite differences of w . softmax((h + g) / tau), computed without autodiff.
    auto relaxed = [&](const std::vector<double>& x) {
      double total = 0.0;
      for (std::size_t r = 0; r < 3; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < 4; ++c) z += std::exp((x[r * 4 + c] + g[r * 4 + c]) / tau);
        for (std::size_t c = 0; c < 4; ++c)
          total += wv[r * 4 + c] * std::exp((x[r * 4 + c] + g[r * 4 + c]) / tau) / z;
      }
      return total;
    };
    for (std::size_t i = 0; i < 12; ++i) {
      auto plus = hv, minus = hv;
      plus[i] += 1e-6;
      minus[i] -= 1e-6;
      const double fd = (relaxed(plus) - relaxed(minus)) / 2e-6;
      EXPECT_LT(std::abs(h.grad()[i] - fd) / std::max(1.0, std::abs(fd)), 1e-3);
      EXPECT_NEAR(h.grad()[i], fd, 1e-7);
    }
  }
  EXPECT_THROW(st_gumbel(Tensor::from_data({1, 2}, {0, 0}), 0.0, std::span<const double>(g).subspan(0, 2)), ParameterError);
}

TEST(TauSchedule, FixedAndAnneal) {
  const auto a = TauSchedule::anneal(2.0, 0.1, 10);
  EXPECT_DOUBLE_EQ(tau_at(a, 1), 2.0);
  EXPECT_DOUBLE_EQ(tau_at(a, 10), 0.1);
  EXPECT_DOUBLE_EQ(tau_at(a, 15), 0.1);
  EXPECT_NEAR(tau_at(a, 2), 2.0 - 1.9 / 9.0, 1e-15);
  for (int e = 1; e < 20; ++e) EXPECT_LE(tau_at(a, e + 1), tau_at(a, e));
  const auto f = TauSchedule::fixed_value(1.5);
  for (int e : {1, 7, 100}) EXPECT_EQ(tau_at(f, e), 1.5);
  EXPECT_THROW(tau_at(f, 0), ParameterError);
  EXPECT_THROW(TauSchedule::anneal(0.1, 2.0, 10), ParameterError);
  EXPECT_THROW(TauSchedule::fixed_value(0.0), ParameterError);
}

TEST(TauSchedule, ParseRoundTrip) {
  EXPECT_EQ(TauSchedule::parse("1.5"), TauSchedule::fixed_value(1.5));
  EXPECT_EQ(TauSchedule::parse("anneal:2.0:0.1:10"), TauSchedule::anneal(2.0, 0.1, 10));
  for (const char* spec : {"0.75", "anneal:2:0.1:10"})
    EXPECT_EQ(TauSchedule::parse(TauSchedule::parse(spec).to_string()), TauSchedule::parse(spec));
  EXPECT_EQ(TauSchedule::anneal(2.0, 0.1, 10).to_string(), "anneal:2:0.1:10");
  EXPECT_EQ(TauSchedule::fixed_value(0.75).to_string(), "0.75");
  for (const char* bad : {"", "x", "-1", "anneal:2.0:0.1", "anneal:0.1:2.0:10", "anneal:2:1:2.5"})
    EXPECT_THROW(TauSchedule::parse(bad), ConfigError) << bad;
  EXPECT_EQ(estimator_from_string("gumbel"), Estimator::st_gumbel);
  EXPECT_EQ(estimator_from_string("st_argmax"), Estimator::st_argmax);
  EXPECT_THROW(estimator_from_string("reinforce"), ConfigError);
}

TEST(Dwa, WarmupAndClosedForm) {
  const DwaConfig cfg;
  EXPECT_EQ(dwa_alpha(1, {}, {}, cfg), 1e-3);
  EXPECT_EQ(dwa_alpha(2, std::vector<double>{3.0}, std::vector<double>{4.0}, cfg), 0.05);
  EXPECT_NEAR(dwa_target(1.1, 1.1, 2.0), 0.5, 1e-15);
  const double expect = std::exp(0.6) / (std::exp(0.4) + std::exp(0.6));
  EXPECT_NEAR(dwa_target(0.8, 1.2, 2.0), expect, 1e-12);
  EXPECT_NEAR(expect, 0.549833997312478, 1e-12);
  // r_asr = 0.8, r_t2s = 1.2
  const std::vector<double> asr{1.0, 2.0, 1.6};
  const std::vector<double> t2s{1.0, 2.5, 3.0};
  EXPECT_EQ(dwa_alpha(4, asr, t2s, cfg), 0.5);
  DwaConfig no_cap = cfg;
  no_cap.e_ramp = 3;
  EXPECT_NEAR(dwa_alpha(4, asr, t2s, no_cap), expect, 1e-12);
}

TEST(Dwa, Errors) {
  const DwaConfig cfg;
  EXPECT_THROW(dwa_alpha(0, {}, {}, cfg), ParameterError);
  EXPECT_THROW(dwa_alpha(3, std::vector<double>{1.0}, std::vector<double>{1.0}, cfg), InputError);
  EXPECT_THROW(dwa_alpha(3, std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 1.0}, cfg),
               DegenerateRatioError);
  DwaConfig bad = cfg;
  bad.alpha_w1 = 0.6;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.e_ramp = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Dwa, AlphaStaysInUnitIntervalAndRespectsCap) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> start(0.1, 5.0);
  std::uniform_real_distribution<double> ratio(0.1, 10.0);
  const DwaConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    DwaState st;
    double la = start(rng), lt = start(rng);
    for (int e = 1; e <= 12; ++e) {
      const double a = dwa_alpha(st, cfg);
      EXPECT_GT(a, 0.0);
      EXPECT_LT(a, 1.0);
      if (e >= 3 && e <= cfg.e_ramp) EXPECT_LE(a, cfg.alpha_max);
      st.record(la, lt);
      la *= ratio(rng);
      lt *= ratio(rng);
    }
  }
}

void copy_grads(const nn::ParamSet& ps, std::vector<std::vector<double>>& out) {
  out.clear();
  for (const auto& t : ps.tensors()) out.emplace_back(t.grad().begin(), t.grad().end());
}

TEST(ChainStep, ZeroAlphaEqualsAsrOnlyStep) {
  asr::AsrModel asr_a(micro_asr());
  testing::perturb(asr_a.params(), 1);
  asr::AsrModel asr_b = asr_a.clone();
  t2s::T2sModel t2s(micro_t2s());
  testing::perturb(t2s.params(), 2);
  const auto batch = micro_batch();
  for (Estimator est : {Estimator::st_argmax, Estimator::st_gumbel}) {
    ChainStepConfig chain;
    chain.estimator = est;
    chain.alpha = 0.0;
    ChainStepConfig base = chain;
    base.with_t2s = false;
    asr_a.params().zero_grad();
    asr_b.params().zero_grad();
    Rng r1(3), r2(3);
    const auto sa = chain_step(asr_a, t2s, batch, chain, r1);
    const auto sb = chain_step(asr_b, t2s, batch, base, r2);
    EXPECT_EQ(sa.l_asr, sb.l_asr);
    EXPECT_EQ(sa.l_final, sb.l_final);
    std::vector<std::vector<double>> ga, gb;
    copy_grads(asr_a.params(), ga);
    copy_grads(asr_b.params(), gb);
    EXPECT_EQ(ga, gb);
  }
}

TEST(ChainStep, T2sTermReachesAsrParameters) {
  asr::AsrModel asr(micro_asr());
  testing::perturb(asr.params(), 3);
  t2s::T2sModel t2s(micro_t2s());
  testing::perturb(t2s.params(), 4);
  for (Estimator est : {Estimator::st_argmax, Estimator::st_gumbel}) {
    asr.params().zero_grad();
    ChainStepConfig cfg;
    cfg.estimator = est;
    cfg.alpha = 0.5;
    cfg.with_asr_loss = false;
    Rng rng(5);
    chain_step(asr, t2s, micro_batch(), cfg, rng);
    EXPECT_GT(asr.params().grad_norm(), 0.0);
    // Encoder-only parameters (CTC head) cannot see the T2S term.
    const auto ctc_w = asr.params().find("ctc.w");
    ASSERT_TRUE(ctc_w.defined());
    for (double g : ctc_w.grad()) EXPECT_EQ(g, 0.0);
  }
}

// The straight-through output is hard + soft - stop_gradient(soft). With the
// hard rows and soft baseline frozen at the evaluation point this becomes an
// ordinary differentiable function whose finite differences must match the
// estimator's backward pass.
TEST(ChainStep, EndToEndGradientMatchesFiniteDifferences) {
  asr::AsrModel asr(micro_asr());
  testing::perturb(asr.params(), 6);
  t2s::T2sModel t2s(micro_t2s());
  testing::perturb(t2s.params(), 7);
  const auto batch = micro_batch();
  const double alpha = 0.7;
  const double tau = 0.8;
  Rng noise_rng(8);
  std::vector<std::vector<double>> noise;
  for (const auto& u : batch) noise.push_back(gumbel_noise(u.y.size() * 10, noise_rng));

  std::vector<Tensor> frozen_hard(batch.size()), frozen_soft(batch.size());
  auto objective = [&](bool surrogate) {
    Tensor total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& u = batch[i];
      auto l = asr::asr_losses(asr, u, asr::AsrLossCfg{});
      Tensor rows = ad::slice_rows(l.outputs.dec_logits, 0, u.y.size());
      Tensor text;
      if (surrogate) {
        Tensor g = Tensor::from_data(rows.shape(), noise[i]);
        Tensor soft = ad::softmax_temp(ad::add(rows, g), tau);
        text = ad::add(frozen_hard[i], ad::sub(soft, frozen_soft[i]));
      } else {
        text = st_gumbel(rows, tau, noise[i]);
      }
      const auto pb = t2s::make_prefix_batch(text, u.s, 1);
      Tensor term = ad::add(l.total, ad::scale(t2s::loss_t2s(t2s::t2s_forward(t2s, pb), pb), alpha));
      total = total.defined() ? ad::add(total, term) : term;
    }
    return ad::scale(total, 0.5);
  };
  {
    ad::NoGradGuard guard;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& u = batch[i];
      auto l = asr::asr_losses(asr, u, asr::AsrLossCfg{});
      Tensor rows = ad::slice_rows(l.outputs.dec_logits, 0, u.y.size());
      frozen_hard[i] = st_gumbel(rows, tau, noise[i]).detach();
      frozen_soft[i] = ad::softmax_temp(ad::add(rows, Tensor::from_data(rows.shape(), noise[i])), tau).detach();
    }
  }
  std::vector<Tensor> params = asr.params().tensors();
  params.insert(params.end(), t2s.params().tensors().begin(), t2s.params().tensors().end());

  asr.params().zero_grad();
  t2s.params().zero_grad();
  Tensor production = objective(false);
  production.backward();
  std::vector<std::vector<double>> g_prod;
  for (const auto& p : params) g_prod.emplace_back(p.grad().begin(), p.grad().end());
  asr.params().zero_grad();
  t2s.params().zero_grad();
  Tensor reference = objective(true);
  EXPECT_NEAR(production.item(), reference.item(), 1e-12);
  reference.backward();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t j = 0; j < g_prod[k].size(); ++j)
      EXPECT_NEAR(g_prod[k][j], params[k].grad()[j], 1e-12);

  EXPECT_LT(ad::grad_check_params([&] { return objective(true); }, params, 1e-5, 4), 1e-3);
}

TEST(ChainStep, VocabularyMismatchIsConfigError) {
  asr::AsrModel asr(micro_asr());
  auto cfg = micro_t2s();
  cfg.semantic_size = 20;
  t2s::T2sModel t2s(cfg);
  Rng rng(1);
  EXPECT_THROW(chain_step(asr, t2s, micro_batch(), ChainStepConfig{}, rng), ConfigError);
}

}  // namespace
}  // namespace tokenchain::chain
