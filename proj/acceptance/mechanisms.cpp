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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "acceptance.hpp"
#include "test_util.hpp"
#include "tokenchain/asr.hpp"
#include "tokenchain/chain.hpp"
#include "tokenchain/metrics.hpp"
#include "tokenchain/s2a.hpp"
#include "tokenchain/t2s.hpp"

namespace tokenchain::acceptance {
namespace {

using ad::Tensor;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                     double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(ad::shape_size(shape));
  for (double& x : v) x = n(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor weighted_sum(const Tensor& t) {
  std::vector<double> w(t.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
  return ad::sum(ad::mul(t, Tensor::from_data(t.shape(), std::move(w))));
}

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// log P(y | logits) summed over every length-T path whose collapse equals y.
double ctc_enumerated(const std::vector<double>& logits, std::size_t T, int K,
                      const std::vector<int>& y, int blank) {
  std::vector<double> lp(logits.size());
  for (std::size_t t = 0; t < T; ++t) {
    double z = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) z = log_add(z, logits[t * K + k]);
    for (int k = 0; k < K; ++k) lp[t * K + k] = logits[t * K + k] - z;
  }
  double total = -std::numeric_limits<double>::infinity();
  std::vector<int> path(T, 0);
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int p : path) {
      if (p != prev && p != blank) collapsed.push_back(p);
      prev = p;
    }
    if (collapsed == y) {
      double s = 0.0;
      for (std::size_t t = 0; t < T; ++t) s += lp[t * K + path[t]];
      total = log_add(total, s);
    }
    std::size_t i = 0;
    while (i < T && ++path[i] == K) path[i++] = 0;
    if (i == T) break;
  }
  return total;
}

int edit_recursive(const std::vector<int>& a, const std::vector<int>& b, std::size_t i,
                   std::size_t j, std::map<std::pair<std::size_t, std::size_t>, int>& memo) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  const int best =
      std::min({edit_recursive(a, b, i + 1, j, memo) + 1, edit_recursive(a, b, i, j + 1, memo) + 1,
                edit_recursive(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1)});
  memo[key] = best;
  return best;
}

asr::AsrConfig micro_asr() {
  asr::AsrConfig c;
  c.text_size = 10;
  c.semantic_size = 16;
  c.d_model = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ffn = 12;
  c.max_len = 16;
  return c;
}

t2s::T2sConfig micro_t2s() {
  t2s::T2sConfig c;
  c.text_size = 10;
  c.semantic_size = 16;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn = 12;
  c.max_len = 24;
  return c;
}

s2a::S2aConfig micro_s2a() {
  s2a::S2aConfig c;
  c.semantic_size = 16;
  c.acoustic_size = 6;
  c.num_layers = 3;
  c.d_model = 8;
  c.heads = 2;
  c.blocks = 1;
  c.ffn = 12;
  c.max_len = 16;
  return c;
}

std::vector<corpus::Utterance> micro_batch() {
  corpus::Utterance a;
  a.y = {3, 4, 5};
  a.s = {3, 4, 4, 9, 5, 6};
  a.a = {{0, 1, 1, 2, 3, 4}, {5, 4, 3, 2, 1, 0}};
  corpus::Utterance b;
  b.y = {6, 7};
  b.s = {6, 10, 7, 11};
  b.a = {{2, 2, 3, 1}, {0, 5, 5, 4}};
  return {a, b};
}

}  // namespace

Outcome ctc_matches_enumeration() {
  const auto t0 = Clock::now();
  Outcome o{1, "CTC forward equals alignment enumeration"};
  constexpr int K = 4;
  constexpr int blank = 3;
  std::mt19937_64 rng(derive_seed({0xc7c, 1}));
  double worst = 0.0;
  int cases = 0;
  while (cases < 200) {
    const std::size_t T = 1 + rng() % 8;
    const std::size_t L = rng() % 5;
    std::vector<int> y(L);
    for (int& v : y) v = static_cast<int>(rng() % blank);
    if (ad::ctc_min_frames(y) > T) continue;
    Tensor logits = random_tensor({T, K}, rng, false, 2.0);
    const std::vector<double> lv(logits.data().begin(), logits.data().end());
    const double fast = ad::ctc_loss(logits, y, blank).item();
    const double brute = -ctc_enumerated(lv, T, K, y, blank);
    worst = std::max(worst, std::abs(fast - brute));
    ++cases;
  }
  o.seconds = seconds_since(t0);
  o.pass = worst <= 1e-8 && o.seconds < 10.0;
  o.detail = std::to_string(cases) + " cases, max |diff| " + fmt(worst);
  return o;
}

Outcome gradients_match_finite_differences() {
  const auto t0 = Clock::now();
  Outcome o{2, "finite-difference gradient checks"};
  std::mt19937_64 rng(derive_seed({0x9c, 2}));
  std::vector<std::pair<std::string, double>> errors;
  auto check = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                   const Tensor& x) { errors.emplace_back(name, ad::grad_check(f, x, 1e-5)); };

  const std::size_t a = 3, b = 4, c = 5;
  Tensor x3 = random_tensor({a, b, c}, rng);
  Tensor y3 = random_tensor({a, b, c}, rng, false);
  Tensor row = random_tensor({c}, rng);
  Tensor bias = random_tensor({c}, rng);
  Tensor m = random_tensor({a, b}, rng);
  Tensor w = random_tensor({b, c}, rng);
  check(
      "softmax_temp", [&](const Tensor& t) { return weighted_sum(ad::softmax_temp(t, 0.7)); }, x3);
  check(
      "log_softmax_temp",
      [&](const Tensor& t) { return weighted_sum(ad::log_softmax_temp(t, 1.3)); }, x3);
  check("add", [&](const Tensor& t) { return weighted_sum(ad::add(t, y3)); }, x3);
  check("sub", [&](const Tensor& t) { return weighted_sum(ad::sub(y3, t)); }, x3);
  check("mul", [&](const Tensor& t) { return weighted_sum(ad::mul(t, y3)); }, x3);
  check("scale", [&](const Tensor& t) { return weighted_sum(ad::scale(t, -2.5)); }, x3);
  check("exp", [&](const Tensor& t) { return weighted_sum(ad::exp(ad::scale(t, 0.5))); }, x3);
  check(
      "log",
      [&](const Tensor& t) {
        return weighted_sum(ad::log(ad::add_row(ad::square(t), Tensor::full({c}, 0.5))));
      },
      x3);
  check("gelu", [&](const Tensor& t) { return weighted_sum(ad::gelu(t)); }, x3);
  check("square", [&](const Tensor& t) { return weighted_sum(ad::square(t)); }, x3);
  check("sum", [&](const Tensor& t) { return ad::square(ad::sum(t)); }, x3);
  check("mean", [&](const Tensor& t) { return ad::mean(ad::mul(t, y3)); }, x3);
  check(
      "add_row", [&](const Tensor& t) { return weighted_sum(ad::square(ad::add_row(x3, t))); },
      row);
  check(
      "layer_norm", [&](const Tensor& t) { return weighted_sum(ad::layer_norm(t, row, bias)); },
      x3);
  check(
      "layer_norm.gamma",
      [&](const Tensor& t) { return weighted_sum(ad::layer_norm(x3, t, bias)); }, row);
  check(
      "layer_norm.beta",
      [&](const Tensor& t) { return weighted_sum(ad::square(ad::layer_norm(x3, row, t))); }, bias);
  check("matmul", [&](const Tensor& t) { return weighted_sum(ad::matmul(t, w)); }, m);
  check("matmul.rhs", [&](const Tensor& t) { return weighted_sum(ad::matmul(m, t)); }, w);
  check("affine", [&](const Tensor& t) { return weighted_sum(ad::affine(m, t, bias)); }, w);
  check("affine.bias", [&](const Tensor& t) { return weighted_sum(ad::affine(m, w, t)); }, bias);
  check("transpose", [&](const Tensor& t) { return weighted_sum(ad::transpose(t)); }, m);
  std::vector<int> idx = {1, 0, 3};
  check("gather", [&](const Tensor& t) { return weighted_sum(ad::gather(t, idx)); }, m);
  check(
      "embedding_lookup",
      [&](const Tensor& t) { return weighted_sum(ad::embedding_lookup(t, idx)); }, w);
  std::vector<std::uint8_t> mask = {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0};
  check(
      "masked_fill", [&](const Tensor& t) { return weighted_sum(ad::masked_fill(t, mask, -3.0)); },
      m);
  check(
      "concat_rows",
      [&](const Tensor& t) {
        const Tensor parts[] = {t, ad::square(t)};
        return weighted_sum(ad::concat_rows(parts));
      },
      m);
  check("slice_rows", [&](const Tensor& t) { return weighted_sum(ad::slice_rows(t, 1, a)); }, m);
  check(
      "relu", [&](const Tensor& t) { return weighted_sum(ad::relu(t)); },
      Tensor::from_data({4}, {-1.5, -0.2, 0.3, 2.0}, true));
  check(
      "one_hot",
      [&](const Tensor& t) {
        return weighted_sum(ad::mul(t, ad::one_hot(std::vector<int>{1, 2, 0}, b)));
      },
      m);
  {
    // Backward of the straight-through op must equal finite differences of its soft input.
    Tensor t = Tensor::from_data(m.shape(), {m.data().begin(), m.data().end()}, true);
    weighted_sum(
        ad::straight_through(ad::softmax_temp(t, 1.0), std::vector<double>(t.size(), 0.25)))
        .backward();
    auto soft = [&](std::vector<double> v) {
      ad::NoGradGuard guard;
      return weighted_sum(ad::softmax_temp(Tensor::from_data(m.shape(), std::move(v)), 1.0)).item();
    };
    const std::vector<double> base(m.data().begin(), m.data().end());
    double err = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto plus = base, minus = base;
      plus[i] += 1e-5;
      minus[i] -= 1e-5;
      const double fd = (soft(plus) - soft(minus)) / 2e-5;
      err = std::max(err, std::abs(t.grad()[i] - fd) / std::max(1.0, std::abs(fd)));
    }
    errors.emplace_back("straight_through", err);
  }
  for (bool causal : {false, true}) {
    Tensor q = random_tensor({5, 6}, rng);
    Tensor k = random_tensor({5, 6}, rng);
    Tensor v = random_tensor({5, 6}, rng);
    const std::string tag = causal ? "attention.causal" : "attention";
    check(
        tag + ".q",
        [&](const Tensor& t) { return weighted_sum(ad::attention(t, k, v, 2, causal)); }, q);
    check(
        tag + ".k",
        [&](const Tensor& t) { return weighted_sum(ad::attention(q, t, v, 2, causal)); }, k);
    check(
        tag + ".v",
        [&](const Tensor& t) { return weighted_sum(ad::attention(q, k, t, 2, causal)); }, v);
  }
  const std::vector<int> ctc_y = {0, 1, 1};
  check(
      "ctc_loss", [&](const Tensor& t) { return ad::ctc_loss(t, ctc_y, 3); },
      random_tensor({7, 4}, rng, true, 1.5));

  const auto batch = micro_batch();
  asr::AsrModel asr(micro_asr());
  testing::perturb(asr.params(), 11);
  t2s::T2sModel t2s(micro_t2s());
  testing::perturb(t2s.params(), 12);
  s2a::S2aModel s2a(micro_s2a());
  testing::perturb(s2a.params(), 13);
  std::size_t max_params = std::max(
      {asr.params().scalar_count(), t2s.params().scalar_count(), s2a.params().scalar_count()});
  const auto& u = batch[0];
  const auto y_in = asr::teacher_input(u.y);
  const auto y_out = asr::teacher_targets(u.y);
  auto model_check = [&](const std::string& name, nn::ParamSet& ps,
                         const std::function<Tensor()>& f) {
    errors.emplace_back(name, ad::grad_check_params(f, ps.tensors(), 1e-5));
  };
  model_check("asr.ce", asr.params(), [&] {
    return asr::loss_ce(asr::asr_forward(asr, u.s, y_in).dec_logits, y_out, 1.0);
  });
  model_check("asr.ctc", asr.params(), [&] {
    return asr::loss_ctc(asr::asr_forward(asr, u.s, y_in).ctc_logits, u.y, asr.blank());
  });
  model_check("asr.hybrid", asr.params(), [&] {
    asr::AsrLossCfg lc;
    return asr::asr_losses(asr, u, lc).total;
  });
  const auto pb = t2s::make_prefix_batch(u.y, u.s, 2);
  model_check("t2s.prefix_lm", t2s.params(),
              [&] { return t2s::loss_t2s(t2s::t2s_forward(t2s, pb), pb); });
  s2a::MaskPlan plan;
  plan.layer = 3;
  plan.prompt_len = 2;
  plan.mask = {0, 0, 1, 0, 1, 1};
  plan.fraction = 0.5;
  model_check("s2a.masked_ce", s2a.params(), [&] { return s2a::s2a_loss(s2a, u, plan); });

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : errors)
    if (err >= worst) worst = err, worst_name = name;
  o.seconds = seconds_since(t0);
  o.pass = worst < 1e-3 && max_params < 5000 && o.seconds < 60.0;
  o.detail = std::to_string(errors.size()) + " checks, max rel err " + fmt(worst) + " (" +
             worst_name + "), largest model " + std::to_string(max_params) + " params";
  return o;
}

Outcome gumbel_sampling_and_backward() {
  const auto t0 = Clock::now();
  Outcome o{3, "ST-Gumbel sampling law and backward pass"};
  const std::vector<double> logits{0.5, -0.3, 1.2, 0.0, -1.0};
  const std::size_t C = logits.size();
  std::vector<double> probs(C);
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  for (std::size_t c = 0; c < C; ++c) probs[c] = std::exp(logits[c]) / z;
  const std::size_t n = 100000;
  std::vector<double> rows;
  rows.reserve(n * C);
  for (std::size_t i = 0; i < n; ++i) rows.insert(rows.end(), logits.begin(), logits.end());
  const Tensor h = Tensor::from_data({n, C}, rows);
  double min_p = 1.0;
  for (double tau : {0.75, 1.0, 1.5}) {
    Rng rng(derive_seed({0x96, static_cast<std::uint64_t>(tau * 100)}));
    const Tensor hard = chain::st_gumbel(h, tau, rng);
    std::vector<double> counts(C, 0.0), expected(C);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) counts[c] += hard.at(i, c);
    for (std::size_t c = 0; c < C; ++c) expected[c] = probs[c] * static_cast<double>(n);
    min_p = std::min(min_p, testing::chi_square_p(counts, expected));
  }

  double worst = 0.0;
  Rng rng(derive_seed({0x96, 2}));
  const std::size_t R = 4, K = 6;
  const auto g = chain::gumbel_noise(R * K, rng);
  std::vector<double> hv(R * K), wv(R * K);
  for (std::size_t i = 0; i < R * K; ++i) {
    hv[i] = std::cos(0.9 * static_cast<double>(i));
    wv[i] = std::sin(0.4 * static_cast<double>(i) + 0.1);
  }
  for (double tau : {0.75, 1.0, 1.5}) {
    Tensor x = Tensor::from_data({R, K}, hv, true);
    ad::sum(ad::mul(chain::st_gumbel(x, tau, g), Tensor::from_data({R, K}, wv))).backward();
    auto relaxed = [&](const std::vector<double>& v) {
      double total = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        double zz = 0.0;
        for (std::size_t c = 0; c < K; ++c) zz += std::exp((v[r * K + c] + g[r * K + c]) / tau);
        for (std::size_t c = 0; c < K; ++c)
          total += wv[r * K + c] * std::exp((v[r * K + c] + g[r * K + c]) / tau) / zz;
      }
      return total;
    };
    for (std::size_t i = 0; i < R * K; ++i) {
      auto plus = hv, minus = hv;
      plus[i] += 1e-6;
      minus[i] -= 1e-6;
      const double fd = (relaxed(plus) - relaxed(minus)) / 2e-6;
      worst = std::max(worst, std::abs(x.grad()[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  o.seconds = seconds_since(t0);
  o.pass = min_p > 0.001 && worst < 1e-3;
  o.detail = "min chi-square p " + fmt(min_p) + ", backward max rel err " + fmt(worst);
  return o;
}

Outcome dwa_reference_values() {
  const auto t0 = Clock::now();
  Outcome o{4, "DWA weight schedule"};
  const chain::DwaConfig cfg;
  const std::vector<double> none;
  const std::vector<double> ones = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  const std::vector<double> equal_asr = {3.0, 2.5, 2.4, 2.2, 2.0, 1.5};
  const std::vector<double> equal_t2s = {5.0, 4.5, 4.4, 4.1, 4.0, 3.0};
  const std::vector<double> rising = {1.0, 1.0, 1.0, 1.0, 1.0, 1.2};
  const std::vector<double> rising_early = {1.0, 1.0, 1.2};
  const double sigma = 1.0 / (1.0 + std::exp(-0.1));
  struct Case {
    std::string name;
    double got, want;
  };
  const std::vector<Case> cases = {
      {"epoch 1", chain::dwa_alpha(1, none, none, cfg), 1e-3},
      {"epoch 2", chain::dwa_alpha(2, std::span(ones).first(1), std::span(ones).first(1), cfg),
       0.05},
      {"equal ratios", chain::dwa_alpha(7, equal_asr, equal_t2s, cfg), 0.5},
      {"sigmoid(0.1) past ramp", chain::dwa_alpha(7, ones, rising, cfg), sigma},
      {"sigmoid(0.1) capped in ramp",
       chain::dwa_alpha(4, std::span(ones).first(3), rising_early, cfg), 0.5},
  };
  double worst = 0.0;
  std::string failing;
  for (const auto& c : cases) {
    const double d = std::abs(c.got - c.want);
    worst = std::max(worst, d);
    if (d > 1e-12) failing += " " + c.name;
  }
  o.seconds = seconds_since(t0);
  o.pass = failing.empty();
  o.detail = std::to_string(cases.size()) + " reference values, max |diff| " + fmt(worst) +
             (failing.empty() ? "" : ", off:" + failing);
  return o;
}

Outcome edit_distance_matches_recursion() {
  const auto t0 = Clock::now();
  Outcome o{5, "edit distance equals exhaustive recursion"};
  std::mt19937_64 rng(derive_seed({0xed, 5}));
  int mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    std::vector<int> a(rng() % 11), b(rng() % 11);
    const int alphabet = 2 + static_cast<int>(rng() % 4);
    for (int& v : a) v = static_cast<int>(rng() % alphabet);
    for (int& v : b) v = static_cast<int>(rng() % alphabet);
    std::map<std::pair<std::size_t, std::size_t>, int> memo;
    const int want = edit_recursive(a, b, 0, 0, memo);
    const auto got = metrics::edit_distance(a, b);
    if (static_cast<int>(got.errors()) != want) ++mismatches;
  }
  o.seconds = seconds_since(t0);
  o.pass = mismatches == 0;
  o.detail = "500 pairs, " + std::to_string(mismatches) + " mismatches";
  return o;
}

Outcome chain_gradient_flow() {
  const auto t0 = Clock::now();
  Outcome o{6, "chain gradient flow and zero-weight equivalence"};
  const auto batch = micro_batch();
  t2s::T2sModel t2s(micro_t2s());
  testing::perturb(t2s.params(), 21);

  bool flows = true;
  std::string flow_detail;
  for (auto est : {chain::Estimator::st_argmax, chain::Estimator::st_gumbel}) {
    asr::AsrModel asr(micro_asr());
    testing::perturb(asr.params(), 22);
    chain::ChainStepConfig cfg;
    cfg.estimator = est;
    cfg.alpha = 0.5;
    cfg.with_asr_loss = false;
    Rng rng(23);
    chain::chain_step(asr, t2s, batch, cfg, rng);
    const double norm = asr.params().grad_norm();
    flows = flows && norm > 0.0 && std::isfinite(norm);
    flow_detail += chain::to_string(est) + " |g| " + fmt(norm) + ", ";
  }

  bool identical = true;
  for (auto est : {chain::Estimator::st_argmax, chain::Estimator::st_gumbel}) {
    asr::AsrModel chained(micro_asr());
    testing::perturb(chained.params(), 24);
    asr::AsrModel plain = chained.clone();
    t2s::T2sModel t2s_chain = t2s.clone();
    nn::AdamW opt_a, opt_b, opt_t;
    for (int step = 0; step < 3; ++step) {
      chain::ChainStepConfig cfg;
      cfg.estimator = est;
      cfg.alpha = 0.0;
      chain::ChainStepConfig base = cfg;
      base.with_t2s = false;
      chained.params().zero_grad();
      plain.params().zero_grad();
      t2s_chain.params().zero_grad();
      Rng r1(derive_seed({25, static_cast<std::uint64_t>(step)}));
      Rng r2(derive_seed({25, static_cast<std::uint64_t>(step)}));
      chain::chain_step(chained, t2s_chain, batch, cfg, r1);
      chain::chain_step(plain, t2s, batch, base, r2);
      opt_a.step(chained.params(), 1e-2);
      opt_b.step(plain.params(), 1e-2);
      opt_t.step(t2s_chain.params(), 1e-2);
    }
    identical = identical && chained.params().same_values(plain.params());
  }
  o.seconds = seconds_since(t0);
  o.pass = flows && identical;
  o.detail =
      flow_detail + (identical ? "alpha=0 updates bitwise identical" : "alpha=0 updates differ");
  return o;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace tokenchain::acceptance
