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

#include <algorithm>
#include <charconv>
#include <cmath>

#include "tokenchain/error.hpp"

namespace tokenchain::chain {

std::string to_string(Estimator e) { return e == Estimator::st_argmax ? "st_argmax" : "st_gumbel"; }

Estimator estimator_from_string(std::string_view s) {
  if (s == "argmax" || s == "st_argmax") return Estimator::st_argmax;
  if (s == "gumbel" || s == "st_gumbel") return Estimator::st_gumbel;
  throw ConfigError("unknown estimator '" + std::string(s) + "' (expected argmax or gumbel)");
}

namespace {

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ConfigError("bad " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

}  // namespace

TauSchedule TauSchedule::fixed_value(double tau) {
  TauSchedule t;
  t.start = t.end = tau;
  t.validate();
  return t;
}

TauSchedule TauSchedule::anneal(double start, double end, int epochs) {
  TauSchedule t;
  t.kind = Kind::anneal;
  t.start = start;
  t.end = end;
  t.epochs = epochs;
  t.validate();
  return t;
}

TauSchedule TauSchedule::parse(std::string_view spec) {
  if (spec.starts_with("anneal:")) {
    std::vector<std::string_view> parts;
    std::string_view rest = spec.substr(7);
    while (true) {
      const auto colon = rest.find(':');
      parts.push_back(rest.substr(0, colon));
      if (colon == std::string_view::npos) break;
      rest = rest.substr(colon + 1);
    }
    if (parts.size() != 3) throw ConfigError("tau anneal spec must be anneal:START:END:EPOCHS");
    const double epochs = parse_double(parts[2], "tau anneal epochs");
    if (epochs != std::floor(epochs)) throw ConfigError("tau anneal epochs must be an integer");
    try {
      return anneal(parse_double(parts[0], "tau"), parse_double(parts[1], "tau"),
                    static_cast<int>(epochs));
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    return fixed_value(parse_double(spec, "tau"));
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string TauSchedule::to_string() const {
  if (kind == Kind::fixed) return shortest(start);
  return "anneal:" + shortest(start) + ':' + shortest(end) + ':' + std::to_string(epochs);
}

void TauSchedule::validate() const {
  if (!(start > 0.0) || !(end > 0.0) || !std::isfinite(start) || !std::isfinite(end))
    throw ParameterError("tau must be positive and finite");
  if (kind == Kind::anneal) {
    if (epochs < 1) throw ParameterError("tau anneal needs at least one epoch");
    if (end > start) throw ParameterError("tau anneal must be non-increasing");
  }
}

double tau_at(const TauSchedule& schedule, int epoch) {
  if (epoch < 1) throw ParameterError("epochs are numbered from 1");
  if (schedule.kind == TauSchedule::Kind::fixed) return schedule.start;
  if (epoch >= schedule.epochs) return schedule.end;
  const double frac = static_cast<double>(epoch - 1) / static_cast<double>(schedule.epochs - 1);
  return schedule.start + (schedule.end - schedule.start) * frac;
}

namespace {

std::vector<double> one_hot_argmax(std::span<const double> v, std::size_t rows, std::size_t cols) {
  std::vector<double> hard(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = v.subspan(r * cols, cols);
    hard[r * cols +
         static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] = 1.0;
  }
  return hard;
}

}  // namespace

Tensor st_argmax(const Tensor& p) {
  if (p.rank() != 2) throw DimensionError("st_argmax expects a matrix of posteriors");
  return ad::straight_through(p, one_hot_argmax(p.data(), p.dim(0), p.dim(1)));
}

std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
  constexpr double eps = 1e-12;
  std::vector<double> g(n);
  for (double& x : g) {
    const double u = std::clamp(uniform01(rng), eps, 1.0 - eps);
    x = -std::log(-std::log(u));
  }
  return g;
}

Tensor st_gumbel(const Tensor& h, double tau, std::span<const double> noise) {
  if (h.rank() != 2) throw DimensionError("st_gumbel expects a matrix of logits");
  if (noise.size() != h.size()) throw DimensionError("one Gumbel draw per logit required");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  Tensor g = Tensor::from_data(h.shape(), {noise.begin(), noise.end()});
  Tensor perturbed = ad::add(h, g);
  Tensor soft = ad::softmax_temp(perturbed, tau);
  return ad::straight_through(soft, one_hot_argmax(perturbed.data(), h.dim(0), h.dim(1)));
}

Tensor st_gumbel(const Tensor& h, double tau, Rng& rng) {
  const auto g = gumbel_noise(h.size(), rng);
  return st_gumbel(h, tau, g);
}

void DwaConfig::validate() const {
  if (!(alpha_w0 > 0.0 && alpha_w0 <= alpha_w1 && alpha_w1 <= alpha_max && alpha_max <= 1.0))
    throw ConfigError("DWA weights must satisfy 0 < w0 <= w1 <= max <= 1");
  if (e_ramp < 3) throw ConfigError("DWA ramp must end at epoch 3 or later");
  if (!(temperature > 0.0)) throw ConfigError("DWA temperature must be positive");
}

void DwaState::record(double asr_mean, double t2s_mean) {
  asr_means.push_back(asr_mean);
  t2s_means.push_back(t2s_mean);
}

double dwa_target(double r_asr, double r_t2s, double temperature) {
  // Written as a logistic of the scaled difference for stability.
  return 1.0 / (1.0 + std::exp((r_asr - r_t2s) / temperature));
}

double dwa_alpha(int epoch, std::span<const double> asr_means, std::span<const double> t2s_means,
                 const DwaConfig& cfg) {
  cfg.validate();
  if (epoch < 1) throw ParameterError("epochs are numbered from 1");
  if (epoch == 1) return cfg.alpha_w0;
  if (epoch == 2) return cfg.alpha_w1;
  const auto need = static_cast<std::size_t>(epoch - 1);
  if (asr_means.size() < need || t2s_means.size() < need)
    throw InputError("DWA needs the epoch-mean losses of the two previous epochs");
  const double a_prev = asr_means[need - 1], a_prev2 = asr_means[need - 2];
  const double t_prev = t2s_means[need - 1], t_prev2 = t2s_means[need - 2];
  if (a_prev2 == 0.0 || t_prev2 == 0.0)
    throw DegenerateRatioError("DWA loss ratio undefined: previous epoch-mean loss is zero");
  const double target = dwa_target(a_prev / a_prev2, t_prev / t_prev2, cfg.temperature);
  if (!std::isfinite(target)) throw NumericError("DWA weight is not finite");
  return epoch <= cfg.e_ramp ? std::min(target, cfg.alpha_max) : target;
}

double dwa_alpha(const DwaState& state, const DwaConfig& cfg) {
  return dwa_alpha(state.next_epoch(), state.asr_means, state.t2s_means, cfg);
}

StepStats chain_step(const asr::AsrModel& asr, const t2s::T2sModel& t2s,
                     std::span<const corpus::Utterance> batch, const ChainStepConfig& cfg,
                     Rng& rng) {
  if (batch.empty()) throw InputError("empty training batch");
  if (cfg.with_t2s && (asr.config().text_size != t2s.config().text_size ||
                       asr.config().semantic_size != t2s.config().semantic_size))
    throw ConfigError("ASR and T2S vocabularies differ");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ParameterError("alpha must lie in [0, 1]");
  if (!cfg.with_t2s && !cfg.with_asr_loss) throw ConfigError("chain step has an empty objective");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  StepStats stats;
  for (const auto& u : batch) {
    auto losses = asr::asr_losses(asr, u, cfg.asr_loss);
    Tensor objective = cfg.with_asr_loss ? losses.total : Tensor{};
    if (cfg.with_t2s && !u.y.empty()) {
      const std::size_t L = u.y.size();
      Tensor rows = ad::slice_rows(losses.outputs.dec_logits, 0, L);
      Tensor hard = cfg.estimator == Estimator::st_argmax
                        ? st_argmax(ad::softmax_temp(rows, cfg.tau))
                        : st_gumbel(rows, cfg.tau, rng);
      for (std::size_t t = 0; t < L; ++t)
        if (hard.at(t, static_cast<std::size_t>(u.y[t])) != 1.0) stats.text_error += 1.0 / L;
      const auto prompt_len =
          t2s::sample_prompt_length(u.s.size(), cfg.prompt_lo, cfg.prompt_hi, rng);
      const auto pb = t2s::make_prefix_batch(hard, u.s, prompt_len);
      Tensor l_t2s = t2s::loss_t2s(t2s::t2s_forward(t2s, pb), pb);
      stats.l_t2s += l_t2s.item() * inv_b;
      Tensor weighted = ad::scale(l_t2s, cfg.alpha);
      objective = objective.defined() ? ad::add(objective, weighted) : weighted;
    }
    stats.l_asr += losses.total.item() * inv_b;
    stats.l_ce += losses.ce.item() * inv_b;
    stats.l_ctc += losses.ctc.item() * inv_b;
    if (!objective.defined()) continue;
    Tensor scaled = ad::scale(objective, inv_b);
    if (scaled.requires_grad()) scaled.backward();
    stats.l_final += scaled.item();
  }
  stats.text_error *= inv_b;
  stats.utterances = batch.size();
  return stats;
}

}  // namespace tokenchain::chain
