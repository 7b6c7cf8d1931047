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

// ASR -> T2S feedback through straight-through discrete text, the combined
// objective L_ASR + alpha * L_T2S, and the DWA schedule for alpha.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokenchain/asr.hpp"
#include "tokenchain/autodiff.hpp"
#include "tokenchain/corpus.hpp"
#include "tokenchain/random.hpp"
#include "tokenchain/t2s.hpp"

namespace tokenchain::chain {

using ad::Tensor;

enum class Estimator { st_argmax, st_gumbel };
std::string to_string(Estimator e);
// Accepts "argmax", "st_argmax", "gumbel", "st_gumbel".
Estimator estimator_from_string(std::string_view s);

struct TauSchedule {
  enum class Kind { fixed, anneal };
  Kind kind = Kind::fixed;
  double start = 1.0;
  double end = 1.0;
  int epochs = 1;

  static TauSchedule fixed_value(double tau);
  static TauSchedule anneal(double start, double end, int epochs);
  // "1.5" or "anneal:2.0:0.1:10"
  static TauSchedule parse(std::string_view spec);
  std::string to_string() const;
  void validate() const;
  bool operator==(const TauSchedule&) const = default;
};

// Linear from `start` at epoch 1 to `end` at epoch `epochs`, constant after.
double tau_at(const TauSchedule& schedule, int epoch);

struct EstimatorMode {
  Estimator kind = Estimator::st_gumbel;
  TauSchedule tau = TauSchedule::anneal(2.0, 0.1, 10);
};

// One-hot of each row's argmax (lowest index on ties); identity backward into p.
Tensor st_argmax(const Tensor& p);
// Gumbel(0, 1) noise, u clamped into (1e-12, 1 - 1e-12).
std::vector<double> gumbel_noise(std::size_t n, Rng& rng);
// Forward: one-hot argmax of h + g. Backward through softmax((h + g) / tau).
Tensor st_gumbel(const Tensor& h, double tau, std::span<const double> noise);
Tensor st_gumbel(const Tensor& h, double tau, Rng& rng);

struct DwaConfig {
  double alpha_w0 = 1e-3;
  double alpha_w1 = 0.05;
  double alpha_max = 0.5;
  int e_ramp = 6;
  double temperature = 2.0;

  void validate() const;
  bool operator==(const DwaConfig&) const = default;
};

// Epoch-mean losses of completed epochs; index 0 holds epoch 1.
struct DwaState {
  std::vector<double> asr_means;
  std::vector<double> t2s_means;

  int next_epoch() const { return static_cast<int>(asr_means.size()) + 1; }
  void record(double asr_mean, double t2s_mean);
};

// exp(r_t2s / T) / (exp(r_asr / T) + exp(r_t2s / T))
double dwa_target(double r_asr, double r_t2s, double temperature);
double dwa_alpha(int epoch, std::span<const double> asr_means,
                 std::span<const double> t2s_means, const DwaConfig& cfg);
double dwa_alpha(const DwaState& state, const DwaConfig& cfg);

struct ChainStepConfig {
  Estimator estimator = Estimator::st_gumbel;
  double tau = 1.0;          // chain temperature of the pass-through posteriors
  double alpha = 0.0;
  asr::AsrLossCfg asr_loss;
  double prompt_lo = 0.1;
  double prompt_hi = 0.3;
  bool with_t2s = true;      // false: ASR-only step (baseline)
  bool with_asr_loss = true; // false drops L_ASR from the objective (gradient probes)
};

struct StepStats {
  double l_final = 0.0;
  double l_asr = 0.0;
  double l_ce = 0.0;
  double l_ctc = 0.0;
  double l_t2s = 0.0;
  double text_error = 0.0;  // fraction of pass-through rows differing from the reference
  std::size_t utterances = 0;
};

// Accumulates d(mean over batch of L_final)/d(params) into both models'
// gradients. The text fed to T2S has the teacher-forced length L: row t is
// the pass-through of the decoder posterior for y_t.
StepStats chain_step(const asr::AsrModel& asr, const t2s::T2sModel& t2s,
                     std::span<const corpus::Utterance> batch, const ChainStepConfig& cfg,
                     Rng& rng);

}  // namespace tokenchain::chain
