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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tokenchain/corpus.hpp"
#include "tokenchain/trainer.hpp"

namespace tokenchain::acceptance {

struct Outcome {
  int id = 0;
  std::string title;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

Outcome ctc_matches_enumeration();
Outcome gradients_match_finite_differences();
Outcome gumbel_sampling_and_backward();
Outcome dwa_reference_values();
Outcome edit_distance_matches_recursion();
Outcome chain_gradient_flow();

// Toy experiment shared by the directional criteria.
struct ExperimentSettings {
  corpus::CorpusConfig world;
  trainer::TrainConfig base;  // models, optimizer and loss settings of every run
  int pretrain_asr_epochs = 15;
  int pretrain_t2s_epochs = 15;
  int pretrain_dev_limit = 40;
  int chain_epochs = 12;
  std::string adapt_estimator = "st_gumbel";
  std::string adapt_tau = "0.75";
  int s2a_epochs = 40;
  double s2a_lr = 3e-3;
  int s2a_decodes = 1000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::filesystem::path out_dir;
  double budget_seconds = 900.0;

  static ExperimentSettings defaults();
};

struct SeedRuns {
  std::uint64_t seed = 0;
  trainer::RunReport pretrain_asr, pretrain_t2s, baseline, chain_gumbel, chain_argmax, adapt;
};

// Runs (or resumes from out_dir) the pretraining, baseline, chain and
// adaptation runs of every seed.
std::vector<SeedRuns> run_experiments(const ExperimentSettings& s, const corpus::Corpora& data,
                                      std::ostream& log);

Outcome chain_beats_baseline(const ExperimentSettings& s, const std::vector<SeedRuns>& runs);
Outcome adaptation_gain_loss(const ExperimentSettings& s, const std::vector<SeedRuns>& runs);
Outcome t2s_content_robustness(const std::vector<SeedRuns>& runs);
Outcome s2a_accuracy_and_prompts(const ExperimentSettings& s, const corpus::Corpora& data,
                                 std::ostream& log);

double median(std::vector<double> v);

}  // namespace tokenchain::acceptance
