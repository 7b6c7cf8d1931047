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
#include <iosfwd>
#include <string>
#include <vector>

#include "tokenchain/trainer.hpp"

namespace tokenchain::cli {

// One chain-or-baseline run of the experiment suite.
struct SuiteRun {
  std::string name;
  std::string mode = "chain";  // baseline | chain
  std::string estimator = "st_gumbel";
  std::string tau = "anneal:2.0:0.1:10";
};

struct SuiteConfig {
  trainer::TrainConfig train = default_train();
  int pretrain_epochs = 15;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<SuiteRun> runs = default_runs();

  // Model and schedule sizes that keep the default grid within a
  // single-core half hour on a default corpus.
  static trainer::TrainConfig default_train();
  static std::vector<SuiteRun> default_runs();
  void validate() const;
};

// Exit status for an error category; 0 is success, 2 a usage error.
int exit_code(const std::string& category);

// Runs the command line; returns the process exit status.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tokenchain::cli
