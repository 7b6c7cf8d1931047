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

// Training regimes (pretraining, baseline and chain fine-tuning, domain
// adaptation, S2A), the inverse-sqrt schedule, early stopping, checkpoints
// and run reports.

#include <filesystem>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokenchain/asr.hpp"
#include "tokenchain/chain.hpp"
#include "tokenchain/corpus.hpp"
#include "tokenchain/metrics.hpp"
#include "tokenchain/nn.hpp"
#include "tokenchain/s2a.hpp"
#include "tokenchain/t2s.hpp"

namespace tokenchain::trainer {

enum class RunKind { pretrain_asr, pretrain_t2s, baseline, chain, adapt, s2a };
std::string to_string(RunKind k);
RunKind run_kind_from_string(const std::string& s);

struct ModelConfigs {
  asr::AsrConfig asr;
  t2s::T2sConfig t2s;
  s2a::S2aConfig s2a;
};

struct TrainConfig {
  RunKind kind = RunKind::chain;
  int epochs = 12;
  int batch_size = 16;
  double lr = 1e-3;
  double chain_asr_lr = 5e-4;  // ASR base LR for chain and adapt runs
  int warmup = 200;
  int patience = 3;
  bool early_stopping = true;
  std::string estimator = "st_gumbel";
  std::string tau = "anneal:2.0:0.1:10";
  double alpha = -1.0;  // >= 0 pins the chain weight; otherwise DWA
  chain::DwaConfig dwa;
  std::string dwa_source = "train";   // train | dev
  std::string dwa_average = "steps";  // steps | utterances
  double eta = 0.3;
  double label_smoothing = 0.0;
  double ce_tau = 1.0;
  double prompt_lo = 0.1;
  double prompt_hi = 0.3;
  bool freeze_t2s = false;
  double cfg_drop = 0.15;
  int s2a_decode_steps = 4;
  int dev_limit = 0;  // dev utterances scored per epoch, 0 = all
  bool eval_t2s_each_epoch = false;
  std::string train_split;                // empty: default for the kind
  std::string dev_split;                  // empty: default for the kind
  std::vector<std::string> track_splits;  // extra splits scored every epoch
  std::vector<std::string> eval_splits;   // empty: every non-empty dev/test split
  std::uint64_t seed = 1;
  nn::AdamWConfig adamw;
  ModelConfigs models;

  void validate() const;
  std::string resolved_train_split() const;
  std::string resolved_dev_split() const;
  bool trains_asr() const;
  bool trains_t2s() const;
  bool uses_asr() const;
  bool uses_t2s() const;
};

double lr_at(long long step, double base_lr, int warmup);

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience = 3);
  // Returns true when training should stop after this epoch.
  bool update(int epoch, double metric);
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  int bad_epochs() const { return bad_; }
  void restore(double best, int best_epoch, int bad);

 private:
  int patience_;
  double best_;
  int best_epoch_ = 0;
  int bad_ = 0;
};

struct SplitScores {
  double wer = -1.0;      // ASR token error rate
  double cer = -1.0;      // ASR character error rate
  double t2s_wer = -1.0;  // channel-inversion content WER of T2S output
  double s2a_accuracy = -1.0;
  double s2a_majority = -1.0;
  long ref_tokens = 0;
  bool operator==(const SplitScores&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  long long step = 0;  // optimizer steps taken in this run so far
  double l_asr = 0.0;  // means over optimizer steps
  double l_t2s = 0.0;
  double l_final = 0.0;
  double l_ce = 0.0;
  double l_ctc = 0.0;
  double l_s2a = 0.0;
  double l_asr_utt = 0.0;  // means over utterances
  double l_t2s_utt = 0.0;
  double alpha = 0.0;
  double tau = 0.0;
  double text_error = 0.0;  // pass-through rows differing from the reference
  double lr = 0.0;
  std::map<std::string, SplitScores> dev;
  double seconds = 0.0;
};

struct RunReport {
  std::string name;
  RunKind kind = RunKind::chain;
  std::string estimator;
  std::string tau;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
  std::map<std::string, SplitScores> final_scores;
  // Scores of the starting checkpoint (runs that resume pretrained models).
  std::map<std::string, SplitScores> initial_scores;
  double wall_seconds = 0.0;

  // Primary dev metric per epoch (dev WER, T2S WER or S2A error).
  std::vector<double> dev_curve(const std::string& split) const;
};

struct StepRecord {
  int epoch = 0;
  long long step = 0;
  double l_asr = 0.0;
  double l_t2s = 0.0;
  double alpha = 0.0;
  double tau = 0.0;
  std::string estimator;
};

// Everything needed to continue a run bit-exactly.
struct RunState {
  std::optional<asr::AsrModel> asr;
  std::optional<t2s::T2sModel> t2s;
  std::optional<s2a::S2aModel> s2a;
  nn::AdamW asr_opt, t2s_opt, s2a_opt;
  int epochs_done = 0;
  long long steps = 0;
  chain::DwaState dwa_train_steps, dwa_train_utts, dwa_dev;
  EarlyStopping stopper;
  bool stopped = false;
  RunReport report;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::string name;
  // Checkpoints to start from: pretrained models (their optimizer state and
  // step count are kept) or an unfinished run of the same configuration.
  std::vector<std::filesystem::path> resume;
  int stop_after_epochs = 0;  // > 0: pause after this many epochs in total
  bool quiet = true;
};

// Fresh state for `cfg`: models the run needs, initialised from the run seed.
RunState init_state(const TrainConfig& cfg);
// Applies checkpoints to a fresh state per RunOptions::resume semantics.
void apply_resume(RunState& state, const TrainConfig& cfg,
                  const std::vector<std::filesystem::path>& paths);

RunReport run(const TrainConfig& cfg, const corpus::Corpora& data, RunState& state,
              const RunOptions& opt = {});
RunReport run(const TrainConfig& cfg, const corpus::Corpora& data, const RunOptions& opt = {});

// Scores every model present in `state` on one split.
SplitScores evaluate_split(const TrainConfig& cfg, const RunState& state,
                           const corpus::Corpora& data, const std::string& split, int limit,
                           bool with_t2s);

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                     const RunState& state);
// Rebuilds every model stored in `paths` (later files win) for evaluation;
// `cfg` receives the first checkpoint's run configuration and the loaded
// model configurations.
RunState state_from_checkpoints(const std::vector<std::filesystem::path>& paths, TrainConfig& cfg);
// Loads a checkpoint written for exactly this configuration.
void load_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, RunState& state);

nlohmann::json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j);
void write_report(const std::filesystem::path& dir, const RunReport& r);
RunReport read_report(const std::filesystem::path& dir);
std::string report_csv(const RunReport& r);
std::string steps_csv(const std::vector<StepRecord>& steps);

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
// Hash of the fields that define a run's trajectory (epochs and eval-only
// fields excluded, so a run may be extended).
std::string trajectory_hash(const TrainConfig& cfg);

}  // namespace tokenchain::trainer
