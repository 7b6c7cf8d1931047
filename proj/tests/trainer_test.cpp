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

#include "tokenchain/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tokenchain/checkpoint.hpp"
#include "tokenchain/error.hpp"

namespace tokenchain::trainer {
namespace {

namespace fs = std::filesystem;

corpus::CorpusConfig micro_world(double noise = 0.03) {
  corpus::CorpusConfig c;
  c.vocab.text_size = 12;
  c.vocab.semantic_size = 32;
  c.vocab.acoustic_size = 8;
  c.vocab.num_acoustic_layers = 2;
  c.channel.noise = noise;
  c.channel.jitter = noise > 0 ? 0.1 : 0.0;
  c.channel.acoustic_noise = noise > 0 ? 0.02 : 0.0;
  c.min_len = 3;
  c.max_len = 6;
  c.sizes = {200, 48, 16, 16, 48, 16, 16};
  return c;
}

const corpus::Corpora& micro_data() {
  static const corpus::Corpora data = corpus::build_corpora(micro_world());
  return data;
}

TrainConfig micro_config(RunKind kind) {
  TrainConfig c;
  c.kind = kind;
  c.epochs = 3;
  c.batch_size = 8;
  c.warmup = 10;
  c.lr = 3e-3;
  c.chain_asr_lr = 2e-3;
  c.tau = "anneal:1.5:0.5:3";
  c.early_stopping = false;
  auto& m = c.models;
  m.asr.text_size = m.t2s.text_size = 12;
  m.asr.semantic_size = m.t2s.semantic_size = m.s2a.semantic_size = 32;
  m.asr.d_model = m.t2s.d_model = m.s2a.d_model = 32;
  m.asr.ffn = m.t2s.ffn = m.s2a.ffn = 64;
  m.asr.enc_layers = m.asr.dec_layers = 1;
  m.t2s.layers = 1;
  m.s2a.blocks = 1;
  m.s2a.acoustic_size = 8;
  m.s2a.num_layers = 3;
  m.asr.max_len = m.t2s.max_len = m.s2a.max_len = 64;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tokenchain_trainer_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Pretrained ASR and T2S checkpoints shared by the chain tests.
const std::vector<fs::path>& pretrained() {
  static const std::vector<fs::path> paths = [] {
    const fs::path dir = scratch("pretrained");
    std::vector<fs::path> out;
    for (RunKind k : {RunKind::pretrain_asr, RunKind::pretrain_t2s}) {
      auto cfg = micro_config(k);
      cfg.epochs = 8;
      RunOptions opt;
      opt.out_dir = dir / to_string(k);
      run(cfg, micro_data(), opt);
      out.push_back(opt.out_dir / "last.ckpt");
    }
    return out;
  }();
  return paths;
}

TEST(LrSchedule, WarmupThenInverseSqrt) {
  EXPECT_DOUBLE_EQ(lr_at(1, 1e-3, 100), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(50, 1e-3, 100), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, 1e-3, 100), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(400, 1e-3, 100), 5e-4);
  EXPECT_THROW(lr_at(0, 1e-3, 100), ParameterError);
}

TEST(EarlyStoppingTest, StopsAfterPatienceEpochsWithoutImprovement) {
  EarlyStopping s(3);
  EXPECT_FALSE(s.update(1, 0.5));
  EXPECT_FALSE(s.update(2, 0.4));
  EXPECT_FALSE(s.update(3, 0.4));
  EXPECT_FALSE(s.update(4, 0.45));
  EXPECT_TRUE(s.update(5, 0.41));
  EXPECT_EQ(s.best_epoch(), 2);
  EXPECT_DOUBLE_EQ(s.best(), 0.4);
}

TEST(TrainConfigTest, JsonRoundTripAndValidation) {
  auto c = micro_config(RunKind::chain);
  c.track_splits = {"chain_test"};
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(trajectory_hash(back), trajectory_hash(c));
  auto longer = c;
  longer.epochs = 30;
  EXPECT_EQ(trajectory_hash(longer), trajectory_hash(c));
  auto other = c;
  other.lr = 0.5;
  EXPECT_NE(trajectory_hash(other), trajectory_hash(c));

  auto bad = c;
  bad.tau = "anneal:0.1:2:3";
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.estimator = "softmax";
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.models.t2s.text_size = 13;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(run_kind_from_string("finetune"), ConfigError);
  EXPECT_EQ(run_kind_from_string("pretrain_t2s"), RunKind::pretrain_t2s);
}

TEST(Trainer, RunsAreDeterministic) {
  const auto cfg = micro_config(RunKind::pretrain_asr);
  RunState a = init_state(cfg), b = init_state(cfg);
  const auto ra = run(cfg, micro_data(), a);
  const auto rb = run(cfg, micro_data(), b);
  EXPECT_TRUE(a.asr->params().same_values(b.asr->params()));
  ASSERT_EQ(ra.epochs.size(), 3u);
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].l_asr, rb.epochs[i].l_asr);
    EXPECT_EQ(ra.epochs[i].dev, rb.epochs[i].dev);
  }
}

TEST(Trainer, ResumedChainRunMatchesUninterruptedRun) {
  auto cfg = micro_config(RunKind::chain);
  cfg.epochs = 4;
  RunOptions whole;
  whole.resume = pretrained();
  RunState full = init_state(cfg);
  apply_resume(full, cfg, whole.resume);
  const auto full_report = run(cfg, micro_data(), full, whole);

  const fs::path dir = scratch("resume");
  RunOptions first = whole;
  first.out_dir = dir;
  first.stop_after_epochs = 2;
  const auto partial = run(cfg, micro_data(), first);
  EXPECT_EQ(partial.epochs.size(), 2u);

  RunOptions second;
  second.out_dir = dir;
  second.resume = {dir / "last.ckpt"};
  RunState resumed = init_state(cfg);
  apply_resume(resumed, cfg, second.resume);
  EXPECT_EQ(resumed.epochs_done, 2);
  const auto resumed_report = run(cfg, micro_data(), resumed, second);

  EXPECT_TRUE(full.asr->params().same_values(resumed.asr->params()));
  EXPECT_TRUE(full.t2s->params().same_values(resumed.t2s->params()));
  ASSERT_EQ(resumed_report.epochs.size(), 4u);
  for (int e = 0; e < 4; ++e) {
    EXPECT_EQ(full_report.epochs[e].alpha, resumed_report.epochs[e].alpha);
    EXPECT_EQ(full_report.epochs[e].l_t2s, resumed_report.epochs[e].l_t2s);
  }
  EXPECT_EQ(full_report.final_scores, resumed_report.final_scores);

  std::ifstream steps(dir / "steps.csv");
  std::string line;
  int rows = -1;
  while (std::getline(steps, line)) ++rows;
  EXPECT_EQ(rows, 4 * 6);
}

TEST(Trainer, CheckpointRoundTrip) {
  auto cfg = micro_config(RunKind::chain);
  cfg.epochs = 1;
  RunState st = init_state(cfg);
  apply_resume(st, cfg, pretrained());
  run(cfg, micro_data(), st);
  const fs::path path = scratch("roundtrip") / "run.ckpt";
  save_checkpoint(path, cfg, st);
  RunState back = init_state(cfg);
  load_checkpoint(path, cfg, back);
  EXPECT_TRUE(back.asr->params().same_values(st.asr->params()));
  EXPECT_TRUE(back.t2s->params().same_values(st.t2s->params()));
  EXPECT_EQ(back.asr_opt.steps(), st.asr_opt.steps());
  EXPECT_EQ(back.steps, st.steps);
  EXPECT_EQ(back.dwa_train_steps.asr_means, st.dwa_train_steps.asr_means);
  EXPECT_EQ(report_to_json(back.report), report_to_json(st.report));
}

TEST(Trainer, ResumeErrors) {
  auto cfg = micro_config(RunKind::chain);
  EXPECT_THROW(run(cfg, micro_data()), ResumeError);
  RunOptions only_asr;
  only_asr.resume = {pretrained()[0]};
  EXPECT_THROW(run(cfg, micro_data(), only_asr), ResumeError);
  RunOptions missing;
  missing.resume = {scratch("missing") / "nope.ckpt"};
  EXPECT_THROW(run(cfg, micro_data(), missing), ResumeError);
  auto wider = cfg;
  wider.models.asr.d_model = 24;
  RunOptions both;
  both.resume = pretrained();
  EXPECT_THROW(run(wider, micro_data(), both), ResumeError);

  RunState st = init_state(cfg);
  const fs::path path = scratch("mismatch") / "run.ckpt";
  save_checkpoint(path, cfg, st);
  auto other = cfg;
  other.lr = 0.01;
  RunState target = init_state(other);
  EXPECT_THROW(load_checkpoint(path, other, target), ResumeError);
}

TEST(Trainer, NonFiniteParametersRaiseDivergence) {
  const auto cfg = micro_config(RunKind::pretrain_asr);
  RunState st = init_state(cfg);
  for (double& v : st.asr->params().find("ctc.w").mutable_data()) v = std::nan("");
  try {
    run(cfg, micro_data(), st);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Trainer, RecordedAlphaMatchesOfflineDwa) {
  auto cfg = micro_config(RunKind::chain);
  cfg.epochs = 5;
  cfg.dwa.e_ramp = 4;
  RunOptions opt;
  opt.resume = pretrained();
  const auto r = run(cfg, micro_data(), opt);
  std::vector<double> asr_means, t2s_means;
  for (const auto& e : r.epochs) {
    EXPECT_DOUBLE_EQ(e.alpha, chain::dwa_alpha(e.epoch, asr_means, t2s_means, cfg.dwa));
    asr_means.push_back(e.l_asr);
    t2s_means.push_back(e.l_t2s);
  }
  EXPECT_EQ(r.epochs[0].alpha, cfg.dwa.alpha_w0);
  EXPECT_EQ(r.epochs[1].alpha, cfg.dwa.alpha_w1);
  EXPECT_LE(r.epochs[2].alpha, 0.5);
}

TEST(Trainer, ChainWithZeroAlphaEqualsBaseline) {
  auto base_cfg = micro_config(RunKind::baseline);
  auto chain_cfg = micro_config(RunKind::chain);
  chain_cfg.alpha = 0.0;
  RunOptions opt;
  opt.resume = pretrained();
  RunState base = init_state(base_cfg), chained = init_state(chain_cfg);
  apply_resume(base, base_cfg, opt.resume);
  apply_resume(chained, chain_cfg, opt.resume);
  const auto rb = run(base_cfg, micro_data(), base);
  const auto rc = run(chain_cfg, micro_data(), chained);
  EXPECT_TRUE(base.asr->params().same_values(chained.asr->params()));
  for (std::size_t e = 0; e < rb.epochs.size(); ++e) {
    EXPECT_EQ(rb.epochs[e].l_asr, rc.epochs[e].l_asr);
    EXPECT_EQ(rb.epochs[e].dev.at("chain_dev").wer, rc.epochs[e].dev.at("chain_dev").wer);
  }
}

TEST(Trainer, PretrainReachesHighAccuracyOnNoiselessData) {
  auto world = micro_world(0.0);
  world.sizes.pretrain = 500;
  world.sizes.chain_dev = 64;
  const auto data = corpus::build_corpora(world);
  auto cfg = micro_config(RunKind::pretrain_asr);
  cfg.epochs = 30;
  cfg.early_stopping = true;
  cfg.patience = 30;
  cfg.train_split = "pretrain";
  cfg.eval_splits = {"chain_dev"};
  const auto r = run(cfg, data);
  double best = 1.0;
  for (const auto& e : r.epochs) best = std::min(best, e.dev.at("chain_dev").wer);
  EXPECT_LT(best, 0.05);
}

TEST(Trainer, FrozenT2sChainReducesT2sLoss) {
  auto cfg = micro_config(RunKind::chain);
  cfg.freeze_t2s = true;
  cfg.alpha = 0.5;
  cfg.epochs = 34;  // 6 steps per epoch, about 200 steps
  RunOptions opt;
  opt.resume = pretrained();
  RunState st = init_state(cfg);
  apply_resume(st, cfg, opt.resume);
  const auto t2s_before = st.t2s->clone();
  const auto r = run(cfg, micro_data(), st);
  EXPECT_TRUE(t2s_before.params().same_values(st.t2s->params()));
  const auto mean3 = [&](std::size_t from) {
    return (r.epochs[from].l_t2s + r.epochs[from + 1].l_t2s + r.epochs[from + 2].l_t2s) / 3.0;
  };
  EXPECT_LT(mean3(r.epochs.size() - 3), mean3(0));
}

TEST(Trainer, ReportsRoundTripAndCsv) {
  auto cfg = micro_config(RunKind::pretrain_t2s);
  cfg.epochs = 2;
  const fs::path dir = scratch("report");
  RunOptions opt;
  opt.out_dir = dir;
  opt.name = "t2s-pre";
  const auto r = run(cfg, micro_data(), opt);
  const auto back = read_report(dir);
  EXPECT_EQ(report_to_json(back), report_to_json(r));
  EXPECT_EQ(back.dev_curve("chain_dev").size(), 2u);
  EXPECT_GE(back.final_scores.at("chain_dev").t2s_wer, 0.0);
  const auto csv = report_csv(r);
  EXPECT_NE(csv.find("chain_dev_t2s_wer"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_THROW(back.dev_curve("shifted_dev"), InputError);
  EXPECT_THROW(read_report(scratch("empty")), PrerequisiteError);
}

TEST(Trainer, S2aRunReportsAccuracy) {
  auto cfg = micro_config(RunKind::s2a);
  cfg.epochs = 2;
  const auto r = run(cfg, micro_data());
  const auto& s = r.final_scores.at("chain_dev");
  EXPECT_GE(s.s2a_accuracy, 0.0);
  EXPECT_LE(s.s2a_accuracy, 1.0);
  EXPECT_GT(s.s2a_majority, 0.0);
  EXPECT_GT(r.epochs[0].l_s2a, 0.0);
}

}  // namespace
}  // namespace tokenchain::trainer
