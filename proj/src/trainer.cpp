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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "tokenchain/checkpoint.hpp"
#include "tokenchain/error.hpp"
#include "tokenchain/serialization.hpp"

namespace tokenchain::trainer {

using ad::Tensor;
using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(RunKind k) { return json(k).get<std::string>(); }

RunKind run_kind_from_string(const std::string& s) {
  for (RunKind k : {RunKind::pretrain_asr, RunKind::pretrain_t2s, RunKind::baseline, RunKind::chain,
                    RunKind::adapt, RunKind::s2a})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown run kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configuration

bool TrainConfig::trains_asr() const {
  return kind == RunKind::pretrain_asr || kind == RunKind::baseline || kind == RunKind::chain ||
         kind == RunKind::adapt;
}
bool TrainConfig::trains_t2s() const {
  return kind == RunKind::pretrain_t2s ||
         ((kind == RunKind::chain || kind == RunKind::adapt) && !freeze_t2s);
}
bool TrainConfig::uses_asr() const { return trains_asr(); }
bool TrainConfig::uses_t2s() const {
  return kind == RunKind::pretrain_t2s || kind == RunKind::chain || kind == RunKind::adapt;
}

std::string TrainConfig::resolved_train_split() const {
  if (!train_split.empty()) return train_split;
  switch (kind) {
    case RunKind::baseline:
    case RunKind::chain:
      return "chain_train";
    case RunKind::adapt:
      return "shifted_train";
    default:
      return "pretrain";
  }
}

std::string TrainConfig::resolved_dev_split() const {
  if (!dev_split.empty()) return dev_split;
  return kind == RunKind::adapt ? "shifted_dev" : "chain_dev";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr > 0.0) || !(chain_asr_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (warmup < 1) throw ConfigError("warm-up must be at least one step");
  chain::estimator_from_string(estimator);
  chain::TauSchedule::parse(tau);
  dwa.validate();
  if (alpha > 1.0) throw ConfigError("alpha must not exceed 1");
  if (dwa_source != "train" && dwa_source != "dev")
    throw ConfigError("dwa_source must be 'train' or 'dev'");
  if (dwa_average != "steps" && dwa_average != "utterances")
    throw ConfigError("dwa_average must be 'steps' or 'utterances'");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("eta must lie in [0, 1]");
  if (!(ce_tau > 0.0)) throw ConfigError("ce_tau must be positive");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw ConfigError("label smoothing must lie in [0, 1)");
  if (!(prompt_lo >= 0.0 && prompt_lo <= prompt_hi && prompt_hi < 1.0))
    throw ConfigError("prompt fractions must satisfy 0 <= lo <= hi < 1");
  if (cfg_drop < 0.0 || cfg_drop >= 1.0) throw ConfigError("cfg_drop must lie in [0, 1)");
  if (s2a_decode_steps < 1) throw ConfigError("s2a_decode_steps must be at least 1");
  if (dev_limit < 0) throw ConfigError("dev_limit must be non-negative");
  models.asr.validate();
  models.t2s.validate();
  models.s2a.validate();
  if (models.asr.text_size != models.t2s.text_size ||
      models.asr.semantic_size != models.t2s.semantic_size ||
      models.s2a.semantic_size != models.asr.semantic_size)
    throw ConfigError("model vocabularies disagree");
}

json config_to_json(const TrainConfig& cfg) { return cfg; }

TrainConfig config_from_json(const json& j) {
  try {
    return j.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad configuration: ") + e.what());
  }
}

std::string trajectory_hash(const TrainConfig& cfg) {
  json j = cfg;
  for (const char* k :
       {"epochs", "eval_splits", "track_splits", "dev_limit", "eval_t2s_each_epoch"})
    j.erase(k);
  return checkpoint::config_hash(j);
}

namespace {

template <typename Config>
std::string architecture_hash(const Config& c) {
  json j = c;
  j.erase("seed");
  return checkpoint::config_hash(j);
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule and early stopping

double lr_at(long long step, double base_lr, int warmup) {
  if (step < 1) throw ParameterError("steps are numbered from 1");
  if (warmup < 1) throw ParameterError("warm-up must be at least one step");
  const double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return base_lr * std::min(s / w, std::sqrt(w / s));
}

EarlyStopping::EarlyStopping(int patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw ParameterError("patience must be at least 1");
}

bool EarlyStopping::update(int epoch, double metric) {
  if (metric < best_) {
    best_ = metric;
    best_epoch_ = epoch;
    bad_ = 0;
  } else {
    ++bad_;
  }
  return bad_ >= patience_;
}

void EarlyStopping::restore(double best, int best_epoch, int bad) {
  best_ = best;
  best_epoch_ = best_epoch;
  bad_ = bad;
}

std::vector<double> RunReport::dev_curve(const std::string& split) const {
  std::vector<double> out;
  for (const auto& e : epochs) {
    const auto it = e.dev.find(split);
    if (it == e.dev.end()) throw InputError("split " + split + " not tracked in run " + name);
    const auto& s = it->second;
    if (kind == RunKind::pretrain_t2s)
      out.push_back(s.t2s_wer);
    else if (kind == RunKind::s2a)
      out.push_back(1.0 - s.s2a_accuracy);
    else
      out.push_back(s.wer);
  }
  return out;
}

// ---------------------------------------------------------------------------
// State, checkpoints

RunState init_state(const TrainConfig& cfg) {
  cfg.validate();
  RunState st;
  st.stopper = EarlyStopping(cfg.patience);
  if (cfg.uses_asr()) {
    auto c = cfg.models.asr;
    c.seed = derive_seed({cfg.seed, c.seed, 0xa});
    st.asr.emplace(c);
  }
  if (cfg.uses_t2s()) {
    auto c = cfg.models.t2s;
    c.seed = derive_seed({cfg.seed, c.seed, 0x7});
    st.t2s.emplace(c);
  }
  if (cfg.kind == RunKind::s2a) {
    auto c = cfg.models.s2a;
    c.seed = derive_seed({cfg.seed, c.seed, 0x5});
    st.s2a.emplace(c);
  }
  st.asr_opt = nn::AdamW(cfg.adamw);
  st.t2s_opt = nn::AdamW(cfg.adamw);
  st.s2a_opt = nn::AdamW(cfg.adamw);
  return st;
}

namespace {

template <typename Model, typename Config>
json model_entry(const Model& m, const Config& arch, const nn::AdamW& opt) {
  return {{"config", arch},
          {"config_hash", architecture_hash(arch)},
          {"params", checkpoint::params_to_json(m.params())},
          {"optimizer", checkpoint::optimizer_to_json(opt)}};
}

template <typename Model, typename Config>
void load_model_entry(const json& entry, const Config& arch, Model& m, nn::AdamW& opt,
                      const std::string& what, const fs::path& path) {
  const auto expected = architecture_hash(arch);
  const auto found = entry.at("config_hash").get<std::string>();
  if (found != expected)
    throw ResumeError(path.string() + ": " + what + " configuration hash " + found +
                      " does not match the run's " + expected);
  checkpoint::params_from_json(entry.at("params"), m.params());
  checkpoint::optimizer_from_json(entry.at("optimizer"), opt, m.params());
}

json state_json(const RunState& st) {
  return {{"epochs_done", st.epochs_done},
          {"steps", st.steps},
          {"dwa_train_steps", st.dwa_train_steps},
          {"dwa_train_utts", st.dwa_train_utts},
          {"dwa_dev", st.dwa_dev},
          {"best", st.stopper.best_epoch() > 0 ? json(st.stopper.best()) : json(nullptr)},
          {"best_epoch", st.stopper.best_epoch()},
          {"bad_epochs", st.stopper.bad_epochs()},
          {"stopped", st.stopped},
          {"report", st.report}};
}

json read_checkpoint(const fs::path& path) {
  json j;
  try {
    j = checkpoint::read_json(path, "tokenchain pretrain");
  } catch (const PrerequisiteError& e) {
    throw ResumeError(e.what());
  }
  if (j.value("format", "") != checkpoint::kFormatName)
    throw ResumeError(path.string() + " is not a tokenchain checkpoint");
  if (j.value("version", 0) != checkpoint::kFormatVersion)
    throw ResumeError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(j.value("version", 0)));
  return j;
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainConfig& cfg, const RunState& st) {
  json models = json::object();
  if (st.asr) models["asr"] = model_entry(*st.asr, cfg.models.asr, st.asr_opt);
  if (st.t2s) models["t2s"] = model_entry(*st.t2s, cfg.models.t2s, st.t2s_opt);
  if (st.s2a) models["s2a"] = model_entry(*st.s2a, cfg.models.s2a, st.s2a_opt);
  json j = {{"format", checkpoint::kFormatName},
            {"version", checkpoint::kFormatVersion},
            {"kind", cfg.kind},
            {"train_config", cfg},
            {"trajectory_hash", trajectory_hash(cfg)},
            {"models", models},
            {"state", state_json(st)}};
  checkpoint::write_json(path, j);
}

void load_checkpoint(const fs::path& path, const TrainConfig& cfg, RunState& st) {
  const json j = read_checkpoint(path);
  if (j.at("trajectory_hash").get<std::string>() != trajectory_hash(cfg))
    throw ResumeError(path.string() + ": checkpoint was written for a different run configuration");
  try {
    const auto& models = j.at("models");
    if (st.asr)
      load_model_entry(models.at("asr"), cfg.models.asr, *st.asr, st.asr_opt, "ASR", path);
    if (st.t2s)
      load_model_entry(models.at("t2s"), cfg.models.t2s, *st.t2s, st.t2s_opt, "T2S", path);
    if (st.s2a)
      load_model_entry(models.at("s2a"), cfg.models.s2a, *st.s2a, st.s2a_opt, "S2A", path);
    const auto& s = j.at("state");
    st.epochs_done = s.at("epochs_done").get<int>();
    st.steps = s.at("steps").get<long long>();
    st.dwa_train_steps = s.at("dwa_train_steps").get<chain::DwaState>();
    st.dwa_train_utts = s.at("dwa_train_utts").get<chain::DwaState>();
    st.dwa_dev = s.at("dwa_dev").get<chain::DwaState>();
    st.stopper = EarlyStopping(cfg.patience);
    const double best = s.at("best").is_null() ? std::numeric_limits<double>::infinity()
                                               : s.at("best").get<double>();
    st.stopper.restore(best, s.at("best_epoch").get<int>(), s.at("bad_epochs").get<int>());
    st.stopped = s.at("stopped").get<bool>();
    st.report = s.at("report").get<RunReport>();
  } catch (const json::exception& e) {
    throw ResumeError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

RunState state_from_checkpoints(const std::vector<fs::path>& paths, TrainConfig& cfg) {
  if (paths.empty()) throw InputError("no checkpoint given");
  RunState st;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const json j = read_checkpoint(paths[i]);
    try {
      if (i == 0) cfg = j.at("train_config").get<TrainConfig>();
      const auto& models = j.at("models");
      if (models.contains("asr")) {
        cfg.models.asr = models["asr"].at("config").get<asr::AsrConfig>();
        st.asr.emplace(cfg.models.asr);
        load_model_entry(models["asr"], cfg.models.asr, *st.asr, st.asr_opt, "ASR", paths[i]);
      }
      if (models.contains("t2s")) {
        cfg.models.t2s = models["t2s"].at("config").get<t2s::T2sConfig>();
        st.t2s.emplace(cfg.models.t2s);
        load_model_entry(models["t2s"], cfg.models.t2s, *st.t2s, st.t2s_opt, "T2S", paths[i]);
      }
      if (models.contains("s2a")) {
        cfg.models.s2a = models["s2a"].at("config").get<s2a::S2aConfig>();
        st.s2a.emplace(cfg.models.s2a);
        load_model_entry(models["s2a"], cfg.models.s2a, *st.s2a, st.s2a_opt, "S2A", paths[i]);
      }
    } catch (const json::exception& e) {
      throw ResumeError(paths[i].string() + ": malformed checkpoint: " + e.what());
    }
  }
  return st;
}

void apply_resume(RunState& st, const TrainConfig& cfg, const std::vector<fs::path>& paths) {
  bool have_asr = false, have_t2s = false, have_s2a = false;
  for (const auto& path : paths) {
    const json j = read_checkpoint(path);
    if (j.at("kind").get<RunKind>() == cfg.kind &&
        j.at("trajectory_hash").get<std::string>() == trajectory_hash(cfg)) {
      load_checkpoint(path, cfg, st);
      return;
    }
    const auto& models = j.at("models");
    if (st.asr && models.contains("asr")) {
      load_model_entry(models["asr"], cfg.models.asr, *st.asr, st.asr_opt, "ASR", path);
      have_asr = true;
    }
    if (st.t2s && models.contains("t2s")) {
      load_model_entry(models["t2s"], cfg.models.t2s, *st.t2s, st.t2s_opt, "T2S", path);
      have_t2s = true;
    }
    if (st.s2a && models.contains("s2a")) {
      load_model_entry(models["s2a"], cfg.models.s2a, *st.s2a, st.s2a_opt, "S2A", path);
      have_s2a = true;
    }
  }
  (void)have_s2a;
  const bool resume_kind =
      cfg.kind == RunKind::baseline || cfg.kind == RunKind::chain || cfg.kind == RunKind::adapt;
  if (resume_kind && !have_asr)
    throw ResumeError(
        to_string(cfg.kind) +
        " needs a pretrained ASR checkpoint; run `tokenchain pretrain --model asr` first");
  if (resume_kind && st.t2s && !have_t2s)
    throw ResumeError(
        to_string(cfg.kind) +
        " needs a pretrained T2S checkpoint; run `tokenchain pretrain --model t2s` first");
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::size_t eval_prompt_len(const TrainConfig& cfg, std::size_t T) {
  if (T == 0) return 0;
  const double mid = 0.5 * (cfg.prompt_lo + cfg.prompt_hi);
  return std::min(static_cast<std::size_t>(std::llround(mid * static_cast<double>(T))), T - 1);
}

std::uint64_t name_salt(const std::string& s) {
  std::uint64_t h = 0;
  for (unsigned char c : s) h = mix64(h ^ c);
  return h;
}

}  // namespace

SplitScores evaluate_split(const TrainConfig& cfg, const RunState& st, const corpus::Corpora& data,
                           const std::string& split, int limit, bool with_t2s) {
  const auto& all = data.split(split);
  const std::size_t n =
      limit > 0 ? std::min(all.size(), static_cast<std::size_t>(limit)) : all.size();
  const std::span<const corpus::Utterance> utts(all.data(), n);
  SplitScores out;
  if (n == 0) return out;
  ad::NoGradGuard guard;
  if (st.asr) {
    metrics::ErrorReport wer, cer;
    for (const auto& u : utts) {
      const auto hyp = asr::decode_greedy(*st.asr, u.s);
      wer += metrics::edit_distance(u.y, hyp);
      cer += metrics::character_errors(data.vocab, u.y, hyp);
    }
    out.wer = wer.rate;
    out.cer = cer.rate;
    out.ref_tokens = wer.ref_len;
  }
  if (st.t2s && with_t2s) {
    metrics::ErrorReport content;
    Rng rng(derive_seed({cfg.seed, name_salt(split), 0x75}));
    for (const auto& u : utts) {
      const std::size_t P = eval_prompt_len(cfg, u.s.size());
      std::vector<int> s(u.s.begin(), u.s.begin() + static_cast<long>(P));
      t2s::GenerateOptions opt;
      opt.max_len = 2 * (u.s.size() - P) + 4;
      const auto gen = t2s::generate(*st.t2s, u.y, s, opt, rng);
      s.insert(s.end(), gen.begin(), gen.end());
      content += metrics::t2s_content_wer(s, u.y, data.channel_for(u.domain));
    }
    out.t2s_wer = content.rate;
    if (!st.asr) out.ref_tokens = content.ref_len;
  }
  if (st.s2a) {
    Rng rng(derive_seed({cfg.seed, name_salt(split), 0x5a}));
    const auto acc =
        s2a::masked_accuracy(*st.s2a, utts, data.pretrain, cfg.prompt_lo, cfg.prompt_hi, rng);
    out.s2a_accuracy = acc.model;
    out.s2a_majority = acc.majority;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

double primary_metric(RunKind kind, const SplitScores& s) {
  if (kind == RunKind::pretrain_t2s) return s.t2s_wer;
  if (kind == RunKind::s2a) return 1.0 - s.s2a_accuracy;
  return s.wer;
}

void check_finite(double v, const char* what, int epoch, long long step) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite ") + what + " at epoch " + std::to_string(epoch) +
                          ", step " + std::to_string(step));
}

double optimizer_step(nn::AdamW& opt, nn::ParamSet& ps, double base_lr, int warmup, int epoch,
                      long long step) {
  const double lr = lr_at(opt.steps() + 1, base_lr, warmup);
  try {
    opt.step(ps, lr);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(step));
  }
  return lr;
}

// Dev-set losses for the DWA validation switch.
std::pair<double, double> dev_losses(const TrainConfig& cfg, const RunState& st,
                                     const corpus::Split& dev, double tau) {
  ad::NoGradGuard guard;
  double la = 0.0, lt = 0.0;
  asr::AsrLossCfg lc{cfg.eta, cfg.label_smoothing, cfg.ce_tau};
  std::size_t n = 0;
  for (const auto& u : dev) {
    if (u.y.empty()) continue;
    auto l = asr::asr_losses(*st.asr, u, lc);
    la += l.total.item();
    Tensor rows = ad::slice_rows(l.outputs.dec_logits, 0, u.y.size());
    Tensor hard = chain::st_argmax(ad::softmax_temp(rows, tau));
    const auto pb = t2s::make_prefix_batch(hard, u.s, eval_prompt_len(cfg, u.s.size()));
    lt += t2s::loss_t2s(t2s::t2s_forward(*st.t2s, pb), pb).item();
    ++n;
  }
  return {la / static_cast<double>(n), lt / static_cast<double>(n)};
}

std::vector<std::string> scored_splits(const TrainConfig& cfg, const corpus::Corpora& data) {
  if (!cfg.eval_splits.empty()) return cfg.eval_splits;
  std::vector<std::string> out;
  for (const auto& name : corpus::split_names())
    if ((name.ends_with("_dev") || name.ends_with("_test")) && !data.split(name).empty())
      out.push_back(name);
  return out;
}

void append_steps(const fs::path& path, const std::vector<StepRecord>& steps, bool header) {
  std::ofstream out(path, header ? std::ios::trunc : std::ios::app);
  const std::string csv = steps_csv(steps);
  out << (header ? csv : csv.substr(csv.find('\n') + 1));
}

}  // namespace

RunReport run(const TrainConfig& cfg, const corpus::Corpora& data, RunState& st,
              const RunOptions& opt) {
  cfg.validate();
  const auto wall_start = std::chrono::steady_clock::now();
  const auto& train = data.split(cfg.resolved_train_split());
  if (train.empty())
    throw PrerequisiteError("split " + cfg.resolved_train_split() +
                            " is empty; regenerate the corpus with `tokenchain gen-data`" +
                            (cfg.kind == RunKind::adapt ? " --shifted" : ""));
  const std::string dev_name = cfg.resolved_dev_split();
  if (data.split(dev_name).empty()) throw PrerequisiteError("dev split " + dev_name + " is empty");
  const auto estimator = chain::estimator_from_string(cfg.estimator);
  const auto schedule = chain::TauSchedule::parse(cfg.tau);
  const bool is_chain = cfg.kind == RunKind::chain || cfg.kind == RunKind::adapt;
  const double asr_lr = (cfg.kind == RunKind::pretrain_asr) ? cfg.lr : cfg.chain_asr_lr;

  RunReport& report = st.report;
  if (st.epochs_done == 0) {
    report = RunReport{};
    report.name = opt.name.empty() ? to_string(cfg.kind) : opt.name;
    report.kind = cfg.kind;
    report.estimator = is_chain ? chain::to_string(estimator) : "none";
    report.tau = is_chain ? schedule.to_string() : "";
    report.seed = cfg.seed;
    if (cfg.kind == RunKind::baseline || is_chain)
      for (const auto& name : scored_splits(cfg, data))
        report.initial_scores[name] = evaluate_split(cfg, st, data, name, 0, true);
  }
  report.config_hash = trajectory_hash(cfg);
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (train.size() + B - 1) / B;
  const double planned_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  std::vector<std::string> tracked{dev_name};
  for (const auto& s : cfg.track_splits)
    if (std::find(tracked.begin(), tracked.end(), s) == tracked.end()) tracked.push_back(s);

  std::optional<t2s::T2sModel> unused_t2s;
  if (cfg.trains_asr() && !st.t2s) unused_t2s.emplace(cfg.models.t2s);

  const int last_epoch =
      opt.stop_after_epochs > 0 ? std::min(cfg.epochs, opt.stop_after_epochs) : cfg.epochs;
  while (!st.stopped && st.epochs_done < last_epoch) {
    const int epoch = st.epochs_done + 1;
    const auto epoch_start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.tau = is_chain ? chain::tau_at(schedule, epoch) : 0.0;
    if (is_chain) {
      if (cfg.alpha >= 0.0) {
        rec.alpha = cfg.alpha;
      } else {
        const auto& dwa = cfg.dwa_source == "dev"      ? st.dwa_dev
                          : cfg.dwa_average == "steps" ? st.dwa_train_steps
                                                       : st.dwa_train_utts;
        rec.alpha = chain::dwa_alpha(epoch, dwa.asr_means, dwa.t2s_means, cfg.dwa);
      }
    }

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    {
      Rng shuffle_rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0x5b}));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
    }
    std::vector<StepRecord> step_log;
    double utt_asr = 0.0, utt_t2s = 0.0;
    std::size_t steps_this_epoch = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += B) {
      const long long step = st.steps + 1;
      Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(step), 0x57}));
      std::vector<corpus::Utterance> batch;
      for (std::size_t i = begin; i < std::min(order.size(), begin + B); ++i)
        batch.push_back(train[order[i]]);
      const double nb = static_cast<double>(batch.size());
      StepRecord sr;
      sr.epoch = epoch;
      sr.step = step;
      sr.alpha = rec.alpha;
      sr.tau = rec.tau;
      sr.estimator = report.estimator;

      if (st.asr) st.asr->params().zero_grad();
      if (st.t2s) st.t2s->params().zero_grad();
      if (st.s2a) st.s2a->params().zero_grad();

      try {
        if (cfg.trains_asr()) {
          chain::ChainStepConfig cc;
          cc.estimator = estimator;
          cc.tau = rec.tau > 0.0 ? rec.tau : 1.0;
          cc.alpha = rec.alpha;
          cc.asr_loss = {cfg.eta, cfg.label_smoothing, cfg.ce_tau};
          cc.prompt_lo = cfg.prompt_lo;
          cc.prompt_hi = cfg.prompt_hi;
          cc.with_t2s = is_chain;
          const auto stats =
              chain::chain_step(*st.asr, st.t2s ? *st.t2s : *unused_t2s, batch, cc, rng);
          check_finite(stats.l_final, "loss", epoch, step);
          sr.l_asr = stats.l_asr;
          sr.l_t2s = stats.l_t2s;
          rec.l_final += stats.l_final;
          rec.l_ce += stats.l_ce;
          rec.l_ctc += stats.l_ctc;
          rec.text_error += stats.text_error;
          utt_asr += stats.l_asr * nb;
          utt_t2s += stats.l_t2s * nb;
          rec.lr = optimizer_step(st.asr_opt, st.asr->params(), asr_lr, cfg.warmup, epoch, step);
          if (is_chain && cfg.trains_t2s())
            optimizer_step(st.t2s_opt, st.t2s->params(), cfg.lr, cfg.warmup, epoch, step);
        } else if (cfg.kind == RunKind::pretrain_t2s) {
          double total = 0.0;
          for (const auto& u : batch) {
            const auto P = t2s::sample_prompt_length(u.s.size(), cfg.prompt_lo, cfg.prompt_hi, rng);
            const auto pb = t2s::make_prefix_batch(u.y, u.s, P);
            Tensor loss = ad::scale(t2s::loss_t2s(t2s::t2s_forward(*st.t2s, pb), pb), 1.0 / nb);
            loss.backward();
            total += loss.item();
          }
          check_finite(total, "loss", epoch, step);
          sr.l_t2s = total;
          rec.l_final += total;
          utt_t2s += total * nb;
          rec.lr = optimizer_step(st.t2s_opt, st.t2s->params(), cfg.lr, cfg.warmup, epoch, step);
        } else {
          double total = 0.0;
          const double progress =
              std::min(1.0, static_cast<double>(st.steps) / std::max(1.0, planned_steps));
          for (const auto& u : batch) {
            if (u.s.size() < 2) continue;
            const auto P = t2s::sample_prompt_length(u.s.size(), cfg.prompt_lo, cfg.prompt_hi, rng);
            const auto plan =
                s2a::sample_mask_plan(u.s.size(), cfg.models.s2a.num_layers, P, progress, rng);
            const bool drop = uniform01(rng) < cfg.cfg_drop;
            Tensor loss = ad::scale(s2a::s2a_loss(*st.s2a, u, plan, drop), 1.0 / nb);
            loss.backward();
            total += loss.item();
          }
          check_finite(total, "loss", epoch, step);
          rec.l_s2a += total;
          rec.l_final += total;
          rec.lr = optimizer_step(st.s2a_opt, st.s2a->params(), cfg.lr, cfg.warmup, epoch, step);
        }
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(step));
      }
      rec.l_asr += sr.l_asr;
      rec.l_t2s += sr.l_t2s;
      step_log.push_back(sr);
      ++st.steps;
      ++steps_this_epoch;
    }
    const double ns = static_cast<double>(steps_this_epoch);
    for (double* v :
         {&rec.l_asr, &rec.l_t2s, &rec.l_final, &rec.l_ce, &rec.l_ctc, &rec.l_s2a, &rec.text_error})
      *v /= ns;
    rec.l_asr_utt = utt_asr / static_cast<double>(train.size());
    rec.l_t2s_utt = utt_t2s / static_cast<double>(train.size());
    rec.step = st.steps;

    const bool t2s_each = cfg.eval_t2s_each_epoch || cfg.kind == RunKind::pretrain_t2s;
    for (const auto& name : tracked)
      rec.dev[name] = evaluate_split(cfg, st, data, name, cfg.dev_limit, t2s_each);

    if (is_chain) {
      st.dwa_train_steps.record(rec.l_asr, rec.l_t2s);
      st.dwa_train_utts.record(rec.l_asr_utt, rec.l_t2s_utt);
      if (cfg.dwa_source == "dev") {
        const auto [la, lt] = dev_losses(cfg, st, data.split(dev_name), rec.tau);
        st.dwa_dev.record(la, lt);
      }
    }
    const double metric = primary_metric(cfg.kind, rec.dev[dev_name]);
    const bool stop = st.stopper.update(epoch, metric);
    if (stop && cfg.early_stopping) {
      st.stopped = true;
      report.stopped_early = epoch < cfg.epochs;
    }
    report.best_epoch = st.stopper.best_epoch();
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    report.epochs.push_back(rec);
    st.epochs_done = epoch;

    if (!opt.quiet) {
      std::cerr << report.name << " epoch " << epoch << " L_ASR " << rec.l_asr << " L_T2S "
                << rec.l_t2s << " alpha " << rec.alpha << " dev " << metric << " (" << rec.seconds
                << " s)\n";
    }
    if (!opt.out_dir.empty()) {
      append_steps(opt.out_dir / "steps.csv", step_log, epoch == 1);
      save_checkpoint(opt.out_dir / "last.ckpt", cfg, st);
    }
  }

  const bool finished = st.stopped || st.epochs_done >= cfg.epochs;
  if (finished && report.final_scores.empty()) {
    for (const auto& name : scored_splits(cfg, data))
      report.final_scores[name] = evaluate_split(cfg, st, data, name, 0, true);
  }
  report.wall_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  if (!opt.out_dir.empty()) {
    write_report(opt.out_dir, report);
    save_checkpoint(opt.out_dir / "last.ckpt", cfg, st);
  }
  return report;
}

RunReport run(const TrainConfig& cfg, const corpus::Corpora& data, const RunOptions& opt) {
  RunState st = init_state(cfg);
  apply_resume(st, cfg, opt.resume);
  return run(cfg, data, st, opt);
}

// ---------------------------------------------------------------------------
// Reports

json report_to_json(const RunReport& r) { return r; }

RunReport report_from_json(const json& j) {
  try {
    return j.get<RunReport>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed run report: ") + e.what());
  }
}

void write_report(const fs::path& dir, const RunReport& r) {
  checkpoint::write_json(dir / "report.json", report_to_json(r), 1);
  std::ofstream(dir / "report.csv") << report_csv(r);
}

RunReport read_report(const fs::path& dir) {
  return report_from_json(checkpoint::read_json(dir / "report.json", "tokenchain train"));
}

namespace {

std::string num(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

}  // namespace

std::string report_csv(const RunReport& r) {
  std::set<std::string> splits;
  for (const auto& e : r.epochs)
    for (const auto& [name, _] : e.dev) splits.insert(name);
  std::ostringstream out;
  out << "run,epoch,step,l_asr,l_t2s,l_final,l_ce,l_ctc,l_s2a,l_asr_utt,l_t2s_utt,alpha,tau,"
         "text_error,lr,seconds";
  for (const auto& s : splits)
    out << ',' << s << "_wer," << s << "_cer," << s << "_t2s_wer," << s << "_s2a_acc";
  out << '\n';
  for (const auto& e : r.epochs) {
    out << r.name << ',' << e.epoch << ',' << e.step << ',' << num(e.l_asr) << ',' << num(e.l_t2s)
        << ',' << num(e.l_final) << ',' << num(e.l_ce) << ',' << num(e.l_ctc) << ',' << num(e.l_s2a)
        << ',' << num(e.l_asr_utt) << ',' << num(e.l_t2s_utt) << ',' << num(e.alpha) << ','
        << num(e.tau) << ',' << num(e.text_error) << ',' << num(e.lr) << ',' << num(e.seconds);
    for (const auto& s : splits) {
      const auto it = e.dev.find(s);
      if (it == e.dev.end()) {
        out << ",,,,";
        continue;
      }
      out << ',' << num(it->second.wer) << ',' << num(it->second.cer) << ','
          << num(it->second.t2s_wer) << ',' << num(it->second.s2a_accuracy);
    }
    out << '\n';
  }
  return out.str();
}

std::string steps_csv(const std::vector<StepRecord>& steps) {
  std::ostringstream out;
  out << "epoch,step,L_ASR,L_T2S,alpha,tau,estimator\n";
  for (const auto& s : steps)
    out << s.epoch << ',' << s.step << ',' << num(s.l_asr) << ',' << num(s.l_t2s) << ','
        << num(s.alpha) << ',' << num(s.tau) << ',' << s.estimator << '\n';
  return out.str();
}

}  // namespace tokenchain::trainer
