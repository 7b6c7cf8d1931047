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
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "acceptance.hpp"
#include "tokenchain/s2a.hpp"

namespace tokenchain::acceptance {
namespace {

namespace fs = std::filesystem;
using trainer::RunKind;
using trainer::RunReport;
using trainer::TrainConfig;

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string pct(double v) { return fmt(100.0 * v, 3) + "%"; }

RunReport run_or_resume(const TrainConfig& cfg, const corpus::Corpora& data, const fs::path& dir,
                        const std::string& name, std::vector<fs::path> start_from,
                        std::ostream& log) {
  trainer::RunOptions opt;
  opt.out_dir = dir;
  opt.name = name;
  if (fs::exists(dir / "last.ckpt")) start_from.insert(start_from.begin(), dir / "last.ckpt");
  opt.resume = std::move(start_from);
  auto report = trainer::run(cfg, data, opt);
  log << "  " << name << ": " << report.epochs.size() << " epochs, " << fmt(report.wall_seconds)
      << " s\n"
      << std::flush;
  return report;
}

double score(const std::map<std::string, trainer::SplitScores>& m, const std::string& split,
             double trainer::SplitScores::* field) {
  const auto it = m.find(split);
  return it == m.end() ? std::nan("") : it->second.*field;
}

std::vector<double> median_curve(const std::vector<std::vector<double>>& curves) {
  std::size_t len = curves.empty() ? 0 : curves.front().size();
  for (const auto& c : curves) len = std::min(len, c.size());
  std::vector<double> out(len);
  for (std::size_t e = 0; e < len; ++e) {
    std::vector<double> at;
    for (const auto& c : curves) at.push_back(c[e]);
    out[e] = median(at);
  }
  return out;
}

std::string curve_text(const std::vector<double>& c) {
  std::string s;
  for (double v : c) s += (s.empty() ? "" : " ") + fmt(v, 3);
  return s;
}

}  // namespace

ExperimentSettings ExperimentSettings::defaults() {
  ExperimentSettings s;
  auto& sz = s.world.sizes;
  sz.pretrain = 300;
  sz.chain_train = 800;
  sz.chain_dev = 150;
  sz.chain_test = 50;
  sz.shifted_train = 400;
  sz.shifted_dev = 150;
  sz.shifted_test = 50;
  s.world.with_shifted = true;
  s.world.seed = 1;

  auto& b = s.base;
  b.epochs = 12;
  b.early_stopping = false;
  b.batch_size = 16;
  b.warmup = 100;
  for (auto* d : {&b.models.asr.d_model, &b.models.t2s.d_model, &b.models.s2a.d_model}) *d = 48;
  for (auto* f : {&b.models.asr.ffn, &b.models.t2s.ffn, &b.models.s2a.ffn}) *f = 96;
  return s;
}

std::vector<SeedRuns> run_experiments(const ExperimentSettings& s, const corpus::Corpora& data,
                                      std::ostream& log) {
  std::vector<SeedRuns> all;
  for (const auto seed : s.seeds) {
    const fs::path root = s.out_dir / ("seed" + std::to_string(seed));
    const std::string tag = "_s" + std::to_string(seed);
    log << "seed " << seed << '\n';
    SeedRuns r;
    r.seed = seed;
    TrainConfig base = s.base;
    base.seed = seed;

    TrainConfig pa = base;
    pa.kind = RunKind::pretrain_asr;
    pa.epochs = s.pretrain_asr_epochs;
    pa.dev_limit = s.pretrain_dev_limit;
    pa.eval_splits = {"chain_dev", "shifted_dev"};
    r.pretrain_asr = run_or_resume(pa, data, root / "pretrain_asr", "pretrain_asr" + tag, {}, log);

    TrainConfig pt = pa;
    pt.kind = RunKind::pretrain_t2s;
    pt.epochs = s.pretrain_t2s_epochs;
    pt.eval_splits = {"chain_dev"};
    r.pretrain_t2s = run_or_resume(pt, data, root / "pretrain_t2s", "pretrain_t2s" + tag, {}, log);

    const std::vector<fs::path> pretrained = {root / "pretrain_asr" / "last.ckpt",
                                              root / "pretrain_t2s" / "last.ckpt"};
    TrainConfig chain_base = base;
    chain_base.epochs = s.chain_epochs;
    chain_base.eval_splits = {"chain_dev"};

    TrainConfig bl = chain_base;
    bl.kind = RunKind::baseline;
    r.baseline = run_or_resume(bl, data, root / "baseline", "baseline" + tag, pretrained, log);

    TrainConfig cg = chain_base;
    cg.kind = RunKind::chain;
    cg.estimator = "st_gumbel";
    cg.tau = "anneal:2.0:0.1:10";
    r.chain_gumbel =
        run_or_resume(cg, data, root / "chain_gumbel", "chain_gumbel" + tag, pretrained, log);

    TrainConfig ca = chain_base;
    ca.kind = RunKind::chain;
    ca.estimator = "st_argmax";
    ca.tau = "1.0";
    r.chain_argmax =
        run_or_resume(ca, data, root / "chain_argmax", "chain_argmax" + tag, pretrained, log);

    TrainConfig ad = chain_base;
    ad.kind = RunKind::adapt;
    ad.estimator = s.adapt_estimator;
    ad.tau = s.adapt_tau;
    ad.eval_splits = {"chain_dev", "shifted_dev"};
    r.adapt = run_or_resume(ad, data, root / "adapt", "adapt" + tag, pretrained, log);
    all.push_back(std::move(r));
  }
  return all;
}

Outcome chain_beats_baseline(const ExperimentSettings& s, const std::vector<SeedRuns>& runs) {
  Outcome o{7, "chain training converges earlier and lower than baseline"};
  std::vector<std::vector<double>> base_curves, chain_curves;
  double seconds = 0.0;
  for (const auto& r : runs) {
    base_curves.push_back(r.baseline.dev_curve("chain_dev"));
    chain_curves.push_back(r.chain_gumbel.dev_curve("chain_dev"));
    seconds += r.pretrain_asr.wall_seconds + r.pretrain_t2s.wall_seconds + r.baseline.wall_seconds +
               r.chain_gumbel.wall_seconds;
  }
  const auto mb = median_curve(base_curves);
  const auto mc = median_curve(chain_curves);
  o.seconds = seconds;
  if (mb.empty() || mc.size() != mb.size()) {
    o.detail = "missing dev curves";
    return o;
  }
  const int E = static_cast<int>(mb.size());
  const double target = mb.back();
  int reached = 0;
  for (int e = 1; e <= E && reached == 0; ++e)
    if (mc[e - 1] <= target) reached = e;
  const int earlier = reached == 0 ? 0 : E - reached;
  const double rel = (mb.back() - mc.back()) / mb.back();
  o.pass = reached != 0 && earlier >= 2 && rel >= 0.03 && seconds < s.budget_seconds;
  o.detail = "median dev WER at epoch " + std::to_string(E) + ": baseline " + fmt(mb.back()) +
             ", chain " + fmt(mc.back()) + " (relative reduction " + pct(rel) +
             "); chain reaches " + fmt(target) +
             (reached ? " at epoch " + std::to_string(reached) : " never") + "; baseline [" +
             curve_text(mb) + "], chain [" + curve_text(mc) + "]";
  return o;
}

Outcome adaptation_gain_loss(const ExperimentSettings& s, const std::vector<SeedRuns>& runs) {
  Outcome o{8, "adaptation gains on the shifted domain, small source loss"};
  std::vector<double> rel_drop, gain, degradation;
  std::string per_seed;
  double seconds = 0.0;
  for (const auto& r : runs) {
    const auto& a = r.adapt;
    const double pre_sh = score(a.initial_scores, "shifted_dev", &trainer::SplitScores::wer);
    const double post_sh = score(a.final_scores, "shifted_dev", &trainer::SplitScores::wer);
    const double pre_src = score(a.initial_scores, "chain_dev", &trainer::SplitScores::wer);
    const double post_src = score(a.final_scores, "chain_dev", &trainer::SplitScores::wer);
    rel_drop.push_back((pre_sh - post_sh) / pre_sh);
    gain.push_back(pre_sh - post_sh);
    degradation.push_back(std::max(0.0, post_src - pre_src));
    per_seed += " seed " + std::to_string(r.seed) + ": shifted " + fmt(pre_sh) + "->" +
                fmt(post_sh) + ", source " + fmt(pre_src) + "->" + fmt(post_src) + ";";
    seconds += r.pretrain_asr.wall_seconds + r.pretrain_t2s.wall_seconds + a.wall_seconds;
  }
  const double md = median(rel_drop), mg = median(gain), mdeg = median(degradation);
  o.seconds = seconds;
  o.pass = md >= 0.20 && mdeg <= 0.25 * mg && seconds < s.budget_seconds;
  o.detail = "median shifted-dev WER drop " + pct(md) + ", source degradation " + fmt(mdeg) +
             " vs 1/4 of gain " + fmt(0.25 * mg) + ";" + per_seed.substr(0, per_seed.size() - 1);
  return o;
}

Outcome t2s_content_robustness(const std::vector<SeedRuns>& runs) {
  Outcome o{9, "chain-trained T2S content error"};
  std::vector<double> pre_g, post_g, pre_a, post_a;
  double seconds = 0.0;
  for (const auto& r : runs) {
    const auto f = &trainer::SplitScores::t2s_wer;
    pre_g.push_back(score(r.chain_gumbel.initial_scores, "chain_dev", f));
    post_g.push_back(score(r.chain_gumbel.final_scores, "chain_dev", f));
    pre_a.push_back(score(r.chain_argmax.initial_scores, "chain_dev", f));
    post_a.push_back(score(r.chain_argmax.final_scores, "chain_dev", f));
    seconds += r.chain_gumbel.wall_seconds + r.chain_argmax.wall_seconds;
  }
  const double pg = median(pre_g), qg = median(post_g), pa = median(pre_a), qa = median(post_a);
  const double rel_a = (pa - qa) / pa;
  o.seconds = seconds;
  o.pass = qg <= pg && qa <= pa && rel_a >= 0.03;
  o.detail = "median channel-inversion WER: st_gumbel " + fmt(pg) + "->" + fmt(qg) +
             ", st_argmax " + fmt(pa) + "->" + fmt(qa) + " (relative reduction " + pct(rel_a) + ")";
  return o;
}

Outcome s2a_accuracy_and_prompts(const ExperimentSettings& s, const corpus::Corpora& data,
                                 std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o{10, "S2A masked accuracy and prompt immutability"};
  std::vector<double> margins;
  std::string per_seed;
  long decodes = 0, violations = 0;
  for (const auto seed : s.seeds) {
    TrainConfig cfg = s.base;
    cfg.kind = RunKind::s2a;
    cfg.seed = seed;
    cfg.epochs = s.s2a_epochs;
    cfg.lr = s.s2a_lr;
    cfg.dev_limit = s.pretrain_dev_limit;
    cfg.eval_splits = {"chain_dev"};
    const fs::path dir = s.out_dir / ("seed" + std::to_string(seed)) / "s2a";
    fs::remove_all(dir);
    trainer::RunState st = trainer::init_state(cfg);
    trainer::RunOptions opt;
    opt.out_dir = dir;
    opt.name = "s2a_s" + std::to_string(seed);
    const auto report = trainer::run(cfg, data, st, opt);
    const auto& sc = report.final_scores.at("chain_dev");
    margins.push_back(sc.s2a_accuracy - sc.s2a_majority);
    per_seed += " seed " + std::to_string(seed) + ": " + fmt(sc.s2a_accuracy) + " vs " +
                fmt(sc.s2a_majority) + ";";
    log << "  " << opt.name << ": accuracy " << fmt(sc.s2a_accuracy) << ", majority "
        << fmt(sc.s2a_majority) << ", " << fmt(report.wall_seconds) << " s\n"
        << std::flush;

    const auto& model = *st.s2a;
    const auto& eval = data.chain_dev;
    const int rows = model.config().num_layers - 1;
    const long per_seed_decodes =
        (s.s2a_decodes + static_cast<long>(s.seeds.size()) - 1) / static_cast<long>(s.seeds.size());
    Rng rng(derive_seed({seed, 0xdec}));
    s2a::DecodeOptions dopt;
    dopt.steps_per_layer = cfg.s2a_decode_steps;
    for (long i = 0; i < per_seed_decodes; ++i) {
      const auto& u = eval[static_cast<std::size_t>(i) % eval.size()];
      const std::size_t T = u.s.size();
      const std::size_t P = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(T) - 1));
      s2a::Stack prompt(static_cast<std::size_t>(rows));
      for (int l = 0; l < rows; ++l)
        prompt[l].assign(u.a[l].begin(), u.a[l].begin() + static_cast<std::ptrdiff_t>(P));
      const auto out = s2a::decode_iterative(model, u.s, prompt, dopt, rng);
      bool ok = out.size() == static_cast<std::size_t>(rows);
      for (int l = 0; ok && l < rows; ++l) {
        ok = out[l].size() == T && std::equal(prompt[l].begin(), prompt[l].end(), out[l].begin());
        for (int id : out[l]) ok = ok && id >= 0 && id < model.config().acoustic_size;
      }
      ++decodes;
      if (!ok) ++violations;
    }
  }
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double m = median(margins);
  o.pass = m >= 0.20 && violations == 0 && decodes >= s.s2a_decodes;
  o.detail = "median accuracy margin " + fmt(100.0 * m) + " points;" + per_seed + " " +
             std::to_string(decodes) + " decodes, " + std::to_string(violations) +
             " prompt or shape violations";
  return o;
}

}  // namespace tokenchain::acceptance
