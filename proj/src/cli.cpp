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

#include "tokenchain/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "tokenchain/checkpoint.hpp"
#include "tokenchain/error.hpp"
#include "tokenchain/report.hpp"
#include "tokenchain/serialization.hpp"

namespace tokenchain::cli {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SuiteRun, name, mode, estimator, tau)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SuiteConfig, train, pretrain_epochs, seeds, runs)

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using trainer::RunKind;
using trainer::TrainConfig;

}  // namespace

trainer::TrainConfig SuiteConfig::default_train() {
  TrainConfig t;
  t.epochs = 8;
  t.warmup = 100;
  t.dev_limit = 100;
  t.early_stopping = false;
  for (auto* d : {&t.models.asr.d_model, &t.models.t2s.d_model, &t.models.s2a.d_model}) *d = 32;
  for (auto* f : {&t.models.asr.ffn, &t.models.t2s.ffn, &t.models.s2a.ffn}) *f = 64;
  return t;
}

std::vector<SuiteRun> SuiteConfig::default_runs() {
  return {{"baseline", "baseline", "none", ""},
          {"st_argmax", "chain", "st_argmax", "1.0"},
          {"st_gumbel_anneal", "chain", "st_gumbel", "anneal:2.0:0.1:10"},
          {"st_gumbel_1.5", "chain", "st_gumbel", "1.5"},
          {"st_gumbel_1.0", "chain", "st_gumbel", "1.0"},
          {"st_gumbel_0.75", "chain", "st_gumbel", "0.75"}};
}

void SuiteConfig::validate() const {
  if (pretrain_epochs < 1) throw ConfigError("pretrain_epochs must be at least 1");
  if (seeds.empty()) throw ConfigError("the suite needs at least one seed");
  if (runs.empty()) throw ConfigError("the suite needs at least one run");
  std::set<std::string> names;
  for (const auto& r : runs) {
    if (r.name.empty()) throw ConfigError("suite run names must be non-empty");
    if (!names.insert(r.name).second) throw ConfigError("duplicate suite run '" + r.name + "'");
    if (r.mode != "baseline" && r.mode != "chain")
      throw ConfigError("suite run " + r.name + ": mode must be baseline or chain");
    if (r.mode == "chain") {
      auto c = train;
      c.kind = RunKind::chain;
      c.estimator = r.estimator;
      c.tau = r.tau;
      c.validate();
    }
  }
}

int exit_code(const std::string& category) {
  static const std::map<std::string, int> codes = {{"usage", 2},
                                                   {"config", 3},
                                                   {"parse", 4},
                                                   {"input", 5},
                                                   {"missing-prerequisite", 6},
                                                   {"resume", 7},
                                                   {"divergence", 8},
                                                   {"io", 9},
                                                   {"dimension", 10},
                                                   {"parameter", 10},
                                                   {"index", 10},
                                                   {"numeric", 10},
                                                   {"infeasible-alignment", 10},
                                                   {"degenerate-ratio", 10}};
  const auto it = codes.find(category);
  return it == codes.end() ? 1 : it->second;
}

namespace {

void check_keys(const json& given, const json& reference, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown configuration key '" + path + "'");
    if (value.is_object() && reference[key].is_object()) check_keys(value, reference[key], path);
  }
}

// Defaults, then the JSON file, checked key by key against the defaults.
template <typename T>
T load_config(T defaults, const std::optional<std::string>& file) {
  if (!file) return defaults;
  std::ifstream in(*file);
  if (!in) throw InputError("config file " + *file + " not found (write one with --dump-config)");
  json given;
  try {
    given = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(*file + ": " + e.what());
  }
  json merged = defaults;
  check_keys(given, merged, "");
  merged.merge_patch(given);
  try {
    return merged.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(*file + ": " + e.what());
  }
}

template <typename T>
void set_if(T& target, const std::optional<T>& value) {
  if (value) target = *value;
}

std::string normalize_estimator(const std::string& s) {
  return chain::to_string(chain::estimator_from_string(s));
}

corpus::Corpora load_corpus(const std::optional<std::string>& dir, const std::string& command) {
  if (!dir)
    throw InputError(command + " needs --corpus DIR (create one with `tokenchain gen-data`)");
  return corpus::load_corpora(*dir);
}

void require_split(const corpus::Corpora& data, const std::string& name) {
  if (!data.split(name).empty()) return;
  if (name.starts_with("shifted"))
    throw PrerequisiteError("corpus has no " + name +
                            " utterances; regenerate it with `tokenchain gen-data --shifted`");
  throw PrerequisiteError("corpus has no " + name +
                          " utterances; regenerate it with "
                          "`tokenchain gen-data`");
}

// Flags shared by the training commands.
struct TrainFlags {
  std::optional<std::string> config, corpus, out, name, estimator, tau, model, mode;
  std::optional<int> epochs, batch_size, patience, stop_after, dev_limit;
  std::optional<double> lr, chain_asr_lr, alpha;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> resume;
  bool freeze_t2s = false, no_early_stop = false, dump = false, quiet = false;

  void add_common(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON configuration file");
    cmd->add_flag("--dump-config", dump, "Print the effective configuration and exit");
    cmd->add_option("--corpus", corpus, "Corpus directory written by gen-data");
    cmd->add_option("--seed", seed, "Run seed");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch_size, "Utterances per optimizer step");
    cmd->add_option("--lr", lr, "Base learning rate");
    cmd->add_option("--patience", patience, "Early-stopping patience in epochs");
    cmd->add_flag("--no-early-stop", no_early_stop, "Train for the full epoch budget");
    cmd->add_option("--dev-limit", dev_limit, "Dev utterances scored per epoch (0 = all)");
    cmd->add_option("--stop-after", stop_after, "Pause after this many epochs in total");
    cmd->add_option("--resume", resume, "Checkpoints to start from")->expected(1, -1);
    cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress");
  }
  void add_chain(CLI::App* cmd) {
    cmd->add_option("--estimator", estimator, "argmax | gumbel")
        ->check(CLI::IsMember({"argmax", "gumbel", "st_argmax", "st_gumbel"}));
    cmd->add_option("--tau", tau, "Gumbel temperature: a number or anneal:START:END:EPOCHS");
    cmd->add_option("--alpha", alpha, "Fixed chain weight in [0,1] (default: DWA)");
    cmd->add_option("--asr-lr", chain_asr_lr, "ASR base learning rate for chain training");
    cmd->add_flag("--freeze-t2s", freeze_t2s, "Keep T2S parameters fixed");
    cmd->add_option("--name", name, "Run name used in reports");
  }

  void apply(TrainConfig& c) const {
    set_if(c.seed, seed);
    set_if(c.epochs, epochs);
    set_if(c.batch_size, batch_size);
    set_if(c.lr, lr);
    set_if(c.patience, patience);
    set_if(c.dev_limit, dev_limit);
    set_if(c.chain_asr_lr, chain_asr_lr);
    set_if(c.alpha, alpha);
    set_if(c.tau, tau);
    if (estimator) c.estimator = normalize_estimator(*estimator);
    if (no_early_stop) c.early_stopping = false;
    if (freeze_t2s) c.freeze_t2s = true;
  }

  trainer::RunOptions options(const fs::path& out_dir) const {
    trainer::RunOptions o;
    o.out_dir = out_dir;
    o.name = name.value_or("");
    for (const auto& r : resume) o.resume.emplace_back(r);
    o.stop_after_epochs = stop_after.value_or(0);
    o.quiet = quiet;
    return o;
  }
};

void print_scores(std::ostream& out, const std::map<std::string, trainer::SplitScores>& scores) {
  json j = scores;
  out << j.dump(2) << '\n';
}

int cmd_gen_data(std::ostream& out, const std::optional<std::string>& config,
                 const std::optional<std::string>& dir, const std::optional<std::uint64_t>& seed,
                 bool shifted, const std::vector<std::string>& sizes, bool dump) {
  corpus::CorpusConfig defaults;
  defaults.with_shifted = false;
  auto cfg = load_config(defaults, config);
  set_if(cfg.seed, seed);
  if (shifted) cfg.with_shifted = true;
  json sj = cfg.sizes;
  for (const auto& s : sizes) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--size expects SPLIT=N, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    if (!sj.contains(key)) throw ConfigError("unknown split '" + key + "' in --size");
    try {
      sj[key] = std::stoi(s.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("--size " + s + ": size is not an integer");
    }
  }
  cfg.sizes = sj.get<corpus::SplitSizes>();
  if (dump) {
    out << json(cfg).dump(2) << '\n';
    return 0;
  }
  if (!dir) throw InputError("gen-data needs --out DIR");
  cfg.validate();
  const auto data = corpus::build_corpora(cfg);
  corpus::save_corpora(*dir, data);
  for (const auto& name : corpus::split_names())
    out << name << ": " << data.split(name).size() << " utterances\n";
  return 0;
}

RunKind pretrain_kind(const std::string& model) {
  if (model == "asr") return RunKind::pretrain_asr;
  if (model == "t2s") return RunKind::pretrain_t2s;
  return RunKind::s2a;
}

int cmd_pretrain(std::ostream& out, const TrainFlags& f) {
  TrainConfig defaults;
  defaults.kind = RunKind::pretrain_asr;
  auto cfg = load_config(defaults, f.config);
  if (f.model) cfg.kind = pretrain_kind(*f.model);
  f.apply(cfg);
  if (cfg.kind != RunKind::pretrain_asr && cfg.kind != RunKind::pretrain_t2s &&
      cfg.kind != RunKind::s2a)
    throw ConfigError("pretrain runs kinds pretrain_asr, pretrain_t2s or s2a, not " +
                      trainer::to_string(cfg.kind));
  if (f.dump) {
    out << trainer::config_to_json(cfg).dump(2) << '\n';
    return 0;
  }
  cfg.validate();
  if (!f.out) throw InputError("pretrain needs --out CKPT");
  const auto data = load_corpus(f.corpus, "pretrain");
  require_split(data, cfg.resolved_train_split());
  require_split(data, cfg.resolved_dev_split());
  const fs::path ckpt(*f.out);
  const fs::path run_dir = ckpt.parent_path() / (ckpt.stem().string() + "_run");
  auto opt = f.options(run_dir);
  if (opt.name.empty()) opt.name = trainer::to_string(cfg.kind);
  const auto report = trainer::run(cfg, data, opt);
  fs::copy_file(run_dir / "last.ckpt", ckpt, fs::copy_options::overwrite_existing);
  out << "wrote " << ckpt.string() << " (run directory " << run_dir.string() << ")\n";
  print_scores(out, report.final_scores);
  return 0;
}

int cmd_train(std::ostream& out, const TrainFlags& f, bool adapt) {
  TrainConfig defaults;
  defaults.kind = adapt ? RunKind::adapt : RunKind::chain;
  auto cfg = load_config(defaults, f.config);
  if (adapt) cfg.kind = RunKind::adapt;
  if (f.mode) cfg.kind = *f.mode == "baseline" ? RunKind::baseline : RunKind::chain;
  f.apply(cfg);
  if (cfg.kind != RunKind::baseline && cfg.kind != RunKind::chain && cfg.kind != RunKind::adapt)
    throw ConfigError(std::string(adapt ? "adapt" : "train") + " cannot run kind " +
                      trainer::to_string(cfg.kind) + "; use pretrain");
  if (f.dump) {
    out << trainer::config_to_json(cfg).dump(2) << '\n';
    return 0;
  }
  cfg.validate();
  if (!f.out) throw InputError(std::string(adapt ? "adapt" : "train") + " needs --out DIR");
  if (f.resume.empty())
    throw PrerequisiteError(trainer::to_string(cfg.kind) +
                            " starts from pretrained checkpoints; run `tokenchain pretrain "
                            "--model asr` (and `--model t2s` for chain runs) and pass them "
                            "with --resume");
  const auto data = load_corpus(f.corpus, adapt ? "adapt" : "train");
  require_split(data, cfg.resolved_train_split());
  require_split(data, cfg.resolved_dev_split());
  auto opt = f.options(*f.out);
  if (opt.name.empty()) opt.name = fs::path(*f.out).filename().string();
  const auto report = trainer::run(cfg, data, opt);
  out << "wrote " << (fs::path(*f.out) / "report.json").string() << '\n';
  print_scores(out, report.final_scores);
  return 0;
}

int cmd_eval(std::ostream& out, const std::vector<std::string>& ckpts,
             const std::optional<std::string>& corpus_dir, std::vector<std::string> splits,
             const std::optional<std::string>& out_file) {
  if (ckpts.empty())
    throw InputError("eval needs --ckpt CKPT (write one with `tokenchain pretrain`)");
  std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
  for (const auto& p : paths)
    if (!fs::exists(p))
      throw PrerequisiteError("checkpoint " + p.string() +
                              " not found; run `tokenchain pretrain` or `tokenchain train` first");
  TrainConfig cfg;
  const auto state = trainer::state_from_checkpoints(paths, cfg);
  const auto data = load_corpus(corpus_dir, "eval");
  if (splits.empty())
    for (const auto& name : corpus::split_names())
      if ((name.ends_with("_dev") || name.ends_with("_test")) && !data.split(name).empty())
        splits.push_back(name);
  const auto& known = corpus::split_names();
  std::map<std::string, trainer::SplitScores> scores;
  for (const auto& s : splits) {
    if (std::find(known.begin(), known.end(), s) == known.end())
      throw InputError("unknown split '" + s + "'");
    require_split(data, s);
    scores[s] = trainer::evaluate_split(cfg, state, data, s, 0, true);
  }
  if (out_file) checkpoint::write_json(*out_file, json(scores), 2);
  print_scores(out, scores);
  return 0;
}

int cmd_report(std::ostream& out, const std::vector<std::string>& runs, const std::string& dir) {
  if (runs.empty())
    throw InputError("report needs --runs DIR... (create them with `tokenchain train`)");
  std::vector<trainer::RunReport> reports;
  for (const auto& r : runs) reports.push_back(trainer::read_report(r));
  const auto files = report::write_aggregate(reports, dir);
  out << report::grid_markdown(reports);
  out << "wrote " << files.size() << " files to " << dir << '\n';
  return 0;
}

int cmd_suite(std::ostream& out, const TrainFlags& f, const std::vector<std::uint64_t>& seeds,
              const std::optional<int>& pretrain_epochs) {
  SuiteConfig defaults;
  auto suite = load_config(defaults, f.config);
  f.apply(suite.train);
  if (!seeds.empty()) suite.seeds = seeds;
  set_if(suite.pretrain_epochs, pretrain_epochs);
  if (f.dump) {
    out << json(suite).dump(2) << '\n';
    return 0;
  }
  suite.validate();
  if (!f.out) throw InputError("suite needs --out DIR");
  const auto data = load_corpus(f.corpus, "suite");
  for (const char* s : {"pretrain", "chain_train", "chain_dev"}) require_split(data, s);
  const fs::path root(*f.out);
  std::vector<trainer::RunReport> reports;
  for (const auto seed : suite.seeds) {
    const fs::path seed_dir = root / ("seed" + std::to_string(seed));
    std::vector<fs::path> pretrained;
    for (RunKind k : {RunKind::pretrain_asr, RunKind::pretrain_t2s}) {
      auto cfg = suite.train;
      cfg.kind = k;
      cfg.seed = seed;
      cfg.epochs = suite.pretrain_epochs;
      const fs::path dir = seed_dir / trainer::to_string(k);
      auto opt = f.options(dir);
      opt.name = trainer::to_string(k);
      opt.resume.clear();
      if (fs::exists(dir / "last.ckpt")) opt.resume.push_back(dir / "last.ckpt");
      trainer::run(cfg, data, opt);
      pretrained.push_back(dir / "last.ckpt");
    }
    for (const auto& r : suite.runs) {
      auto cfg = suite.train;
      cfg.seed = seed;
      cfg.kind = r.mode == "baseline" ? RunKind::baseline : RunKind::chain;
      if (r.mode == "chain") {
        cfg.estimator = r.estimator;
        cfg.tau = r.tau;
      }
      const fs::path dir = seed_dir / r.name;
      auto opt = f.options(dir);
      opt.name = suite.seeds.size() > 1 ? r.name + "_s" + std::to_string(seed) : r.name;
      opt.resume.clear();
      if (fs::exists(dir / "last.ckpt")) opt.resume.push_back(dir / "last.ckpt");
      opt.resume.insert(opt.resume.end(), pretrained.begin(), pretrained.end());
      reports.push_back(trainer::run(cfg, data, opt));
      out << opt.name << " done\n";
    }
  }
  const auto files = report::write_aggregate(reports, root / "aggregate");
  out << report::grid_markdown(reports);
  out << "wrote " << reports.size() << " run reports and " << files.size()
      << " aggregate files under " << root.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint ASR/TTS token-chain training on a synthetic speech corpus", "tokenchain"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "tokenchain 1.0");

  std::optional<std::string> gd_config, gd_out;
  std::optional<std::uint64_t> gd_seed;
  std::vector<std::string> gd_sizes;
  bool gd_shifted = false, gd_dump = false;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpora");
  gen->add_option("--out", gd_out, "Output directory");
  gen->add_option("--seed", gd_seed, "Corpus seed");
  gen->add_flag("--shifted", gd_shifted, "Also generate the domain-shifted splits");
  gen->add_option("--size", gd_sizes, "Split size override, SPLIT=N (repeatable)");
  gen->add_option("--config", gd_config, "JSON configuration file");
  gen->add_flag("--dump-config", gd_dump, "Print the effective configuration and exit");

  TrainFlags pre_f, train_f, adapt_f, suite_f;
  auto* pre = app.add_subcommand("pretrain", "Pretrain one model on the pretrain split");
  pre_f.add_common(pre);
  pre->add_option("--model", pre_f.model, "asr | t2s | s2a")
      ->check(CLI::IsMember({"asr", "t2s", "s2a"}));
  pre->add_option("--out", pre_f.out, "Checkpoint file to write");
  pre->add_option("--name", pre_f.name, "Run name used in reports");

  auto* train = app.add_subcommand("train", "Baseline or chain training from pretrained models");
  train_f.add_common(train);
  train_f.add_chain(train);
  train->add_option("--mode", train_f.mode, "baseline | chain")
      ->check(CLI::IsMember({"baseline", "chain"}));
  train->add_option("--out", train_f.out, "Run directory");

  auto* adapt = app.add_subcommand("adapt", "Chain adaptation on the shifted corpus");
  adapt_f.add_common(adapt);
  adapt_f.add_chain(adapt);
  adapt->add_option("--out", adapt_f.out, "Run directory");

  std::vector<std::string> ev_ckpts, ev_splits;
  std::optional<std::string> ev_corpus, ev_out;
  auto* ev = app.add_subcommand("eval", "Score checkpoints on corpus splits");
  ev->add_option("--ckpt", ev_ckpts, "Checkpoints holding the models to score")->expected(1, -1);
  ev->add_option("--corpus", ev_corpus, "Corpus directory");
  ev->add_option("--splits", ev_splits, "Splits to score (default: all dev and test)")
      ->delimiter(',');
  ev->add_option("--out", ev_out, "Also write the scores to this JSON file");

  std::vector<std::string> rep_runs;
  std::string rep_out = "report";
  auto* rep = app.add_subcommand("report", "Aggregate run reports into grids and plots");
  rep->add_option("--runs", rep_runs, "Run directories")->expected(1, -1);
  rep->add_option("--out", rep_out, "Output directory");

  std::vector<std::uint64_t> suite_seeds;
  std::optional<int> suite_pre_epochs;
  auto* suite = app.add_subcommand("suite", "Pretrain, train the estimator grid and report");
  suite_f.add_common(suite);
  suite->add_option("--out", suite_f.out, "Output root");
  suite->add_option("--seeds", suite_seeds, "Seeds, comma separated")->delimiter(',');
  suite->add_option("--pretrain-epochs", suite_pre_epochs, "Pretraining epochs per model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code("usage");
  }

  try {
    if (*gen) return cmd_gen_data(out, gd_config, gd_out, gd_seed, gd_shifted, gd_sizes, gd_dump);
    if (*pre) return cmd_pretrain(out, pre_f);
    if (*train) return cmd_train(out, train_f, false);
    if (*adapt) return cmd_train(out, adapt_f, true);
    if (*ev) return cmd_eval(out, ev_ckpts, ev_corpus, ev_splits, ev_out);
    if (*rep) return cmd_report(out, rep_runs, rep_out);
    if (*suite) return cmd_suite(out, suite_f, suite_seeds, suite_pre_epochs);
  } catch (const Error& e) {
    err << "tokenchain: " << e.category() << " error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "tokenchain: io error: " << e.what() << '\n';
    return exit_code("io");
  } catch (const std::exception& e) {
    err << "tokenchain: error: " << e.what() << '\n';
    return 1;
  }
  return exit_code("usage");
}

}  // namespace tokenchain::cli
