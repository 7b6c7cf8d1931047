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

#include <CLI11.hpp>
#include <exception>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "acceptance.hpp"
#include "tokenchain/report.hpp"

namespace fs = std::filesystem;
using namespace tokenchain;
using namespace tokenchain::acceptance;

namespace {

void print(const Outcome& o) {
  std::ostringstream secs;
  secs << std::fixed << std::setprecision(1) << o.seconds;
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << o.id << ' ' << o.title << " (" << o.detail
            << "; " << secs.str() << " s)" << std::endl;
}

Outcome guarded(int id, const std::string& title, const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return Outcome{id, title, false, std::string("error: ") + e.what(), 0.0};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the token-chain reproduction", "tokenchain_acceptance"};
  std::vector<int> only;
  std::vector<std::uint64_t> seeds;
  std::string out = "acceptance_runs";
  bool reuse = false;
  app.add_option("--only", only, "Criteria to run, comma separated (default: all)")
      ->delimiter(',')
      ->check(CLI::Range(1, 10));
  app.add_option("--seeds", seeds, "Run seeds of the toy experiments, comma separated")
      ->delimiter(',');
  app.add_option("--out", out, "Directory for run artifacts");
  app.add_flag("--reuse", reuse, "Continue from runs already present under --out");
  CLI11_PARSE(app, argc, argv);

  const std::set<int> wanted = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}
                                            : std::set<int>(only.begin(), only.end());
  std::vector<Outcome> outcomes;
  auto record = [&](Outcome o) {
    print(o);
    outcomes.push_back(std::move(o));
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> mechanisms = {
      {1, ctc_matches_enumeration},         {2, gradients_match_finite_differences},
      {3, gumbel_sampling_and_backward},    {4, dwa_reference_values},
      {5, edit_distance_matches_recursion}, {6, chain_gradient_flow},
  };
  for (const auto& [id, f] : mechanisms)
    if (wanted.count(id)) record(guarded(id, "mechanism " + std::to_string(id), f));

  auto settings = ExperimentSettings::defaults();
  if (!seeds.empty()) settings.seeds = seeds;
  settings.out_dir = out;
  const bool experiments = wanted.count(7) || wanted.count(8) || wanted.count(9);
  if (experiments || wanted.count(10)) {
    try {
      if (!reuse) fs::remove_all(settings.out_dir);
      fs::create_directories(settings.out_dir);
      std::clog << "building toy corpora\n";
      const auto data = corpus::build_corpora(settings.world);
      corpus::save_corpora(settings.out_dir / "corpus", data);
      if (experiments) {
        const auto runs = run_experiments(settings, data, std::clog);
        std::vector<trainer::RunReport> reports;
        for (const auto& r : runs)
          for (const auto* rep : {&r.baseline, &r.chain_gumbel, &r.chain_argmax, &r.adapt})
            reports.push_back(*rep);
        report::write_aggregate(reports, settings.out_dir / "aggregate");
        if (wanted.count(7))
          record(guarded(7, "chain vs baseline",
                         [&] { return chain_beats_baseline(settings, runs); }));
        if (wanted.count(8))
          record(guarded(8, "domain adaptation",
                         [&] { return adaptation_gain_loss(settings, runs); }));
        if (wanted.count(9))
          record(
              guarded(9, "T2S content robustness", [&] { return t2s_content_robustness(runs); }));
      }
      if (wanted.count(10))
        record(guarded(10, "S2A sanity",
                       [&] { return s2a_accuracy_and_prompts(settings, data, std::clog); }));
    } catch (const std::exception& e) {
      for (int id : {7, 8, 9, 10}) {
        const bool done = std::any_of(outcomes.begin(), outcomes.end(),
                                      [&](const Outcome& o) { return o.id == id; });
        if (wanted.count(id) && !done)
          record(Outcome{id, "toy experiment", false, std::string("error: ") + e.what(), 0.0});
      }
    }
  }

  const auto passed =
      std::count_if(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.pass; });
  std::cout << passed << '/' << outcomes.size() << " criteria passed" << std::endl;
  return passed == static_cast<long>(outcomes.size()) ? 0 : 1;
}
