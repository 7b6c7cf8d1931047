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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tokenchain/trainer.hpp"

namespace tokenchain::report {

using trainer::RunReport;
using trainer::SplitScores;

// Metric names: wer, cer, t2s_wer, s2a_accuracy. Negative means "not scored".
double metric_value(const SplitScores& s, const std::string& metric);
const std::vector<std::string>& metric_names();

// Shortest decimal text that parses back to the same double.
std::string exact(double v);

// One row per run; one column per (split, metric) scored by any run.
std::string grid_csv(std::span<const RunReport> runs);
std::string grid_markdown(std::span<const RunReport> runs);

enum class Axis { epoch, step };

// Dev metric per epoch, one polyline per run (one point per epoch).
std::string svg_curves(std::span<const RunReport> runs, const std::string& split,
                       const std::string& metric, Axis axis);

// Change in correct rate (points) from the starting checkpoint to the final
// model, grouped by split, one bar per run.
std::string svg_gain_loss(std::span<const RunReport> runs, const std::string& metric);

// Writes grid.md, grid.csv, aggregate.json and every plot into `out`;
// returns the written paths.
std::vector<std::filesystem::path> write_aggregate(std::span<const RunReport> runs,
                                                   const std::filesystem::path& out);

}  // namespace tokenchain::report
