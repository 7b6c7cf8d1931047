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

#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "tokenchain/nn.hpp"

namespace tokenchain::testing {

// Adds N(0, scale) noise to every parameter so zero-initialised heads
// produce distinguishable outputs.
inline void perturb(nn::ParamSet& ps, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& t : ps.tensors())
    for (double& v : t.mutable_data()) v += n(rng);
}

// Pearson goodness-of-fit p-value; cells with zero expectation must be empty.
inline double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
  double stat = 0.0;
  int cells = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] <= 0.0) {
      if (observed[i] > 0.0) return 0.0;
      continue;
    }
    stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    ++cells;
  }
  if (cells < 2) return 1.0;
  boost::math::chi_squared dist(cells - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace tokenchain::testing
