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

#include <stdexcept>
#include <string>

namespace tokenchain {

// All library failures derive from Error; the category string is what the
// CLI prints and maps onto an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define TOKENCHAIN_ERROR(Name, cat)                                   \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(cat, what) {}      \
  };

TOKENCHAIN_ERROR(DimensionError, "dimension")
TOKENCHAIN_ERROR(ParameterError, "parameter")
TOKENCHAIN_ERROR(IndexError, "index")
TOKENCHAIN_ERROR(NumericError, "numeric")
TOKENCHAIN_ERROR(InputError, "input")
TOKENCHAIN_ERROR(ConfigError, "config")
TOKENCHAIN_ERROR(ParseError, "parse")
TOKENCHAIN_ERROR(ResumeError, "resume")
TOKENCHAIN_ERROR(DivergenceError, "divergence")
TOKENCHAIN_ERROR(InfeasibleAlignmentError, "infeasible-alignment")
TOKENCHAIN_ERROR(DegenerateRatioError, "degenerate-ratio")
TOKENCHAIN_ERROR(PrerequisiteError, "missing-prerequisite")

#undef TOKENCHAIN_ERROR

}  // namespace tokenchain
