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

// JSON container helpers: parameter and optimizer state encoding, config
// hashing and atomic file IO. Values are stored as JSON numbers, which
// round-trip doubles exactly.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tokenchain/nn.hpp"

namespace tokenchain::checkpoint {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kFormatName = "tokenchain-checkpoint";

// FNV-1a over the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

nlohmann::json params_to_json(const nn::ParamSet& params);
// Names and shapes must match exactly; throws ResumeError otherwise.
void params_from_json(const nlohmann::json& j, nn::ParamSet& params);

nlohmann::json optimizer_to_json(const nn::AdamW& opt);
void optimizer_from_json(const nlohmann::json& j, nn::AdamW& opt, const nn::ParamSet& params);

// Writes through a temporary file and renames it into place.
void write_json(const std::filesystem::path& path, const nlohmann::json& j, int indent = -1);
// Missing file -> PrerequisiteError naming `producer`; malformed -> ParseError.
nlohmann::json read_json(const std::filesystem::path& path, const std::string& producer);

}  // namespace tokenchain::checkpoint
