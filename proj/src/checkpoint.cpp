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

#include "tokenchain/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>

#include "tokenchain/error.hpp"

namespace tokenchain::checkpoint {

using nlohmann::json;

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json params_to_json(const nn::ParamSet& params) {
  json out = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensors()[i];
    out.push_back({{"name", params.names()[i]},
                   {"shape", t.shape()},
                   {"data", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  return out;
}

void params_from_json(const json& j, nn::ParamSet& params) {
  if (!j.is_array() || j.size() != params.size())
    throw ResumeError("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = j[i];
    auto& t = params.tensors()[i];
    if (entry.at("name").get<std::string>() != params.names()[i])
      throw ResumeError("checkpoint parameter '" + entry.at("name").get<std::string>() +
                        "' does not match model parameter '" + params.names()[i] + "'");
    if (entry.at("shape").get<ad::Shape>() != t.shape())
      throw ResumeError("checkpoint shape mismatch for parameter " + params.names()[i]);
    const auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != t.size()) throw ResumeError("checkpoint data size mismatch for " + params.names()[i]);
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
}

json optimizer_to_json(const nn::AdamW& opt) {
  return {{"steps", opt.steps()}, {"m", opt.first_moments()}, {"v", opt.second_moments()}};
}

void optimizer_from_json(const json& j, nn::AdamW& opt, const nn::ParamSet& params) {
  auto m = j.at("m").get<std::vector<std::vector<double>>>();
  auto v = j.at("v").get<std::vector<std::vector<double>>>();
  if (!m.empty()) {
    if (m.size() != params.size() || v.size() != params.size())
      throw ResumeError("optimizer state does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (m[i].size() != params.tensors()[i].size() || v[i].size() != params.tensors()[i].size())
        throw ResumeError("optimizer moment size mismatch for " + params.names()[i]);
  }
  opt.restore(j.at("steps").get<long long>(), std::move(m), std::move(v));
}

void write_json(const std::filesystem::path& path, const json& j, int indent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw InputError("cannot write " + tmp.string());
    out << j.dump(indent) << '\n';
    if (!out) throw InputError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

json read_json(const std::filesystem::path& path, const std::string& producer) {
  std::ifstream in(path);
  if (!in)
    throw PrerequisiteError(path.string() + " not found; run `" + producer + "` first");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace tokenchain::checkpoint
