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

#include "tokenchain/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tokenchain/error.hpp"
#include "tokenchain/serialization.hpp"

namespace tokenchain::corpus {

namespace {

int sample_categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    if (u < weights[i]) return static_cast<int>(i);
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return static_cast<int>(i);
  throw InputError("sample_categorical: no positive weight");
}

// Semantic ids the source channel can emit (template heads and tails).
std::vector<int> active_ids(const ChannelSpec& spec) {
  std::set<int> ids;
  for (const auto& alts : spec.expansions)
    for (const auto& t : alts) ids.insert(t.tokens.begin(), t.tokens.end());
  return {ids.begin(), ids.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

void Vocabulary::validate() const {
  if (text_size < 8) throw ConfigError("text vocabulary must have at least 8 ids");
  if (semantic_size < 16) throw ConfigError("semantic vocabulary must have at least 16 ids");
  if (acoustic_size < 2) throw ConfigError("acoustic vocabulary must have at least 2 ids");
  if (num_acoustic_layers < 1) throw ConfigError("need at least one acoustic layer");
  if (semantic_size - first_regular - regular_text_count() < 2)
    throw ConfigError("semantic vocabulary too small for one head per text token plus tails");
}

std::string Vocabulary::word(int id) const {
  static const char* consonants = "bdgklmnprst";
  static const char* vowels = "aeiou";
  switch (id) {
    case pad: return "<pad>";
    case bos: return "<bos>";
    case eos: return "<eos>";
    default: break;
  }
  if (id < first_regular || id >= text_size) return "<unk>";
  const int k = id - first_regular;
  if (k >= 55) return "w" + std::to_string(k);
  auto syllable = [&](int j) {
    return std::string{consonants[j % 11], vowels[j % 5]};
  };
  // (k mod 11, k mod 5) is unique for k < 55, so the first syllable alone
  // makes spellings distinct.
  std::string w = syllable(k);
  if (k % 2 == 1) w += syllable(3 * k + 1);
  return w;
}

std::string Vocabulary::spell(std::span<const int> text) const {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (i) out += ' ';
    out += word(text[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel

void ChannelSpec::validate(const Vocabulary& vocab) const {
  if (static_cast<int>(expansions.size()) != vocab.text_size)
    throw ConfigError("channel expansion table does not cover the text vocabulary");
  for (int c = Vocabulary::first_regular; c < vocab.text_size; ++c) {
    const auto& alts = expansions[static_cast<std::size_t>(c)];
    if (alts.empty()) throw ConfigError("text id " + std::to_string(c) + " has no template");
    double total = 0.0;
    for (const auto& t : alts) {
      if (t.tokens.empty() || t.prob < 0.0) throw ConfigError("malformed template");
      for (int sid : t.tokens)
        if (sid < Vocabulary::first_regular || sid >= vocab.semantic_size)
          throw ConfigError("template id outside semantic vocabulary");
      total += t.prob;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw ConfigError("template probabilities of text id " + std::to_string(c) +
                        " do not sum to 1");
  }
  if (noise < 0.0 || noise >= 1.0 || jitter < 0.0 || jitter >= 1.0 ||
      acoustic_noise < 0.0 || acoustic_noise >= 1.0)
    throw ConfigError("channel probabilities must lie in [0, 1)");
  if (static_cast<int>(domain_map.size()) != vocab.semantic_size)
    throw ConfigError("domain map must cover the semantic vocabulary");
  std::vector<int> sorted = domain_map;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < vocab.semantic_size; ++i)
    if (sorted[static_cast<std::size_t>(i)] != i) throw ConfigError("domain map is not a permutation");
  if (speaker_count < 1) throw ConfigError("need at least one speaker");
}

int ChannelSpec::head_owner(int semantic_id) const {
  for (std::size_t c = 0; c < expansions.size(); ++c)
    for (const auto& t : expansions[c])
      if (t.tokens.front() == semantic_id) return static_cast<int>(c);
  return -1;
}

std::vector<int> ChannelSpec::decode(std::span<const int> semantic) const {
  std::vector<int> inverse(domain_map.size());
  for (std::size_t i = 0; i < domain_map.size(); ++i)
    inverse[static_cast<std::size_t>(domain_map[i])] = static_cast<int>(i);
  std::vector<int> owner_of(domain_map.size(), -1);
  for (std::size_t i = 0; i < domain_map.size(); ++i) owner_of[i] = head_owner(static_cast<int>(i));

  std::vector<int> text;
  int prev = -1;
  for (int sid : semantic) {
    if (sid < 0 || static_cast<std::size_t>(sid) >= inverse.size()) {
      prev = -1;
      continue;
    }
    const int u = inverse[static_cast<std::size_t>(sid)];
    if (u == prev) continue;  // jitter repeat
    prev = u;
    const int owner = owner_of[static_cast<std::size_t>(u)];
    if (owner >= 0) text.push_back(owner);
  }
  return text;
}

ChannelSpec make_source_channel(const Vocabulary& vocab, const ChannelParams& params,
                                std::uint64_t seed) {
  vocab.validate();
  if (params.max_templates < 1 || params.max_template_len < 1)
    throw ConfigError("template counts must be positive");
  Rng rng(derive_seed({seed, 0x5eed}));
  const int n_text = vocab.regular_text_count();
  const int rest = vocab.semantic_size - Vocabulary::first_regular - n_text;
  const int n_tails = (rest + 1) / 2;

  std::vector<int> heads(static_cast<std::size_t>(n_text));
  std::iota(heads.begin(), heads.end(), Vocabulary::first_regular);
  std::shuffle(heads.begin(), heads.end(), rng);
  const int tail0 = Vocabulary::first_regular + n_text;

  ChannelSpec spec;
  spec.expansions.assign(static_cast<std::size_t>(vocab.text_size), {});
  for (int c = Vocabulary::first_regular; c < vocab.text_size; ++c) {
    const int head = heads[static_cast<std::size_t>(c - Vocabulary::first_regular)];
    const int count = uniform_int(rng, 1, params.max_templates);
    std::vector<Template> alts;
    int guard = 0;
    while (static_cast<int>(alts.size()) < count && guard++ < 100) {
      Template t;
      t.tokens.push_back(head);
      const int len = uniform_int(rng, 1, params.max_template_len);
      for (int i = 1; i < len; ++i) t.tokens.push_back(tail0 + uniform_int(rng, 0, n_tails - 1));
      const bool dup = std::any_of(alts.begin(), alts.end(),
                                   [&](const Template& o) { return o.tokens == t.tokens; });
      if (!dup) {
        t.prob = 0.2 + uniform01(rng);
        alts.push_back(std::move(t));
      }
    }
    double total = 0.0;
    for (const auto& t : alts) total += t.prob;
    for (auto& t : alts) t.prob /= total;
    spec.expansions[static_cast<std::size_t>(c)] = std::move(alts);
  }
  spec.noise = params.noise;
  spec.jitter = params.jitter;
  spec.domain_map.resize(static_cast<std::size_t>(vocab.semantic_size));
  std::iota(spec.domain_map.begin(), spec.domain_map.end(), 0);
  spec.speaker_count = params.speaker_count;
  spec.acoustic_noise = params.acoustic_noise;
  spec.acoustic_key = derive_seed({seed, 0xac0});
  spec.validate(vocab);
  return spec;
}

ChannelSpec make_shifted_channel(const ChannelSpec& source, const Vocabulary& vocab,
                                 const ShiftParams& params, std::uint64_t seed) {
  ChannelSpec spec = source;
  Rng rng(derive_seed({seed, 0x5417}));
  std::vector<int> active = active_ids(source);
  std::vector<int> reserved;
  for (int i = Vocabulary::first_regular; i < vocab.semantic_size; ++i)
    if (!std::binary_search(active.begin(), active.end(), i)) reserved.push_back(i);
  std::shuffle(active.begin(), active.end(), rng);
  const int swaps = std::min({params.swapped_ids, static_cast<int>(reserved.size()),
                              static_cast<int>(active.size())});
  for (int i = 0; i < swaps; ++i) {
    const int u = active[static_cast<std::size_t>(i)];
    const int r = reserved[static_cast<std::size_t>(i)];
    std::swap(spec.domain_map[static_cast<std::size_t>(u)],
              spec.domain_map[static_cast<std::size_t>(r)]);
  }
  spec.noise = params.noise;
  spec.jitter = params.jitter;
  spec.validate(vocab);
  return spec;
}

TextModel make_text_model(const Vocabulary& vocab, std::uint64_t seed) {
  vocab.validate();
  Rng rng(derive_seed({seed, 0x7e47}));
  const auto C = static_cast<std::size_t>(vocab.text_size);
  TextModel lm;
  lm.initial.assign(C, 0.0);
  lm.transition.assign(C, std::vector<double>(C, 0.0));
  const int n = vocab.regular_text_count();
  for (int c = Vocabulary::first_regular; c < vocab.text_size; ++c)
    lm.initial[static_cast<std::size_t>(c)] = 1.0 / n;
  static constexpr double preferred[] = {0.4, 0.25, 0.15, 0.1};
  for (int p = Vocabulary::first_regular; p < vocab.text_size; ++p) {
    auto& row = lm.transition[static_cast<std::size_t>(p)];
    std::vector<int> others;
    for (int c = Vocabulary::first_regular; c < vocab.text_size; ++c)
      if (c != p) others.push_back(c);
    std::shuffle(others.begin(), others.end(), rng);
    const double spread = 0.1 / static_cast<double>(others.size());
    for (int c : others) row[static_cast<std::size_t>(c)] = spread;
    for (std::size_t i = 0; i < 4 && i < others.size(); ++i)
      row[static_cast<std::size_t>(others[i])] += preferred[i];
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& w : row) w /= total;
  }
  return lm;
}

std::vector<int> sample_text(const TextModel& lm, int min_len, int max_len, Rng& rng) {
  if (min_len < 1 || max_len < min_len) throw ConfigError("bad text length range");
  const int len = uniform_int(rng, min_len, max_len);
  std::vector<int> text;
  text.push_back(sample_categorical(lm.initial, rng));
  while (static_cast<int>(text.size()) < len)
    text.push_back(sample_categorical(lm.transition[static_cast<std::size_t>(text.back())], rng));
  return text;
}

int acoustic_code(const ChannelSpec& spec, const Vocabulary& vocab, int semantic_id,
                  int layer, int speaker) {
  const auto v = static_cast<std::uint64_t>(vocab.acoustic_size);
  const std::uint64_t base =
      mix64(spec.acoustic_key ^ mix64(static_cast<std::uint64_t>(semantic_id) * 131u +
                                      static_cast<std::uint64_t>(layer))) % v;
  const std::uint64_t offset =
      mix64(spec.acoustic_key ^ 0xabcULL ^
            mix64(static_cast<std::uint64_t>(speaker) * 977u + static_cast<std::uint64_t>(layer))) % v;
  return static_cast<int>((base + offset) % v);
}

Utterance synthesize_utterance(const ChannelSpec& spec, const Vocabulary& vocab,
                               std::span<const int> text, int speaker, std::uint64_t seed,
                               Domain domain, SynthesisTrace* trace) {
  if (text.empty()) throw InputError("synthesize_utterance: empty text");
  for (int c : text)
    if (c < Vocabulary::first_regular || c >= vocab.text_size ||
        spec.expansions[static_cast<std::size_t>(c)].empty())
      throw InputError("synthesize_utterance: text id " + std::to_string(c) + " not expandable");
  if (speaker < 0 || speaker >= spec.speaker_count)
    throw InputError("synthesize_utterance: speaker out of range");

  Rng rng(seed);
  std::vector<int> expanded;
  for (int c : text) {
    const auto& alts = spec.expansions[static_cast<std::size_t>(c)];
    std::vector<double> w;
    for (const auto& t : alts) w.push_back(t.prob);
    const auto& chosen = alts[static_cast<std::size_t>(sample_categorical(w, rng))];
    expanded.insert(expanded.end(), chosen.tokens.begin(), chosen.tokens.end());
  }
  std::vector<int> clean;
  for (int sid : expanded) {
    clean.push_back(sid);
    if (uniform01(rng) < spec.jitter) clean.push_back(sid);
  }
  const std::vector<int> active = active_ids(spec);
  std::vector<int> noisy = clean;
  std::vector<std::uint8_t> substituted(clean.size(), 0);
  for (std::size_t t = 0; t < noisy.size(); ++t) {
    if (uniform01(rng) < spec.noise && active.size() > 1) {
      int r;
      do {
        r = active[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(active.size()) - 1))];
      } while (r == noisy[t]);
      noisy[t] = r;
      substituted[t] = 1;
    }
  }

  Utterance u;
  u.y.assign(text.begin(), text.end());
  u.s.reserve(noisy.size());
  for (int sid : noisy) u.s.push_back(spec.domain_map[static_cast<std::size_t>(sid)]);
  u.domain = domain;
  u.speaker = speaker;
  const auto rows = static_cast<std::size_t>(vocab.num_acoustic_layers);
  u.a.assign(rows, std::vector<int>(u.s.size()));
  for (std::size_t l = 0; l < rows; ++l)
    for (std::size_t t = 0; t < u.s.size(); ++t) {
      int code = acoustic_code(spec, vocab, u.s[t], static_cast<int>(l), speaker);
      if (uniform01(rng) < spec.acoustic_noise)
        code = uniform_int(rng, 0, vocab.acoustic_size - 1);
      u.a[l][t] = code;
    }
  if (trace) {
    trace->clean = std::move(clean);
    trace->substituted = std::move(substituted);
  }
  return u;
}

std::string to_string(Domain d) { return d == Domain::source ? "source" : "shifted"; }

Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "shifted") return Domain::shifted;
  throw ParseError("unknown domain '" + s + "'");
}

// ---------------------------------------------------------------------------
// Splits

void CorpusConfig::validate() const {
  vocab.validate();
  if (min_len < 1 || max_len < min_len) throw ConfigError("bad utterance length range");
  const int sizes_arr[] = {sizes.pretrain,      sizes.chain_train, sizes.chain_dev,
                           sizes.chain_test,    sizes.shifted_train, sizes.shifted_dev,
                           sizes.shifted_test};
  for (int i = 0; i < 7; ++i) {
    const bool shifted = i >= 4;
    if (sizes_arr[i] < 0 || (sizes_arr[i] == 0 && (!shifted || with_shifted)))
      throw ConfigError("split " + split_names()[static_cast<std::size_t>(i)] +
                        " must have a positive size");
    if (static_cast<std::uint64_t>(sizes_arr[i]) > seed_block)
      throw ConfigError("split larger than its seed block");
  }
  if (seed_bases.size() != 7) throw ConfigError("need one seed base per split");
  std::vector<std::uint64_t> sorted = seed_bases;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] - sorted[i - 1] < seed_block)
      throw ConfigError("split seed ranges overlap");
}

const Split& Corpora::split(const std::string& name) const {
  return const_cast<Corpora*>(this)->split(name);
}

Split& Corpora::split(const std::string& name) {
  if (name == "pretrain") return pretrain;
  if (name == "chain_train") return chain_train;
  if (name == "chain_dev") return chain_dev;
  if (name == "chain_test") return chain_test;
  if (name == "shifted_train") return shifted_train;
  if (name == "shifted_dev") return shifted_dev;
  if (name == "shifted_test") return shifted_test;
  throw InputError("unknown split '" + name + "'");
}

Corpora build_corpora(const CorpusConfig& config) {
  config.validate();
  Corpora c;
  c.vocab = config.vocab;
  c.source_channel = make_source_channel(config.vocab, config.channel, derive_seed({config.seed, 1}));
  c.shifted_channel =
      make_shifted_channel(c.source_channel, config.vocab, config.shift, derive_seed({config.seed, 2}));
  c.text_model = make_text_model(config.vocab, derive_seed({config.seed, 3}));

  const int sizes[] = {config.sizes.pretrain,      config.sizes.chain_train,
                       config.sizes.chain_dev,     config.sizes.chain_test,
                       config.sizes.shifted_train, config.sizes.shifted_dev,
                       config.sizes.shifted_test};
  std::set<std::vector<int>> used_texts;
  for (std::size_t k = 0; k < 7; ++k) {
    const bool shifted = k >= 4;
    if (shifted && !config.with_shifted) continue;
    const ChannelSpec& channel = shifted ? c.shifted_channel : c.source_channel;
    Split& out = c.split(split_names()[k]);
    std::uint64_t attempt = 0;
    while (static_cast<int>(out.size()) < sizes[k]) {
      if (attempt >= config.seed_block)
        throw ConfigError("seed block of split " + split_names()[k] + " exhausted");
      const std::uint64_t useed = config.seed_bases[k] + attempt++;
      Rng rng(derive_seed({config.seed, useed}));
      std::vector<int> text = sample_text(c.text_model, config.min_len, config.max_len, rng);
      if (!used_texts.insert(text).second) continue;
      const int speaker = uniform_int(rng, 0, channel.speaker_count - 1);
      out.push_back(synthesize_utterance(channel, c.vocab, text, speaker,
                                         derive_seed({config.seed, useed, 7}),
                                         shifted ? Domain::shifted : Domain::source));
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// File format

namespace {

void append_csv(std::string& out, std::span<const int> ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(std::move(cur));
  return parts;
}

int parse_int(const std::string& field, std::size_t line, const char* what) {
  int v = 0;
  const char* b = field.data();
  const char* e = b + field.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (field.empty() || ec != std::errc() || p != e)
    throw ParseError("line " + std::to_string(line) + ": bad " + what + " value '" + field + "'");
  return v;
}

std::vector<int> parse_csv(const std::string& field, std::size_t line, const char* what) {
  if (field.empty()) throw ParseError("line " + std::to_string(line) + ": empty " + what);
  std::vector<int> out;
  for (const auto& part : split_on(field, ',')) out.push_back(parse_int(part, line, what));
  return out;
}

}  // namespace

std::string format_utterance(const Utterance& u) {
  std::string out = to_string(u.domain);
  out += '\t';
  out += std::to_string(u.speaker);
  out += '\t';
  append_csv(out, u.y);
  out += '\t';
  append_csv(out, u.s);
  out += '\t';
  for (std::size_t r = 0; r < u.a.size(); ++r) {
    if (r) out += ';';
    append_csv(out, u.a[r]);
  }
  return out;
}

Utterance parse_utterance(const std::string& line, std::size_t n) {
  const auto fields = split_on(line, '\t');
  if (fields.size() != 5)
    throw ParseError("line " + std::to_string(n) + ": expected 5 tab-separated fields, got " +
                     std::to_string(fields.size()));
  Utterance u;
  try {
    u.domain = domain_from_string(fields[0]);
  } catch (const ParseError& e) {
    throw ParseError("line " + std::to_string(n) + ": " + e.what());
  }
  u.speaker = parse_int(fields[1], n, "speaker");
  u.y = parse_csv(fields[2], n, "text");
  u.s = parse_csv(fields[3], n, "semantic");
  for (const auto& row : split_on(fields[4], ';')) {
    u.a.push_back(parse_csv(row, n, "acoustic"));
    if (u.a.back().size() != u.s.size())
      throw ParseError("line " + std::to_string(n) + ": acoustic row length " +
                       std::to_string(u.a.back().size()) + " differs from T=" +
                       std::to_string(u.s.size()));
  }
  return u;
}

void save_split(const std::filesystem::path& path, const Split& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& u : split) out << format_utterance(u) << '\n';
}

Split load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PrerequisiteError("corpus split " + path.string() +
                                   " not found (run gen-data first)");
  Split split;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r')
      throw ParseError("line " + std::to_string(n) + ": CR line endings are not accepted");
    split.push_back(parse_utterance(line, n));
  }
  return split;
}

void save_corpora(const std::filesystem::path& dir, const Corpora& c) {
  std::filesystem::create_directories(dir);
  nlohmann::json world;
  world["format"] = "tokenchain-corpus";
  world["version"] = 1;
  world["vocab"] = c.vocab;
  world["source_channel"] = c.source_channel;
  world["shifted_channel"] = c.shifted_channel;
  world["text_model"] = c.text_model;
  std::ofstream(dir / "world.json") << world.dump(1) << '\n';
  for (const auto& name : split_names()) {
    const Split& s = c.split(name);
    if (!s.empty()) save_split(dir / (name + ".tsv"), s);
  }
}

Corpora load_corpora(const std::filesystem::path& dir) {
  const auto world_path = dir / "world.json";
  std::ifstream in(world_path);
  if (!in) throw PrerequisiteError("no corpus at " + dir.string() + "; run `tokenchain gen-data --out " + dir.string() + "` first");
  nlohmann::json world;
  try {
    world = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(world_path.string() + ": " + e.what());
  }
  Corpora c;
  try {
    c.vocab = world.at("vocab").get<Vocabulary>();
    c.source_channel = world.at("source_channel").get<ChannelSpec>();
    c.shifted_channel = world.at("shifted_channel").get<ChannelSpec>();
    c.text_model = world.at("text_model").get<TextModel>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(world_path.string() + ": " + e.what());
  }
  for (const auto& name : split_names()) {
    const auto p = dir / (name + ".tsv");
    if (std::filesystem::exists(p)) c.split(name) = load_split(p);
  }
  return c;
}

double semantic_unigram_tv(const Split& a, const Split& b, int semantic_size) {
  auto hist = [&](const Split& split) {
    std::vector<double> h(static_cast<std::size_t>(semantic_size), 0.0);
    double n = 0.0;
    for (const auto& u : split)
      for (int sid : u.s) {
        h[static_cast<std::size_t>(sid)] += 1.0;
        n += 1.0;
      }
    for (double& x : h) x /= std::max(1.0, n);
    return h;
  };
  const auto ha = hist(a);
  const auto hb = hist(b);
  double tv = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) tv += std::abs(ha[i] - hb[i]);
  return 0.5 * tv;
}

}  // namespace tokenchain::corpus
