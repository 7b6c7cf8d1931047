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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "tokenchain/error.hpp"

namespace tokenchain::corpus {
namespace {

Vocabulary default_vocab() { return Vocabulary{}; }

std::vector<int> draw_text(const TextModel& lm, std::uint64_t seed, int lo = 4, int hi = 16) {
  Rng rng(seed);
  return sample_text(lm, lo, hi, rng);
}

// Every way of cutting `s` into a sequence of templates; returns the text of
// each complete parse. Exponential, fine for short noiseless utterances.
void enumerate_parses(const ChannelSpec& spec, const std::vector<int>& s, std::size_t pos,
                      std::vector<int>& text, std::set<std::vector<int>>& out) {
  if (pos == s.size()) {
    out.insert(text);
    return;
  }
  for (std::size_t c = 0; c < spec.expansions.size(); ++c)
    for (const auto& t : spec.expansions[c]) {
      if (pos + t.tokens.size() > s.size()) continue;
      if (!std::equal(t.tokens.begin(), t.tokens.end(), s.begin() + static_cast<long>(pos)))
        continue;
      text.push_back(static_cast<int>(c));
      enumerate_parses(spec, s, pos + t.tokens.size(), text, out);
      text.pop_back();
    }
}

TEST(Vocabulary, Invariants) {
  Vocabulary v;
  EXPECT_NO_THROW(v.validate());
  v.text_size = 7;
  EXPECT_THROW(v.validate(), ConfigError);
  v = Vocabulary{};
  v.semantic_size = 15;
  EXPECT_THROW(v.validate(), ConfigError);
  Vocabulary w;
  std::set<std::string> words;
  for (int c = Vocabulary::first_regular; c < w.text_size; ++c) words.insert(w.word(c));
  EXPECT_EQ(static_cast<int>(words.size()), w.regular_text_count());
}

TEST(Synthesize, NoiselessOneToOneChannelIsTheTableImage) {
  const Vocabulary vocab = default_vocab();
  ChannelParams p;
  p.noise = 0.0;
  p.jitter = 0.0;
  p.acoustic_noise = 0.0;
  p.max_templates = 1;
  p.max_template_len = 1;
  const ChannelSpec spec = make_source_channel(vocab, p, 3);
  const TextModel lm = make_text_model(vocab, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto text = draw_text(lm, seed);
    const Utterance u = synthesize_utterance(spec, vocab, text, 1, seed);
    ASSERT_EQ(u.s.size(), u.y.size());
    for (std::size_t i = 0; i < text.size(); ++i)
      EXPECT_EQ(u.s[i], spec.expansions[static_cast<std::size_t>(text[i])][0].tokens[0]);
  }
}

TEST(Synthesize, SameSeedSameUtterance) {
  const Vocabulary vocab = default_vocab();
  const ChannelSpec spec = make_source_channel(vocab, ChannelParams{}, 9);
  const auto text = draw_text(make_text_model(vocab, 9), 4);
  EXPECT_EQ(synthesize_utterance(spec, vocab, text, 2, 77),
            synthesize_utterance(spec, vocab, text, 2, 77));
}

TEST(Synthesize, EmptyTextIsAnInputError) {
  const Vocabulary vocab = default_vocab();
  const ChannelSpec spec = make_source_channel(vocab, ChannelParams{}, 9);
  EXPECT_THROW(synthesize_utterance(spec, vocab, {}, 0, 1), InputError);
  const int special[] = {Vocabulary::eos};
  EXPECT_THROW(synthesize_utterance(spec, vocab, special, 0, 1), InputError);
}

TEST(Synthesize, SubstitutionRateMatchesNoise) {
  const Vocabulary vocab = default_vocab();
  ChannelParams p;
  p.noise = 0.1;
  const ChannelSpec spec = make_source_channel(vocab, p, 5);
  const TextModel lm = make_text_model(vocab, 5);
  std::size_t tokens = 0, subs = 0;
  for (std::uint64_t seed = 0; tokens < 10000; ++seed) {
    SynthesisTrace trace;
    const Utterance u = synthesize_utterance(spec, vocab, draw_text(lm, seed), 0, seed,
                                             Domain::source, &trace);
    for (std::size_t t = 0; t < u.s.size(); ++t) {
      ++tokens;
      subs += trace.substituted[t];
      EXPECT_EQ(trace.substituted[t] != 0, u.s[t] != trace.clean[t]);
    }
  }
  EXPECT_NEAR(static_cast<double>(subs) / static_cast<double>(tokens), 0.1, 0.01);
}

TEST(Synthesize, UtteranceInvariants) {
  const Vocabulary vocab = default_vocab();
  const ChannelSpec spec = make_source_channel(vocab, ChannelParams{}, 1);
  const TextModel lm = make_text_model(vocab, 1);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto text = draw_text(lm, seed);
    SynthesisTrace trace;
    const Utterance u = synthesize_utterance(spec, vocab, text, static_cast<int>(seed % 4), seed,
                                             Domain::source, &trace);
    const std::size_t L = u.y.size(), T = u.s.size();
    EXPECT_GE(L, 1u);
    EXPECT_LE(L, T);
    // Expansion gives at most three tokens per text token; jitter can at most
    // double that.
    EXPECT_LE(T, 6 * L);
    for (int sid : u.s) {
      EXPECT_GE(sid, 0);
      EXPECT_LT(sid, vocab.semantic_size);
    }
    ASSERT_EQ(u.a.size(), static_cast<std::size_t>(vocab.num_acoustic_layers));
    for (const auto& row : u.a) {
      ASSERT_EQ(row.size(), T);
      for (int code : row) {
        EXPECT_GE(code, 0);
        EXPECT_LT(code, vocab.acoustic_size);
      }
    }
  }
}

TEST(Channel, ProbabilitiesSumToOne) {
  const Vocabulary vocab = default_vocab();
  const ChannelSpec spec = make_source_channel(vocab, ChannelParams{}, 13);
  for (int c = Vocabulary::first_regular; c < vocab.text_size; ++c) {
    double total = 0.0;
    for (const auto& t : spec.expansions[static_cast<std::size_t>(c)]) total += t.prob;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  ChannelSpec broken = spec;
  broken.expansions[5][0].prob += 0.5;
  EXPECT_THROW(broken.validate(vocab), ConfigError);
}

TEST(Channel, BruteForceParseRecoversTextOnNoiselessOutput) {
  const Vocabulary vocab = default_vocab();
  ChannelParams p;
  p.noise = 0.0;
  p.jitter = 0.0;
  const ChannelSpec spec = make_source_channel(vocab, p, 21);
  const TextModel lm = make_text_model(vocab, 21);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto text = draw_text(lm, seed, 2, 8);
    const Utterance u = synthesize_utterance(spec, vocab, text, 0, seed);
    std::set<std::vector<int>> parses;
    std::vector<int> scratch;
    enumerate_parses(spec, u.s, 0, scratch, parses);
    ASSERT_EQ(parses.size(), 1u) << "ambiguous channel output";
    EXPECT_EQ(*parses.begin(), text);
    EXPECT_EQ(spec.decode(u.s), text);
  }
}

TEST(Channel, DecoderErrorBelowFivePercentWithJitterOnly) {
  const Vocabulary vocab = default_vocab();
  ChannelParams p;
  p.noise = 0.0;
  p.jitter = 0.3;
  const ChannelSpec spec = make_source_channel(vocab, p, 8);
  const TextModel lm = make_text_model(vocab, 8);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto text = draw_text(lm, seed);
    EXPECT_EQ(spec.decode(synthesize_utterance(spec, vocab, text, 0, seed).s), text);
  }
}

TEST(Channel, ShiftedDecoderInvertsDomainMap) {
  const Vocabulary vocab = default_vocab();
  ChannelParams p;
  p.noise = 0.0;
  p.jitter = 0.0;
  const ChannelSpec src = make_source_channel(vocab, p, 8);
  ShiftParams sp;
  sp.noise = 0.0;
  sp.jitter = 0.0;
  const ChannelSpec shifted = make_shifted_channel(src, vocab, sp, 8);
  EXPECT_NE(shifted.domain_map, src.domain_map);
  const TextModel lm = make_text_model(vocab, 8);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto text = draw_text(lm, seed);
    EXPECT_EQ(shifted.decode(synthesize_utterance(shifted, vocab, text, 0, seed).s), text);
  }
}

CorpusConfig small_config() {
  CorpusConfig cfg;
  cfg.sizes = {40, 60, 20, 20, 60, 20, 20};
  return cfg;
}

TEST(BuildCorpora, SevenDisjointSplitsOfStatedSizes) {
  CorpusConfig cfg;
  cfg.sizes.pretrain = 500;
  cfg.sizes.chain_train = 5000;
  cfg.sizes.shifted_train = 5000;
  const Corpora c = build_corpora(cfg);
  EXPECT_EQ(c.pretrain.size(), 500u);
  EXPECT_EQ(c.chain_train.size(), 5000u);
  EXPECT_EQ(c.chain_dev.size(), 200u);
  EXPECT_EQ(c.chain_test.size(), 200u);
  EXPECT_EQ(c.shifted_train.size(), 5000u);
  EXPECT_EQ(c.shifted_dev.size(), 200u);
  EXPECT_EQ(c.shifted_test.size(), 200u);

  std::set<std::vector<int>> seen;
  std::size_t total = 0;
  for (const auto& name : split_names())
    for (const auto& u : c.split(name)) {
      seen.insert(u.y);
      ++total;
    }
  EXPECT_EQ(seen.size(), total);

  std::set<std::vector<int>> pre;
  for (const auto& u : c.pretrain) pre.insert(u.y);
  for (const auto& u : c.chain_train) EXPECT_FALSE(pre.count(u.y));

  EXPECT_GT(semantic_unigram_tv(c.shifted_dev, c.chain_dev, c.vocab.semantic_size), 0.2);
  for (const auto& u : c.shifted_dev) EXPECT_EQ(u.domain, Domain::shifted);
  for (const auto& u : c.chain_dev) EXPECT_EQ(u.domain, Domain::source);
}

TEST(BuildCorpora, OverlappingSeedsAreAConfigError) {
  CorpusConfig cfg = small_config();
  cfg.seed_bases[3] = cfg.seed_bases[2] + 10;
  EXPECT_THROW(build_corpora(cfg), ConfigError);
  cfg = small_config();
  cfg.sizes.chain_dev = 0;
  EXPECT_THROW(build_corpora(cfg), ConfigError);
}

TEST(BuildCorpora, StatisticsMatchChannelWithinThreeSigma) {
  CorpusConfig cfg = small_config();
  cfg.sizes.chain_train = 2000;
  cfg.channel.noise = 0.08;
  cfg.channel.jitter = 0.15;
  const Corpora c = build_corpora(cfg);
  const ChannelSpec& spec = c.source_channel;
  const double j = spec.jitter;
  double expected_T = 0.0, var_T = 0.0, observed_T = 0.0, tokens = 0.0;
  for (const auto& u : c.chain_train) {
    for (int y : u.y) {
      double mu = 0.0, m2 = 0.0;
      for (const auto& t : spec.expansions[static_cast<std::size_t>(y)]) {
        const double len = static_cast<double>(t.tokens.size());
        mu += t.prob * len;
        m2 += t.prob * len * len;
      }
      expected_T += mu * (1.0 + j);
      var_T += (m2 - mu * mu) * (1.0 + j) * (1.0 + j) + mu * j * (1.0 - j);
    }
    observed_T += static_cast<double>(u.s.size());
  }
  EXPECT_LT(std::abs(observed_T - expected_T), 3.0 * std::sqrt(var_T));

  // Noise rate via regeneration with the same seeds and a trace.
  double subs = 0.0;
  for (std::uint64_t seed = 0; tokens < 20000; ++seed) {
    SynthesisTrace trace;
    const auto u = synthesize_utterance(spec, c.vocab, draw_text(c.text_model, seed), 0, seed,
                                        Domain::source, &trace);
    for (auto f : trace.substituted) subs += f;
    tokens += static_cast<double>(u.s.size());
  }
  const double p = spec.noise;
  EXPECT_LT(std::abs(subs - p * tokens), 3.0 * std::sqrt(tokens * p * (1 - p)));
}

class CorpusFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("tokenchain_corpus_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  static std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }
  std::filesystem::path dir_;
};

TEST_F(CorpusFiles, SaveLoadSaveIsByteIdentical) {
  const Corpora c = build_corpora(small_config());
  save_corpora(dir_ / "a", c);
  const Corpora back = load_corpora(dir_ / "a");
  save_corpora(dir_ / "b", back);
  for (const auto& name : split_names())
    EXPECT_EQ(slurp(dir_ / "a" / (name + ".tsv")), slurp(dir_ / "b" / (name + ".tsv"))) << name;
  EXPECT_EQ(slurp(dir_ / "a" / "world.json"), slurp(dir_ / "b" / "world.json"));
  EXPECT_EQ(back.chain_dev, c.chain_dev);
  EXPECT_EQ(back.shifted_channel, c.shifted_channel);
}

TEST_F(CorpusFiles, LineFormat) {
  Utterance u;
  u.y = {3, 4};
  u.s = {10, 11, 12};
  u.a = {{1, 2, 3}, {4, 5, 6}};
  u.domain = Domain::shifted;
  u.speaker = 2;
  EXPECT_EQ(format_utterance(u), "shifted\t2\t3,4\t10,11,12\t1,2,3;4,5,6");
  EXPECT_EQ(parse_utterance(format_utterance(u), 1), u);
}

TEST_F(CorpusFiles, MalformedLineReportsLineNumber) {
  const auto path = dir_ / "bad.tsv";
  std::ofstream(path) << "source\t0\t3,4\t10,11\t1,2\n"
                      << "source\t0\t3,x\t10,11\t1,2\n";
  try {
    load_split(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  std::ofstream(path) << "source\t0\t3\t10,11\t1\n";
  EXPECT_THROW(load_split(path), ParseError);
  EXPECT_THROW(load_corpora(dir_ / "missing"), PrerequisiteError);
}

}  // namespace
}  // namespace tokenchain::corpus
