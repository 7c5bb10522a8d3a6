#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "mutarjem/decode.hpp"
#include "support/oracles.hpp"

using namespace mutarjem;

namespace {

using Probs = std::map<std::string, double>;

/// Order-1 model over <pad> <s> </s> <unk> a b c from per-token tables.
TableModel chain_model(const std::map<std::string, Probs>& rows, Probs fallback = {{"</s>", 1.0}}) {
  nlohmann::json doc;
  doc["vocab"] = {"<pad>", "<s>", "</s>", "<unk>", "a", "b", "c"};
  doc["order"] = 1;
  doc["entries"] = nlohmann::json::array();
  const std::map<std::string, int> id{{"<s>", 1}, {"a", 4}, {"b", 5}, {"c", 6}};
  for (const auto& [prev, probs] : rows) doc["entries"].push_back({{"source", "*"}, {"prefix", {id.at(prev)}}, {"probs", probs}});
  doc["default"] = fallback;
  return TableModel::from_json(doc);
}

NextTokenDistribution abc() { return NextTokenDistribution::from_probs({0.5, 0.3, 0.2}); }

DecodeConfig config(SearchMethod m, std::size_t seq_length = 8) {
  DecodeConfig c;
  c.method = m;
  c.seq_length = seq_length;
  c.n_beam = 1;
  return c;
}

const TokenSeq kNoSource{};

}  // namespace

// --- truncation ---------------------------------------------------------------

TEST(TopK, KeepsTwoAndRenormalizes) {
  const auto d = truncate_top_k(abc(), 2);
  EXPECT_NEAR(d[0], 0.625, 1e-12);
  EXPECT_NEAR(d[1], 0.375, 1e-12);
  EXPECT_EQ(d[2], 0.0);
}

TEST(TopK, FullWidthIsIdentity) { EXPECT_EQ(truncate_top_k(abc(), 3), abc()); }

TEST(TopK, TieGoesToLowerId) {
  const auto d = truncate_top_k(NextTokenDistribution::from_probs({0.4, 0.4, 0.2}), 1);
  EXPECT_EQ(d[0], 1.0);
  EXPECT_EQ(d[1], 0.0);
}

TEST(TopK, OutOfRangeIsAnError) {
  EXPECT_THROW(truncate_top_k(abc(), 0), ConfigError);
  EXPECT_THROW(truncate_top_k(abc(), 4), ConfigError);
}

TEST(TopP, KeepsSmallestPrefixReachingP) {
  const auto d = truncate_top_p(abc(), 0.7);
  EXPECT_NEAR(d[0], 0.625, 1e-12);
  EXPECT_NEAR(d[1], 0.375, 1e-12);
  EXPECT_EQ(d[2], 0.0);
  const auto single = truncate_top_p(NextTokenDistribution::from_probs({0.9, 0.1}), 0.5);
  EXPECT_EQ(single[0], 1.0);
}

TEST(TopP, ExactBoundaryStillStops) {
  // 0.5 + 0.3 is 0.8 only up to rounding; the prefix {a, b} must suffice.
  const auto d = truncate_top_p(abc(), 0.8);
  EXPECT_EQ(d[2], 0.0);
}

TEST(TopP, OneIsIdentityAndRangeIsChecked) {
  EXPECT_EQ(truncate_top_p(abc(), 1.0), abc());
  EXPECT_THROW(truncate_top_p(abc(), 0.0), ConfigError);
  EXPECT_THROW(truncate_top_p(abc(), 1.01), ConfigError);
}

// --- no-repeat ------------------------------------------------------------------

TEST(NoRepeat, BansTokenCompletingSeenBigram) {
  const auto uniform = NextTokenDistribution::uniform(7);
  const TokenSeq prefix{1, 4, 5, 4};  // BOS a b a
  const auto d = apply_no_repeat_ngram(prefix, uniform, 2);
  EXPECT_EQ(d[5], 0.0);
  EXPECT_NEAR(d[4], 1.0 / 6.0, 1e-12);
}

TEST(NoRepeat, DisabledOrShortPrefixIsUnchanged) {
  const auto uniform = NextTokenDistribution::uniform(7);
  EXPECT_EQ(apply_no_repeat_ngram(TokenSeq{1, 4, 5, 4}, uniform, 0), uniform);
  EXPECT_EQ(apply_no_repeat_ngram(TokenSeq{1, 4}, uniform, 3), uniform);
}

TEST(NoRepeat, AllBannedFallsBackToUnmasked) {
  const auto only_a = NextTokenDistribution::from_probs({0, 0, 0, 0, 1, 0, 0});
  const TokenSeq prefix{1, 4, 4};
  EXPECT_EQ(apply_no_repeat_ngram(prefix, only_a, 2), only_a);
}

TEST(NoRepeat, ScanFindsDuplicates) {
  EXPECT_TRUE(has_repeated_ngram(TokenSeq{1, 4, 5, 4, 5}, 2));
  EXPECT_FALSE(has_repeated_ngram(TokenSeq{1, 4, 5, 4, 6}, 2));
  EXPECT_FALSE(has_repeated_ngram(TokenSeq{1, 4, 5, 4, 5}, 3));
}

// --- config ---------------------------------------------------------------------

TEST(DecodeConfig, RejectsInconsistentSettings) {
  DecodeConfig c;
  c.max_outputs = 2;
  EXPECT_THROW(c.validate(), ConfigError);  // greedy with 2 outputs
  c.method = SearchMethod::beam;
  c.n_beam = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.n_beam = 2;
  EXPECT_NO_THROW(c.validate());
  c.top_p = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.top_p = 1.0;
  c.seq_length = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_search_method("viterbi"), ConfigError);
}

// --- greedy ---------------------------------------------------------------------

TEST(Greedy, FollowsArgmaxChain) {
  const auto m = chain_model({{"<s>", {{"a", 0.6}, {"b", 0.3}, {"</s>", 0.1}}}, {"a", {{"</s>", 0.9}, {"a", 0.1}}}});
  const auto out = greedy_decode(m, kNoSource, config(SearchMethod::greedy));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].ids, (TokenSeq{1, 4, 2}));
  EXPECT_NEAR(out[0].score, std::log(0.54), 1e-12);
  EXPECT_TRUE(out[0].finished);
  EXPECT_FALSE(out[0].capped);
}

TEST(Greedy, ImmediateEos) {
  const auto m = chain_model({{"<s>", {{"</s>", 1.0}}}});
  const auto out = greedy_decode(m, kNoSource, config(SearchMethod::greedy));
  EXPECT_EQ(out[0].ids, (TokenSeq{1, 2}));
  EXPECT_EQ(out[0].score, 0.0);
}

TEST(Greedy, StopsAtLengthCap) {
  const auto m = chain_model({{"<s>", {{"a", 1.0}}}, {"a", {{"a", 0.9}, {"</s>", 0.1}}}});
  const auto out = greedy_decode(m, kNoSource, config(SearchMethod::greedy, 4));
  EXPECT_EQ(out[0].ids, (TokenSeq{1, 4, 4, 4}));
  EXPECT_TRUE(out[0].capped);
}

TEST(Greedy, TrapModelGreedyMissesWhileBeamFindsOracle) {
  // Greedy takes a (0.55) then ends with probability 0.55*0.4*0.5 = 0.11;
  // the best sequence is b EOS at 0.45*0.9 = 0.405.
  const auto m = chain_model({{"<s>", {{"a", 0.55}, {"b", 0.45}}},
                              {"a", {{"c", 0.4}, {"</s>", 0.3}, {"a", 0.3}}},
                              {"b", {{"</s>", 0.9}, {"b", 0.1}}},
                              {"c", {{"</s>", 0.5}, {"c", 0.5}}}});
  const auto oracle_top = oracle::all_sequences(m, {}, 4).front();
  const auto greedy = greedy_decode(m, kNoSource, config(SearchMethod::greedy, 4)).front();
  EXPECT_NE(greedy.ids, oracle_top.ids);
  EXPECT_NEAR(greedy.score, std::log(0.11), 1e-12);

  auto cfg = config(SearchMethod::beam, 4);
  cfg.n_beam = 4;
  const auto beam = beam_decode(m, kNoSource, cfg).front();
  EXPECT_EQ(beam.ids, oracle_top.ids);
  EXPECT_NEAR(beam.score, std::log(0.405), 1e-12);
}

TEST(Greedy, RejectsMultipleOutputs) {
  const auto m = chain_model({});
  auto cfg = config(SearchMethod::greedy);
  cfg.max_outputs = 2;
  EXPECT_THROW(greedy_decode(m, kNoSource, cfg), ConfigError);
}

// --- beam -----------------------------------------------------------------------

TEST(Beam, WidthOneMatchesGreedyOnRandomModels) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_table_model(rng, 4 + trial % 3, 1 + trial % 3);
    const std::size_t len = 2 + trial % 5;
    const auto g = greedy_decode(m, kNoSource, config(SearchMethod::greedy, len)).front();
    const auto b = beam_decode(m, kNoSource, config(SearchMethod::beam, len)).front();
    EXPECT_EQ(g.ids, b.ids) << "trial " << trial;
    EXPECT_NEAR(g.score, b.score, 1e-12);
  }
}

TEST(Beam, WideBeamTopOneEqualsEnumerationTopOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = oracle::random_table_model(rng, 4, 2);
    auto cfg = config(SearchMethod::beam, 4);
    cfg.n_beam = 64;
    const auto got = beam_decode(m, kNoSource, cfg);
    const auto want = oracle::all_sequences(m, {}, 4);
    ASSERT_FALSE(got.empty());
    EXPECT_EQ(got[0].ids, want[0].ids);
    EXPECT_NEAR(got[0].score, want[0].logprob, 1e-9);
  }
}

TEST(Beam, TopThreeAreDistinctSortedAndMatchOracle) {
  std::mt19937_64 rng(5);
  const auto m = oracle::random_table_model(rng, 5, 2);
  auto cfg = config(SearchMethod::beam, 4);
  cfg.n_beam = 125;
  cfg.max_outputs = 3;
  const auto got = beam_decode(m, kNoSource, cfg);
  const auto want = oracle::all_sequences(m, {}, 4);
  ASSERT_EQ(got.size(), 3u);
  std::set<TokenSeq> distinct;
  for (std::size_t i = 0; i < 3; ++i) {
    distinct.insert(got[i].ids);
    EXPECT_EQ(got[i].ids, want[i].ids);
    EXPECT_NEAR(got[i].score, want[i].logprob, 1e-9);
    if (i > 0) EXPECT_LE(got[i].score, got[i - 1].score);
  }
  EXPECT_EQ(distinct.size(), 3u);
}

TEST(Beam, ScoresEqualSequenceLogprob) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = oracle::random_table_model(rng, 6, 3);
    auto cfg = config(SearchMethod::beam, 6);
    cfg.n_beam = 4;
    cfg.max_outputs = 4;
    for (const auto& h : beam_decode(m, kNoSource, cfg)) {
      if (h.capped) continue;
      EXPECT_EQ(h.ids.back(), Vocabulary::kEos);
      EXPECT_NEAR(h.score, sequence_logprob(m, kNoSource, h.ids), 1e-9);
    }
  }
}

TEST(Beam, CappedHypothesesFillOnlyRemainingSlots) {
  // EOS is reachable only at the first step; everything else runs to the cap.
  const auto m = chain_model({{"<s>", {{"a", 0.7}, {"</s>", 0.3}}}, {"a", {{"a", 1.0}}}});
  auto cfg = config(SearchMethod::beam, 4);
  cfg.n_beam = 2;
  cfg.max_outputs = 2;
  const auto out = beam_decode(m, kNoSource, cfg);
  ASSERT_EQ(out.size(), 2u);
  // The capped [BOS a a a] has higher probability (0.7) but ranks after EOS.
  EXPECT_EQ(out[0].ids, (TokenSeq{1, 2}));
  EXPECT_FALSE(out[0].capped);
  EXPECT_EQ(out[1].ids, (TokenSeq{1, 4, 4, 4}));
  EXPECT_TRUE(out[1].capped);
}

TEST(Beam, RejectsWidthBelowOutputs) {
  const auto m = chain_model({});
  auto cfg = config(SearchMethod::beam);
  cfg.n_beam = 2;
  cfg.max_outputs = 3;
  EXPECT_THROW(beam_decode(m, kNoSource, cfg), ConfigError);
}

TEST(Beam, LengthPenaltyFavoursLongerHypotheses) {
  // Short: [BOS EOS] = 0.4. Long: [BOS a a EOS] = 0.6 * 0.5 * 1.0 = 0.3.
  const auto m = chain_model({{"<s>", {{"a", 0.6}, {"</s>", 0.4}}}, {"a", {{"a", 0.5}, {"</s>", 0.5}}}});
  auto cfg = config(SearchMethod::beam, 4);
  cfg.n_beam = 8;
  cfg.max_outputs = 1;
  EXPECT_EQ(beam_decode(m, kNoSource, cfg).front().ids, (TokenSeq{1, 2}));
  cfg.length_penalty = 2.0;
  EXPECT_GT(beam_decode(m, kNoSource, cfg).front().ids.size(), 2u);
}

// A wider beam is not guaranteed to find a better top-1. Here width 1 follows
// a c EOS (0.5 * 0.6 * 0.5 = 0.15) while width 2 keeps b d (0.315) and a c
// (0.3) at step 2, then drops a c for the two children of b d at step 3.
TEST(Beam, WiderBeamCanLoseTheGreedyPath) {
  const auto m = TableModel::from_json(nlohmann::json::parse(R"({
    "vocab": ["<pad>", "<s>", "</s>", "<unk>", "a", "b", "c", "d", "f", "g", "h"],
    "order": 1,
    "entries": [
      {"source": "*", "prefix": [1], "probs": {"a": 0.5, "b": 0.45, "</s>": 0.05}},
      {"source": "*", "prefix": [4], "probs": {"c": 0.6, "</s>": 0.4}},
      {"source": "*", "prefix": [5], "probs": {"d": 0.7, "</s>": 0.3}},
      {"source": "*", "prefix": [6], "probs": {"</s>": 0.5, "f": 0.5}},
      {"source": "*", "prefix": [7], "probs": {"g": 0.5, "h": 0.5}},
      {"source": "*", "prefix": [9], "probs": {"</s>": 0.5, "g": 0.5}},
      {"source": "*", "prefix": [10], "probs": {"</s>": 0.5, "h": 0.5}}
    ],
    "default": {"</s>": 1.0}
  })"));
  auto cfg = config(SearchMethod::beam, 5);
  const auto narrow = beam_decode(m, kNoSource, cfg).front();
  EXPECT_EQ(narrow.ids, (TokenSeq{1, 4, 6, 2}));
  EXPECT_NEAR(narrow.score, std::log(0.15), 1e-12);
  cfg.n_beam = 2;
  const auto wide = beam_decode(m, kNoSource, cfg).front();
  EXPECT_EQ(wide.ids, (TokenSeq{1, 5, 7, 9, 2}));
  EXPECT_NEAR(wide.score, std::log(0.45 * 0.7 * 0.5 * 0.5), 1e-12);
  EXPECT_LT(wide.score, narrow.score);
}

// What does hold for every width: top-1 never beats the exhaustive optimum
// and reaches it once the beam is exhaustive.
TEST(Beam, TopOneBoundedByOracleAtEveryWidth) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t v = 4 + trial % 3;
    const auto m = oracle::random_table_model(rng, v, 1 + trial % 3);
    const std::size_t len = 4;
    const double best = oracle::all_sequences(m, {}, len).front().logprob;
    for (std::size_t width = 1; width <= 8; ++width) {
      auto cfg = config(SearchMethod::beam, len);
      cfg.n_beam = width;
      const auto top = beam_decode(m, kNoSource, cfg).front();
      if (!top.capped) EXPECT_LE(top.score, best + 1e-12);
    }
    auto cfg = config(SearchMethod::beam, len);
    cfg.n_beam = v * v * v;
    EXPECT_NEAR(beam_decode(m, kNoSource, cfg).front().score, best, 1e-9);
  }
}

// --- sampling -------------------------------------------------------------------

TEST(Sampling, TopKOneEqualsGreedy) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_table_model(rng, 4 + trial % 3, 1 + trial % 3);
    const auto g = greedy_decode(m, kNoSource, config(SearchMethod::greedy, 6)).front();
    auto cfg = config(SearchMethod::sampling, 6);
    cfg.top_k = 1;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const auto s = sample_decode(m, kNoSource, cfg).front();
    EXPECT_EQ(s.ids, g.ids);
    EXPECT_NEAR(s.score, g.score, 1e-12);
  }
}

TEST(Sampling, SameSeedSameOutput) {
  std::mt19937_64 rng(17);
  const auto m = oracle::random_table_model(rng, 6, 2);
  auto cfg = config(SearchMethod::sampling, 10);
  cfg.max_outputs = 5;
  cfg.seed = 99;
  EXPECT_EQ(sample_decode(m, kNoSource, cfg), sample_decode(m, kNoSource, cfg));
  cfg.seed = 100;
  const auto other = sample_decode(m, kNoSource, cfg);
  cfg.seed = 99;
  EXPECT_NE(other, sample_decode(m, kNoSource, cfg));
}

TEST(Sampling, StreamIndependentOfOutputCount) {
  std::mt19937_64 rng(19);
  const auto m = oracle::random_table_model(rng, 6, 2);
  auto cfg = config(SearchMethod::sampling, 10);
  cfg.seed = 4;
  cfg.max_outputs = 2;
  const auto two = sample_decode(m, kNoSource, cfg);
  cfg.max_outputs = 4;
  const auto four = sample_decode(m, kNoSource, cfg);
  EXPECT_EQ(two[0], four[0]);
  EXPECT_EQ(two[1], four[1]);
}

TEST(Sampling, ScoresAreModelLogprobs) {
  std::mt19937_64 rng(23);
  const auto m = oracle::random_table_model(rng, 6, 2);
  auto cfg = config(SearchMethod::sampling, 8);
  cfg.top_k = 3;
  cfg.top_p = 0.8;
  cfg.max_outputs = 20;
  for (const auto& h : sample_decode(m, kNoSource, cfg)) {
    if (h.capped) continue;
    EXPECT_NEAR(h.score, sequence_logprob(m, kNoSource, h.ids), 1e-9);
  }
}

TEST(Sampling, TopKLargerThanVocabularyActsAsFullWidth) {
  std::mt19937_64 rng(29);
  const auto m = oracle::random_table_model(rng, 5, 1);
  auto cfg = config(SearchMethod::sampling, 6);
  cfg.seed = 1;
  cfg.max_outputs = 3;
  const auto plain = sample_decode(m, kNoSource, cfg);
  cfg.top_k = 50;
  EXPECT_EQ(sample_decode(m, kNoSource, cfg), plain);
}

TEST(Sampling, TopKTwoFrequencies) {
  const auto m = chain_model({{"<s>", {{"a", 0.5}, {"b", 0.3}, {"c", 0.2}}}});
  auto cfg = config(SearchMethod::sampling, 3);
  cfg.top_k = 2;
  cfg.max_outputs = 20000;
  cfg.seed = 5;
  std::map<TokenId, int> counts;
  for (const auto& h : sample_decode(m, kNoSource, cfg)) counts[h.ids[1]]++;
  EXPECT_EQ(counts[6], 0);
  EXPECT_NEAR(counts[4] / 20000.0, 0.625, 0.02);
  EXPECT_NEAR(counts[5] / 20000.0, 0.375, 0.02);
}

// --- constraint across methods ----------------------------------------------------

TEST(NoRepeat, NoMethodEmitsRepeatedNgram) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = oracle::random_table_model(rng, 5, 1);
    for (std::size_t n : {2u, 3u}) {
      for (auto method : {SearchMethod::greedy, SearchMethod::beam, SearchMethod::sampling}) {
        auto cfg = config(method, 12);
        cfg.no_repeat_ngram_size = n;
        if (method != SearchMethod::greedy) {
          cfg.n_beam = 4;
          cfg.max_outputs = 4;
        }
        cfg.seed = static_cast<std::uint64_t>(trial);
        for (const auto& h : decode(m, kNoSource, cfg))
          EXPECT_FALSE(has_repeated_ngram(h.ids, n)) << to_string(method) << " n=" << n;
      }
    }
  }
}

TEST(Decode, DispatchesOnMethod) {
  const auto m = chain_model({{"<s>", {{"a", 0.6}, {"b", 0.4}}}});
  auto cfg = config(SearchMethod::beam, 4);
  cfg.n_beam = 2;
  cfg.max_outputs = 2;
  EXPECT_EQ(decode(m, kNoSource, cfg).size(), 2u);
  EXPECT_EQ(decode(m, kNoSource, config(SearchMethod::greedy, 4)).size(), 1u);
}
