#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <set>

#include "mutarjem/embed.hpp"
#include "support/oracles.hpp"

using namespace mutarjem;

namespace {

/// Counts calls so cache hits are observable.
class CountingProvider final : public EmbeddingProvider {
 public:
  std::string name() const override { return "counting"; }
  bool supports(std::string_view lang) const override { return lang != "xx"; }
  EmbeddingVector embed(std::string_view text, std::string_view lang) const override {
    ++calls;
    return LocalNgramProvider().embed(text, lang);
  }
  mutable std::atomic<int> calls{0};
};

}  // namespace

TEST(Cosine, Arithmetic) {
  const EmbeddingVector u({1.0, 0.0});
  const EmbeddingVector v({0.6, 0.8});
  EXPECT_NEAR(cosine_similarity(u, v), 0.6, 1e-12);
  EXPECT_NEAR(cosine_similarity(u, u), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(u, EmbeddingVector({0.0, 3.0})), 0.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(u, EmbeddingVector({-2.0, 0.0})), -1.0, 1e-12);
}

TEST(Cosine, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(16), b(16);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    const EmbeddingVector u(a), v(b);
    EXPECT_EQ(cosine_similarity(u, v), cosine_similarity(v, u));
    EXPECT_NEAR(cosine_similarity(u.scaled(3.7), v), cosine_similarity(u, v), 1e-9);
  }
}

TEST(Cosine, ErrorsOnDimensionMismatchAndZeroVector) {
  EXPECT_THROW(cosine_similarity(EmbeddingVector({1.0}), EmbeddingVector({1.0, 0.0})), ConfigError);
  EXPECT_THROW(cosine_similarity(EmbeddingVector({0.0, 0.0}), EmbeddingVector({1.0, 0.0})), ConfigError);
  EXPECT_THROW(EmbeddingVector({std::nan("")}), FormatError);
}

TEST(LocalProvider, DeterministicAndUnitNorm) {
  const LocalNgramProvider p;
  for (const std::string s : {"ab", "the cat sat on the mat", "\xD9\x85\xD8\xB1\xD8\xAD\xD8\xA8\xD8\xA7"}) {
    const auto e = p.embed(s, "en");
    EXPECT_EQ(e, p.embed(s, "en"));
    EXPECT_EQ(e.dim(), LocalNgramProvider::kDim);
    EXPECT_NEAR(e.norm(), 1.0, 1e-6);
  }
}

TEST(LocalProvider, IdenticalTextScoresOneAcrossLanguages) {
  const LocalNgramProvider p;
  EXPECT_NEAR(cosine_similarity(p.embed("ab", "en"), p.embed("ab", "en")), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(p.embed("hello world", "en"), p.embed("hello world", "ar")), 1.0, 1e-12);
}

TEST(LocalProvider, CharacterDisjointPairScoresZero) {
  const LocalNgramProvider p;
  const std::string a = "abc";
  const std::string b = "xyz";
  // Only a bucket collision could make these overlap; check the premise first.
  std::set<std::size_t> ba, bb;
  for (auto x : LocalNgramProvider::buckets(a)) ba.insert(x);
  for (auto x : LocalNgramProvider::buckets(b)) bb.insert(x);
  for (auto x : ba) ASSERT_EQ(bb.count(x), 0u);
  EXPECT_EQ(cosine_similarity(p.embed(a, "en"), p.embed(b, "ar")), 0.0);
}

TEST(LocalProvider, WhitespaceAndNormalizationInvariant) {
  const LocalNgramProvider p;
  EXPECT_EQ(p.embed("  the   cat ", "en"), p.embed("the cat", "en"));
  EXPECT_EQ(p.embed("caf\x65\xCC\x81", "fr"), p.embed("caf\xC3\xA9", "fr"));
}

TEST(LocalProvider, TrigramsOfPaddedText) {
  // " ab " has trigrams " ab" and "ab ".
  EXPECT_EQ(LocalNgramProvider::buckets("ab").size(), 2u);
  EXPECT_EQ(LocalNgramProvider::buckets("a b").size(), 3u);
}

TEST(LocalProvider, UnsupportedLanguageAndEmptyText) {
  const LocalNgramProvider p;
  EXPECT_FALSE(p.supports("gd"));
  EXPECT_THROW(p.embed("hello", "gd"), UnsupportedLanguageError);
  EXPECT_THROW(p.embed("   ", "en"), ConfigError);
  const LocalNgramProvider any(std::set<std::string, std::less<>>{});
  EXPECT_TRUE(any.supports("gd"));
}

TEST(CachingProvider, SecondLookupHitsDisk) {
  oracle::TempDir dir("embcache");
  auto inner = std::make_shared<CountingProvider>();
  const CachingEmbeddingProvider cache(inner, dir.path());
  const auto first = cache.embed("hello world", "en");
  EXPECT_EQ(inner->calls, 1);
  EXPECT_EQ(cache.embed("hello world", "en"), first);
  EXPECT_EQ(inner->calls, 1);
  cache.embed("hello world", "fr");
  EXPECT_EQ(inner->calls, 2);

  // A fresh wrapper over the same directory still hits.
  const CachingEmbeddingProvider again(inner, dir.path());
  const std::vector<std::string> batch{"hello world", "new text"};
  const auto vs = again.embed_batch(batch, "en");
  EXPECT_EQ(inner->calls, 3);
  EXPECT_EQ(vs[0], first);
  EXPECT_FALSE(std::filesystem::is_empty(dir.path() / "embeddings"));
}

TEST(CachingProvider, CorruptEntryIsRecomputed) {
  oracle::TempDir dir("embcorrupt");
  auto inner = std::make_shared<CountingProvider>();
  const CachingEmbeddingProvider cache(inner, dir.path());
  cache.embed("abc", "en");
  for (const auto& e : std::filesystem::directory_iterator(dir.path() / "embeddings")) oracle::spit(e.path(), "{not json");
  EXPECT_NO_THROW(cache.embed("abc", "en"));
  EXPECT_EQ(inner->calls, 2);
}
