#include <scout/prefix_cache.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace scout;

TEST(PrefixCache, FreshCacheIsEmpty) {
  PrefixCache cache;
  const auto s = cache.stats();
  EXPECT_EQ(s.hits, 0u);
  EXPECT_EQ(s.misses, 0u);
  EXPECT_EQ(s.nodes, 1u);
  EXPECT_EQ(cache.entries(), 0u);
}

TEST(PrefixCache, RepeatedLookupHits) {
  auto m = synth_random_model(1, 4, 3, 1.0);
  CountingSource counted(*m);
  PrefixCache cache;
  const TokenSeq prefix{2};
  LogitVector first;
  for (int i = 0; i < 5; ++i) {
    const auto& out = cache.lookup_or_compute(counted, StepQuery{{}, prefix});
    if (i == 0) first = out.logits;
    EXPECT_EQ(out.logits, first);
  }
  EXPECT_EQ(cache.stats().hits, 4u);
  EXPECT_EQ(cache.stats().misses, 1u);
  EXPECT_EQ(counted.evaluations(), 1u);
  EXPECT_EQ(first, m->next_logits(StepQuery{{}, prefix}));
}

TEST(PrefixCache, DistinctPrefixesMiss) {
  auto m = synth_random_model(1, 4, 3, 1.0);
  PrefixCache cache;
  std::size_t n = 0;
  for (TokenId a = 0; a < 4; ++a) {
    for (TokenId b = 0; b < 4; ++b) {
      cache.lookup_or_compute(*m, StepQuery{{}, TokenSeq{a, b}});
      ++n;
    }
  }
  EXPECT_EQ(cache.stats().misses, n);
  EXPECT_EQ(cache.stats().hits, 0u);
  EXPECT_EQ(cache.stats().nodes, n + 1);
  EXPECT_GT(cache.stats().bytes_estimate, 0u);
}

TEST(PrefixCache, CachesCompletion) {
  auto m = synth_random_model(1, 2, 1, 1.0);
  PrefixCache cache;
  EXPECT_TRUE(cache.lookup_or_compute(*m, StepQuery{{}, TokenSeq{1}}).complete);
  EXPECT_FALSE(cache.lookup_or_compute(*m, StepQuery{}).complete);
}

TEST(PrefixCache, BoundToItsPrompt) {
  auto m = synth_random_model(1, 2, 2, 1.0);
  PrefixCache cache(TokenSeq{1, 0});
  const TokenSeq prompt{1, 0};
  EXPECT_NO_THROW(cache.lookup_or_compute(*m, StepQuery{prompt, {}}));
  const TokenSeq other{0};
  try {
    cache.lookup_or_compute(*m, StepQuery{other, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(PrefixCache, ZeroCapacityRejected) { EXPECT_THROW(PrefixCache({}, 0), Error); }

TEST(PrefixCache, EvictionNeverChangesResults) {
  auto m = synth_random_model(5, 3, 4, 1.0);
  PrefixCache cache({}, 6);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<TokenId> token(0, 2);
  std::uniform_int_distribution<std::size_t> len(0, 3);
  for (int i = 0; i < 500; ++i) {
    TokenSeq prefix(len(rng));
    for (auto& t : prefix) t = token(rng);
    const auto& out = cache.lookup_or_compute(*m, StepQuery{{}, prefix});
    EXPECT_EQ(out.logits, m->next_logits(StepQuery{{}, prefix}));
    EXPECT_LE(cache.entries(), 6u);
  }
  EXPECT_GT(cache.stats().evictions, 0u);
  EXPECT_EQ(cache.stats().hits + cache.stats().misses, 500u);
}
