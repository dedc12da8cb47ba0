#include <gtest/gtest.h>

#include "mucot/error.hpp"
#include "mucot/rng.hpp"
#include "mucot/text.hpp"

namespace mucot {
namespace {

TEST(Utf8, RoundTripsMixedScripts) {
  const std::string s = "aé नमस्ते தமிழ் 😀";
  const auto cps = text::decode(s);
  EXPECT_EQ(text::encode(cps), s);
  EXPECT_EQ(text::length("aé"), 2u);
  EXPECT_EQ(text::length("😀"), 1u);
}

TEST(Utf8, RejectsMalformedInput) {
  EXPECT_THROW(text::decode("\xC3"), Error);
  EXPECT_THROW(text::decode("\xC0\xAF"), Error);  // overlong
  EXPECT_THROW(text::decode("\xED\xA0\x80"), Error);  // surrogate
  EXPECT_THROW(text::decode("\xFF"), Error);
}

TEST(Utf8, SliceUsesCodePoints) {
  EXPECT_EQ(text::slice("नमस्ते दुनिया", 7, 13), "दुनिया");
  EXPECT_EQ(text::slice("abc", 1, 1), "");
}

TEST(Words, SplitOnUnicodeWhitespace) {
  const auto words = text::split_words("  the\tcat sat\n ");
  EXPECT_EQ(words, (std::vector<std::string>{"the", "cat", "sat"}));
  EXPECT_TRUE(text::split_words(" \t ").empty());
  const auto spans = text::word_spans(text::decode("ab  c"));
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[1].start, 4u);
  EXPECT_EQ(spans[1].end, 5u);
}

TEST(Hash, StableValues) {
  // FNV-1a 64 reference values.
  EXPECT_EQ(text::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(text::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, ReferenceSequenceAndBounds) {
  // splitmix64 from 0: first output of the reference implementation.
  SplitMix64 sm(0);
  EXPECT_EQ(sm.next(), 0xe220a8397b1dcdafULL);
  Xoshiro256 a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Xoshiro256 r(7);
  std::vector<int> hist(6, 0);
  for (int i = 0; i < 60000; ++i) ++hist[r.below(6)];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, ShuffleIsAPermutationAndSeeded) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto w = v;
  Xoshiro256 r1(3), r2(3);
  shuffle(std::span(v), r1);
  shuffle(std::span(w), r2);
  EXPECT_EQ(v, w);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
}

}  // namespace
}  // namespace mucot
