// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "fairjudge/error.hpp"
#include "fairjudge/rng.hpp"
#include "fairjudge/vocab.hpp"

namespace fairjudge {
namespace {

Vocab small_vocab() { return Vocab::build({"all women are kind .", "Step 1. check\nFinal Answer: biased"}); }

TEST(VocabTest, SpecialMarkersComeFirstAndAreDistinct) {
  const Vocab v = small_vocab();
  EXPECT_EQ(v.token(v.pad()), kPadToken);
  EXPECT_EQ(v.token(v.bos()), kBosToken);
  EXPECT_EQ(v.token(v.eos()), kEosToken);
  EXPECT_EQ(v.token(v.unk()), kUnkToken);
  for (std::size_t i = 4; i < v.size(); ++i) EXPECT_FALSE(v.is_special(static_cast<int>(i)));
  EXPECT_TRUE(v.find("\n").has_value());
}

TEST(VocabTest, EmptyTextEncodesToNothing) {
  const auto seq = encode("", small_vocab());
  EXPECT_TRUE(seq.ids.empty());
  EXPECT_EQ(seq.boundary, 0u);
}

TEST(VocabTest, RoundTripOnRandomInVocabText) {
  const Vocab v = small_vocab();
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> words;
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) words.push_back(v.token(4 + static_cast<int>(rng.below(v.size() - 4))));
    const std::string text = join_words(words);
    const auto seq = encode(text, v);
    EXPECT_EQ(seq.size(), n);
    EXPECT_EQ(decode(seq.ids, v), text);
  }
}

TEST(VocabTest, UnknownSymbolIsRejected) {
  try {
    encode("all men are kind", small_vocab());
    FAIL() << "expected UnknownToken";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownToken);
    EXPECT_NE(std::string(e.what()).find("men"), std::string::npos);
  }
}

TEST(VocabTest, NonCanonicalWhitespaceIsNotRepresentable) {
  EXPECT_THROW(encode("all  women", small_vocab()), Error);
  EXPECT_THROW(encode(" all", small_vocab()), Error);
  EXPECT_THROW(encode("check \nFinal", small_vocab()), Error);
}

TEST(VocabTest, LenientEncodingMapsUnknownWords) {
  const Vocab v = small_vocab();
  const auto seq = encode_lenient("all  men are kind", v);
  ASSERT_EQ(seq.size(), 4u);
  EXPECT_EQ(seq.ids[1], v.unk());
}

TEST(VocabTest, FromTokensRejectsDuplicates) {
  EXPECT_THROW(Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "a", "a"}), Error);
  EXPECT_THROW(Vocab::from_tokens({"a", "<bos>", "<eos>", "<unk>"}), Error);
}

}  // namespace
}  // namespace fairjudge
