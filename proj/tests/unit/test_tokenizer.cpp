#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "tslider/errors.hpp"
#include "tslider/tokenizer.hpp"

namespace tslider {
namespace {

using testing::test_vocab;

void expect_valid(const TokenSeq& seq, std::size_t max_len) {
  ASSERT_EQ(seq.ids.size(), max_len);
  ASSERT_LT(seq.eos_pos, max_len);
  EXPECT_EQ(seq.ids[0], kBosId);
  EXPECT_EQ(seq.ids[seq.eos_pos], kEosId);
  for (std::size_t i = seq.eos_pos + 1; i < max_len; ++i) EXPECT_EQ(seq.ids[i], kPadId);
}

TEST(Vocab, ShippedFileIds) {
  const auto& v = test_vocab();
  EXPECT_EQ(v.id("person"), 10);
  EXPECT_EQ(v.id("smiling"), 11);
  EXPECT_EQ(v.id("a"), kFirstTokenId);
  EXPECT_EQ(v.id("zebra"), kUnkId);
  EXPECT_EQ(v.size(), v.tokens().size() + 4);
}

TEST(Vocab, CommentsAndBlankLinesConsumeNoIds) {
  std::istringstream in("# header\n\nfoo\n# mid\nbar\n");
  const auto v = Vocab::parse(in);
  EXPECT_EQ(v.id("foo"), 4);
  EXPECT_EQ(v.id("bar"), 5);
  EXPECT_EQ(v.size(), 6u);
}

TEST(Vocab, RejectsDuplicatesAndInnerWhitespace) {
  std::istringstream dup("foo\nfoo\n");
  EXPECT_THROW(Vocab::parse(dup), FormatError);
  std::istringstream space("foo bar\n");
  EXPECT_THROW(Vocab::parse(space), FormatError);
  EXPECT_THROW(Vocab::load("/nonexistent/vocab.txt"), Error);
}

TEST(Encode, EmptyText) {
  const auto seq = encode("", test_vocab(), 77);
  expect_valid(seq, 77);
  EXPECT_EQ(seq.eos_pos, 1u);
}

TEST(Encode, SingleWord) {
  const auto seq = encode("person", test_vocab());
  expect_valid(seq, kDefaultMaxLen);
  EXPECT_EQ(seq.ids[1], 10);
  EXPECT_EQ(seq.eos_pos, 2u);
}

TEST(Encode, CommaIsABoundary) {
  const auto seq = encode("person, smiling", test_vocab());
  EXPECT_EQ(seq.ids[1], 10);
  EXPECT_EQ(seq.ids[2], 11);
  EXPECT_EQ(seq.ids[3], kEosId);
  EXPECT_EQ(seq.eos_pos, 3u);
}

TEST(Encode, LowercasesAndMapsUnknown) {
  const auto seq = encode("PERSON with Zebra!", test_vocab());
  EXPECT_EQ(seq.ids[1], 10);
  EXPECT_EQ(seq.ids[2], test_vocab().id("with"));
  EXPECT_EQ(seq.ids[3], kUnkId);
  EXPECT_EQ(seq.eos_pos, 4u);
}

TEST(Encode, TruncatesSoEosFits) {
  std::string text;
  for (int i = 0; i < 20; ++i) text += "person ";
  const auto seq = encode(text, test_vocab(), 8);
  expect_valid(seq, 8);
  EXPECT_EQ(seq.eos_pos, 7u);
  EXPECT_THROW(encode("x", test_vocab(), 1), ContractError);
  expect_valid(encode("person", test_vocab(), 2), 2);
}

TEST(Encode, RejectsInvalidUtf8) {
  EXPECT_THROW(encode(std::string("abc\xff"), test_vocab()), ContractError);
  EXPECT_THROW(encode(std::string("\xc3"), test_vocab()), ContractError);
  EXPECT_NO_THROW(encode("caf\xc3\xa9", test_vocab()));
}

TEST(Encode, RandomTextAlwaysSatisfiesInvariants) {
  std::mt19937 rng(5);
  const std::string alphabet = "abcdefghij ,.;!?PERSONsmiling\t\n";
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const int len = static_cast<int>(rng() % 200);
    for (int i = 0; i < len; ++i) text += alphabet[rng() % alphabet.size()];
    const std::size_t max_len = 2 + rng() % 40;
    const auto seq = encode(text, test_vocab(), max_len);
    expect_valid(seq, max_len);
    EXPECT_EQ(encode(text, test_vocab(), max_len).ids, seq.ids);
  }
}

TEST(JoinPrompt, Examples) {
  const std::vector<std::string> single{"old"};
  EXPECT_EQ(join_prompt(single), "old");
  const std::vector<std::string> two{"person, smiling", "male"};
  EXPECT_EQ(join_prompt(two), "person, smiling, male");
  const std::vector<std::string> table{"person, elderly, wrinkles", "asian race"};
  EXPECT_EQ(join_prompt(table), "person, elderly, wrinkles, asian race");
  const std::vector<std::string> gaps{"", "a", ""};
  EXPECT_EQ(join_prompt(gaps), "a");
  const std::vector<std::string> empty{"", ""};
  EXPECT_THROW(join_prompt(empty), ContractError);
}

TEST(SplitWords, PunctuationAndWhitespace) {
  EXPECT_EQ(split_words("  Hello,world;; foo-bar "), (std::vector<std::string>{"hello", "world", "foo", "bar"}));
  EXPECT_TRUE(split_words(" ,.; ").empty());
}

}  // namespace
}  // namespace tslider
