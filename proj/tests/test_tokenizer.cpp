#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "uld/tokenizer.hpp"

using namespace uld;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("uld_tok_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::string> small_corpus() {
  return {"the red ball is under the table", "anna has three blue cups",
          "where is the ball? under the table", "the cat sat on the mat",
          "three cats and two dogs"};
}

std::vector<std::string> tokens_of(const Tokenizer& t, const std::vector<TokenId>& ids) {
  std::vector<std::string> out;
  for (TokenId id : ids) out.push_back(t.vocabulary().token(id));
  return out;
}

}  // namespace

TEST(Vocabulary, SpecialsFirstAndDistinct) {
  Vocabulary v;
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(Vocabulary::kBos), "<bos>");
  EXPECT_EQ(v.token(Vocabulary::kEos), "<eos>");
  EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocabulary::kUnk), "<unk>");
  EXPECT_EQ(v.add("x"), 4);
  EXPECT_EQ(v.add("x"), 4);
  EXPECT_EQ(*v.find("x"), 4);
  EXPECT_FALSE(v.find("y").has_value());
}

TEST(CharTokenizer, Examples) {
  const auto t = char_tokenizer(std::set<char>{'a', 'b'});
  const auto seq = t.encode("abba");
  EXPECT_EQ(seq.ids.size(), 4u);
  EXPECT_EQ(t.decode(seq.ids), "abba");
  EXPECT_TRUE(t.encode("").ids.empty());
  const auto unk = t.encode("abc");
  EXPECT_EQ(unk.ids[2], Vocabulary::kUnk);
  EXPECT_THROW(char_tokenizer(std::set<char>{}), ParameterError);
}

TEST(BpeTrain, MergesMostFrequentPair) {
  const auto t = bpe_train(std::string("abab"), 1);
  ASSERT_EQ(t.merges().size(), 1u);
  EXPECT_EQ(t.merges()[0], (Tokenizer::Merge{"a", "b"}));
  EXPECT_TRUE(t.vocabulary().find("ab").has_value());
  EXPECT_EQ(tokens_of(t, t.encode("abab").ids), (std::vector<std::string>{"ab", "ab"}));
}

TEST(BpeTrain, ZeroMergesIsCharacterVocabulary) {
  const auto t = bpe_train(std::string("abcab"), 0);
  EXPECT_TRUE(t.merges().empty());
  EXPECT_EQ(t.vocabulary().size(), 4u + 3u);
  EXPECT_EQ(t.vocabulary(), char_tokenizer(std::string_view("abc")).vocabulary());
}

TEST(BpeTrain, TiesBreakLexicographically) {
  // ("b","a") and ("c","d") both appear once; ("b","a") sorts first.
  const auto t = bpe_train(std::vector<std::string>{"ba", "cd"}, 1);
  ASSERT_EQ(t.merges().size(), 1u);
  EXPECT_EQ(t.merges()[0], (Tokenizer::Merge{"b", "a"}));
}

TEST(BpeTrain, MergesNeverSpanCorpusEntries) {
  const auto t = bpe_train(std::vector<std::string>{"a", "b", "a", "b"}, 3);
  EXPECT_TRUE(t.merges().empty());
}

TEST(BpeTrain, VocabularyGrowsByMergeCount) {
  const auto corpus = small_corpus();
  std::set<char> alphabet;
  for (const auto& s : corpus) alphabet.insert(s.begin(), s.end());
  for (std::size_t k : {1u, 5u, 20u}) {
    const auto t = bpe_train(corpus, k);
    ASSERT_EQ(t.merges().size(), k);
    EXPECT_EQ(t.vocabulary().size(), alphabet.size() + k + 4u);
  }
}

TEST(BpeTrain, StopsWhenNoPairsRemain) {
  const auto t = bpe_train(std::string("ab"), 10);
  EXPECT_EQ(t.merges().size(), 1u);
}

TEST(Tokenizers, RoundTripAndDeterminism) {
  const auto corpus = small_corpus();
  std::string all;
  for (const auto& s : corpus) all += s;
  const auto chars = char_tokenizer(std::string_view(all));
  const auto bpe = bpe_train(corpus, 40);
  for (const auto& s : corpus) {
    EXPECT_EQ(chars.decode(chars.encode(s).ids), s);
    EXPECT_EQ(bpe.decode(bpe.encode(s).ids), s);
    EXPECT_EQ(bpe.encode(s).ids, bpe.encode(s).ids);
    EXPECT_LT(bpe.encode(s).ids.size(), chars.encode(s).ids.size());
  }
}

TEST(Tokenizers, RandomInAlphabetRoundTrip) {
  const auto bpe = bpe_train(small_corpus(), 30);
  std::string alphabet;
  for (const auto& t : bpe.vocabulary().regular_tokens()) {
    if (t.size() == 1) alphabet += t;
  }
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string s(trial % 40, ' ');
    for (auto& c : s) c = alphabet[pick(rng)];
    const auto ids = bpe.encode(s).ids;
    for (TokenId id : ids) ASSERT_LT(static_cast<std::size_t>(id), bpe.vocabulary().size());
    ASSERT_EQ(bpe.decode(ids), s);
  }
}

TEST(Tokenizers, SaveLoadRoundTrip) {
  const auto dir = temp_dir("saveload");
  const auto bpe = bpe_train(small_corpus(), 25);
  bpe.save(dir / "vocab.txt", dir / "merges.txt");
  const auto back = Tokenizer::load(dir / "vocab.txt", dir / "merges.txt");
  EXPECT_EQ(back.vocabulary(), bpe.vocabulary());
  EXPECT_EQ(back.merges(), bpe.merges());
  EXPECT_EQ(back.encode("the table").ids, bpe.encode("the table").ids);

  std::ifstream merges(dir / "merges.txt");
  std::string first;
  std::getline(merges, first);
  EXPECT_EQ(first, bpe.merges()[0].first + "\t" + bpe.merges()[0].second);

  const auto chars = char_tokenizer(std::string_view("xyz"));
  chars.save(dir / "cv.txt", dir / "cm.txt");
  EXPECT_EQ(Tokenizer::load(dir / "cv.txt", dir / "cm.txt").kind(), Tokenizer::Kind::character);
}

TEST(Tokenizers, LoadRejectsMalformedFiles) {
  const auto dir = temp_dir("malformed");
  {
    std::ofstream out(dir / "v.txt");
    out << "a\nb\n";
  }
  EXPECT_THROW(Vocabulary::load(dir / "v.txt"), FormatError);
  {
    std::ofstream out(dir / "v2.txt");
    out << "<bos>\n<eos>\n<pad>\n<unk>\na\na\n";
  }
  EXPECT_THROW(Vocabulary::load(dir / "v2.txt"), FormatError);
}

TEST(VocabOverlap, Examples) {
  Vocabulary a;
  a.add("a");
  a.add("b");
  Vocabulary b;
  b.add("b");
  b.add("c");
  Vocabulary d;
  d.add("x");
  EXPECT_DOUBLE_EQ(vocab_overlap(a, a), 100.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, d), 0.0);
  EXPECT_DOUBLE_EQ(vocab_overlap(a, b), 50.0);
  EXPECT_THROW(vocab_overlap(a, Vocabulary{}), DegenerateInputError);
}

TEST(VocabOverlap, SelfOverlapIsFull) {
  for (std::size_t k : {0u, 3u, 30u}) {
    const auto t = bpe_train(small_corpus(), k);
    EXPECT_DOUBLE_EQ(vocab_overlap(t.vocabulary(), t.vocabulary()), 100.0);
  }
}
