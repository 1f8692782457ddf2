#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "uld/model.hpp"

using namespace uld;

namespace {

ModelConfig small_config(std::size_t vocab, std::uint32_t seed = 7) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.context_len = 16;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.seed = seed;
  return c;
}

// Mean next-token CE over the sequence, with its gradient injected into the tape.
double ce_backward(TinyCausalLM::Trace& tr, const std::vector<TokenId>& ids) {
  const auto& logits = tr.tape.value(tr.logits);
  const std::size_t v = logits.cols();
  const std::size_t steps = ids.size() - 1;
  std::vector<float> grad(logits.data.size(), 0.0f);
  double loss = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const float* row = logits.data.data() + t * v;
    const float peak = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t k = 0; k < v; ++k) total += std::exp(static_cast<double>(row[k] - peak));
    const auto gold = static_cast<std::size_t>(ids[t + 1]);
    for (std::size_t k = 0; k < v; ++k) {
      const double p = std::exp(static_cast<double>(row[k] - peak)) / total;
      grad[t * v + k] = static_cast<float>((p - (k == gold ? 1.0 : 0.0)) / steps);
    }
    loss -= (static_cast<double>(row[gold] - peak) - std::log(total)) / steps;
  }
  const ad::Var l = tr.tape.external_loss(tr.logits, static_cast<float>(loss), std::move(grad));
  tr.tape.backward(l);
  return loss;
}

TinyCausalLM pattern_model() {
  // Vocabulary: specials + 'a' (4) + 'b' (5).
  auto m = TinyCausalLM::init(small_config(6, 3));
  std::vector<TokenId> seq;
  for (int i = 0; i < 16; ++i) seq.push_back(i % 2 == 0 ? 4 : 5);
  Adam opt;
  for (int step = 0; step < 150; ++step) {
    auto tr = m.trace(seq, true);
    ce_backward(tr, seq);
    m.accumulate_grads(tr);
    opt.step(m, 1e-2f);
  }
  return m;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("uld_model_" + name);
}

}  // namespace

TEST(ModelInit, SameSeedIsBitwiseIdentical) {
  const auto a = TinyCausalLM::init(small_config(10));
  const auto b = TinyCausalLM::init(small_config(10));
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value.data, b.parameters()[i].value.data);
  }
  const auto c = TinyCausalLM::init(small_config(10, 8));
  EXPECT_NE(a.parameters()[0].value.data, c.parameters()[0].value.data);
}

TEST(ModelInit, RejectsInvalidConfig) {
  auto c = small_config(10);
  c.n_heads = 3;
  EXPECT_THROW(TinyCausalLM::init(c), ParameterError);
  c = small_config(10);
  c.context_len = 1;
  EXPECT_THROW(TinyCausalLM::init(c), ParameterError);
  c = small_config(0);
  EXPECT_THROW(TinyCausalLM::init(c), ParameterError);
}

TEST(ModelForward, ShapeAndFiniteness) {
  const auto m = TinyCausalLM::init(small_config(12));
  const std::vector<TokenId> ids = {0, 5, 7, 11, 4};
  const auto logits = m.forward(ids);
  EXPECT_EQ(logits.shape, (ad::Shape{5, 12}));
  for (float v : logits.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(ModelForward, ZeroedOutputProjectionGivesUniform) {
  auto m = TinyCausalLM::init(small_config(9));
  auto& emb = m.parameter("tok_emb").value.data;
  std::fill(emb.begin(), emb.end(), 0.0f);
  const auto logits = m.forward(std::vector<TokenId>{1, 2, 3});
  for (float v : logits.data) EXPECT_EQ(v, 0.0f);
}

TEST(ModelForward, RejectsOverlongAndOutOfVocabulary) {
  const auto m = TinyCausalLM::init(small_config(8));
  EXPECT_THROW(m.forward(std::vector<TokenId>(17, 4)), ParameterError);
  EXPECT_THROW(m.forward(std::vector<TokenId>{8}), ParameterError);
  EXPECT_THROW(m.forward(std::vector<TokenId>{}), ParameterError);
}

TEST(ModelForward, CausalMaskProperty) {
  const auto m = TinyCausalLM::init(small_config(11, 21));
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<TokenId> tok(0, 10);
  std::uniform_int_distribution<std::size_t> len(2, 16);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenId> ids(len(rng));
    for (auto& id : ids) id = tok(rng);
    const std::size_t k = 1 + rng() % (ids.size() - 1);
    const auto before = m.forward(ids);
    ids[k] = static_cast<TokenId>((ids[k] + 1 + rng() % 10) % 11);
    const auto after = m.forward(ids);
    const std::size_t prefix = k * 11;
    ASSERT_TRUE(std::equal(before.data.begin(), before.data.begin() + static_cast<std::ptrdiff_t>(prefix),
                           after.data.begin()));
  }
}

TEST(ModelTraining, OneStepDecreasesBatchLoss) {
  std::mt19937_64 rng(62);
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    auto m = TinyCausalLM::init(small_config(10, seed));
    std::vector<TokenId> ids(12);
    for (auto& id : ids) id = static_cast<TokenId>(rng() % 10);
    auto tr = m.trace(ids, true);
    const double before = ce_backward(tr, ids);
    m.accumulate_grads(tr);
    Adam opt;
    opt.step(m, 1e-3f);
    auto after_tr = m.trace(ids, false);
    EXPECT_LT(ce_backward(after_tr, ids), before);
  }
}

TEST(ModelTraining, MemorizesAlternatingPattern) {
  const auto m = pattern_model();
  const auto logits = m.forward(std::vector<TokenId>{4, 5, 4, 5});
  const auto last = std::span<const float>(logits.data).subspan(3 * 6, 6);
  EXPECT_EQ(argmax(last), 4u);

  TokenSequence prompt{{4, 5, 4, 5}, "abab"};
  const auto out = greedy_generate(m, prompt, 8);
  ASSERT_EQ(out.ids.size(), 12u);
  for (std::size_t i = 0; i < out.ids.size(); ++i) EXPECT_EQ(out.ids[i], i % 2 == 0 ? 4 : 5);
}

TEST(GreedyGenerate, ZeroNewAndDeterminism) {
  const auto m = TinyCausalLM::init(small_config(10));
  TokenSequence prompt{{0, 6, 7}, ""};
  EXPECT_EQ(greedy_generate(m, prompt, 0).ids, prompt.ids);
  EXPECT_EQ(greedy_generate(m, prompt, 5).ids, greedy_generate(m, prompt, 5).ids);
  EXPECT_LE(greedy_generate(m, prompt, 100).ids.size(), 16u);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto m = pattern_model();
  const auto path = temp_file("roundtrip.bin");
  m.save(path);
  const auto back = TinyCausalLM::load(path);
  EXPECT_EQ(back.config(), m.config());
  const std::vector<TokenId> ids = {4, 5, 4};
  EXPECT_EQ(back.forward(ids).data, m.forward(ids).data);
  EXPECT_EQ(back.serialize(), m.serialize());
  const auto path2 = temp_file("roundtrip2.bin");
  back.save(path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
}

TEST(Checkpoint, LargeSeedSurvives) {
  auto c = small_config(7);
  c.seed = 4000000001u;
  const auto m = TinyCausalLM::init(c);
  EXPECT_EQ(TinyCausalLM::deserialize(m.serialize()).config().seed, c.seed);
}

TEST(Checkpoint, CorruptionIsFormatErrorNamingField) {
  const auto m = TinyCausalLM::init(small_config(7));
  auto bytes = m.serialize();

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    TinyCausalLM::deserialize(bad_magic);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }

  auto bad_version = bytes;
  bad_version[4] = 99;
  try {
    TinyCausalLM::deserialize(bad_version);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  EXPECT_THROW(TinyCausalLM::deserialize(truncated), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(TinyCausalLM::deserialize(trailing), FormatError);
}
