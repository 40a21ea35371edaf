#include <gtest/gtest.h>

#include "hdm/textcond.hpp"
#include "test_util.hpp"

using namespace hdm;
using namespace hdm::textcond;
using hdm::testing::error_kind;
using hdm::testing::scratch_dir;

namespace {

std::vector<int> bos_plus(const Tokenizer& tok, const std::string& text) {
  std::vector<int> ids = {Tokenizer::kBos};
  const auto w = tok.encode(text);
  ids.insert(ids.end(), w.begin(), w.end());
  return ids;
}

}  // namespace

TEST(Tokenizer, KnownWordsAndByteFallback) {
  const Tokenizer tok;
  const auto known = tok.encode("Red Circle center");
  ASSERT_EQ(known.size(), 3u);
  EXPECT_EQ(tok.decode(known), "red circle center");
  const auto unknown = tok.encode("zq");
  EXPECT_EQ(unknown.size(), 2u);
  EXPECT_EQ(tok.decode(unknown), "zq");
  for (int id : tok.encode("red zq blue")) {
    EXPECT_GE(id, 2);
    EXPECT_LT(id, tok.vocab_size());
  }
  EXPECT_TRUE(tok.encode("  \t ").empty());
}

TEST(Encoder, OneRowPerToken) {
  const ToyCausalEncoder enc({});
  const auto ids = bos_plus(enc.tokenizer(), "a red square");
  const auto out = enc.encode(ids);
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 64);
  EXPECT_LE(enc.parameter_count(), 1'000'000);
}

TEST(Encoder, StrictCausalityForEveryDepth) {
  for (int layers = 1; layers <= 3; ++layers) {
    TextEncoderConfig cfg;
    cfg.n_layers = layers;
    const ToyCausalEncoder enc(cfg);
    const auto ids = bos_plus(enc.tokenizer(), "a red square on the left of a blue circle");
    const auto base = enc.encode(ids);
    for (std::size_t j = 1; j < ids.size(); ++j) {
      auto changed = ids;
      changed[j] = enc.tokenizer().encode("magenta")[0];
      if (changed[j] == ids[j]) changed[j] = enc.tokenizer().encode("cyan")[0];
      const auto out = enc.encode(changed);
      for (std::size_t r = 0; r < j; ++r) {
        EXPECT_EQ((out.row(static_cast<ag::Index>(r)) - base.row(static_cast<ag::Index>(r))).cwiseAbs().maxCoeff(),
                  0.0f)
            << "layers " << layers << " j " << j << " row " << r;
      }
      EXPECT_GT((out.row(static_cast<ag::Index>(j)) - base.row(static_cast<ag::Index>(j))).cwiseAbs().maxCoeff(),
                0.0f);
    }
  }
}

TEST(Encoder, RepeatedTokensDifferByPrefix) {
  const ToyCausalEncoder enc({});
  const auto ctx = enc.encode_prompt("a a");
  ASSERT_EQ(ctx.rows.rows(), 3);
  EXPECT_GT((ctx.rows.row(1) - ctx.rows.row(2)).cwiseAbs().maxCoeff(), 1e-3f);
}

TEST(Encoder, MaskedLeadingPaddingIsInvisible) {
  const ToyCausalEncoder enc({});
  const auto ids = bos_plus(enc.tokenizer(), "green triangle bottom");
  const auto ref = enc.encode(ids);
  for (int k = 1; k <= 4; ++k) {
    std::vector<int> padded(static_cast<std::size_t>(k), Tokenizer::kPad);
    padded.insert(padded.end(), ids.begin(), ids.end());
    std::vector<std::uint8_t> valid(padded.size(), 1);
    std::fill(valid.begin(), valid.begin() + k, 0);
    const auto out = enc.encode(padded, valid);
    EXPECT_LE((out.bottomRows(ref.rows()) - ref).cwiseAbs().maxCoeff(), 1e-6f) << k;
    const auto unmasked = enc.encode(padded);
    EXPECT_GT((unmasked.bottomRows(ref.rows()) - ref).cwiseAbs().maxCoeff(), 1e-4f) << k;
  }
}

TEST(Encoder, RejectsBadInputs) {
  const ToyCausalEncoder enc({});
  const std::vector<int> ids = {1, 2};
  const std::vector<std::uint8_t> valid = {1};
  EXPECT_EQ(error_kind([&] { enc.encode(ids, valid); }), ErrorKind::kShape);
  const std::vector<int> bad = {1, 100000};
  EXPECT_EQ(error_kind([&] { enc.encode(bad); }), ErrorKind::kShape);
  TextEncoderConfig cfg;
  cfg.n_heads = 5;
  EXPECT_EQ(error_kind([&] { ToyCausalEncoder{cfg}; }), ErrorKind::kInvalidConfig);
}

TEST(Encoder, FrozenWeightsFromSeed) {
  const ToyCausalEncoder a({}), b({});
  const auto ids = bos_plus(a.tokenizer(), "white square");
  EXPECT_EQ(a.encode(ids), b.encode(ids));
  TextEncoderConfig other;
  other.seed = 99;
  EXPECT_NE(ToyCausalEncoder(other).encode(ids), a.encode(ids));
}

TEST(Prompt, BosLeadsEveryPrompt) {
  const ToyCausalEncoder enc({});
  const auto ctx = enc.encode_prompt("red circle");
  EXPECT_EQ(ctx.rows, enc.encode(bos_plus(enc.tokenizer(), "red circle")));
  EXPECT_FALSE(ctx.truncated);
  EXPECT_EQ(ctx.valid, std::vector<std::uint8_t>(3, 1));
}

TEST(Prompt, EmptyPromptIsNullRow) {
  ToyCausalEncoder enc({});
  enc.null_row().setConstant(0.5f);
  for (const char* p : {"", "   "}) {
    const auto ctx = enc.encode_prompt(p);
    ASSERT_EQ(ctx.rows.rows(), 1);
    EXPECT_EQ(ctx.rows, enc.null_condition());
  }
}

TEST(Prompt, NullConditionShapeAndStability) {
  const ToyCausalEncoder enc({});
  EXPECT_EQ(enc.null_condition().rows(), 1);
  EXPECT_EQ(enc.null_condition().cols(), 64);
  EXPECT_EQ(enc.null_condition(), enc.null_condition());
}

TEST(Prompt, LongPromptKeepsHead) {
  TextEncoderConfig cfg;
  cfg.max_context = 5;
  const ToyCausalEncoder enc(cfg);
  const auto ctx = enc.encode_prompt("a red circle at the top of the image");
  EXPECT_TRUE(ctx.truncated);
  EXPECT_EQ(ctx.rows.rows(), 5);
  EXPECT_EQ(ctx.rows, enc.encode_prompt("a red circle at").rows);
  EXPECT_FALSE(enc.encode_prompt("a red circle at").truncated);
}

TEST(Context, ValidRowsDropsPadding) {
  Context ctx;
  ctx.rows = hdm::testing::random_mat<float>(4, 3, 1);
  ctx.valid = {1, 0, 1, 0};
  const auto v = ctx.valid_rows();
  ASSERT_EQ(v.rows(), 2);
  EXPECT_EQ(v.row(0), ctx.rows.row(0));
  EXPECT_EQ(v.row(1), ctx.rows.row(2));
}

TEST(Context, FileRoundTrip) {
  const auto dir = scratch_dir("context_file");
  const auto m = hdm::testing::random_mat<float>(7, 64, 2);
  save_context_file(dir / "ctx.hdm", m);
  EXPECT_EQ(load_context_file(dir / "ctx.hdm"), m);
  EXPECT_THROW(load_context_file(dir / "missing.hdm"), Error);
}
