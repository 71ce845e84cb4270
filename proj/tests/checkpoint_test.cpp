// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "fairjudge/checkpoint.hpp"
#include "fairjudge/error.hpp"
#include "fairjudge/io.hpp"
#include "testing.hpp"

namespace fairjudge {
namespace {

Checkpoint sample_checkpoint() {
  const LmConfig c = testing::tiny_config(6);
  Checkpoint ck{testing::random_params(c, 3), Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "a", "\n"}),
                AdamState::zeros(ParamLayout::build(c).total), Rng(9).state(), "abc123", {{"stage", "sft"}}};
  ck.optimizer.m[3] = 0.25;
  ck.optimizer.step = 7;
  return ck;
}

TEST(CheckpointTest, RoundTripIsExact) {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(ck);
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.vocab, ck.vocab);
  EXPECT_EQ(back.optimizer, ck.optimizer);
  EXPECT_EQ(back.rng_state, ck.rng_state);
  EXPECT_EQ(back.config_hash, "abc123");
  EXPECT_EQ(back.meta.at("stage"), "sft");
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  Rng restored;
  restored.restore(back.rng_state);
  EXPECT_EQ(restored, Rng(9));
}

TEST(CheckpointTest, TruncatedPayloadIsRejected) {
  std::string bytes = serialize_checkpoint(sample_checkpoint());
  bytes.resize(bytes.size() - 8);
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CheckpointCorrupt);
  }
}

TEST(CheckpointTest, ShapeInconsistentHeaderIsRejected) {
  std::string bytes = serialize_checkpoint(sample_checkpoint());
  const auto pos = bytes.find("\"d_ff\":16");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 9, "\"d_ff\":17");
  EXPECT_THROW(deserialize_checkpoint(bytes), Error);
}

TEST(CheckpointTest, SaveRefusesSilentOverwrite) {
  const auto dir = std::filesystem::temp_directory_path() / "fj_ckpt_test";
  std::filesystem::remove_all(dir);
  Checkpoint ck = sample_checkpoint();
  save_checkpoint(dir / "a.ckpt", ck);
  save_checkpoint(dir / "a.ckpt", ck);  // identical bytes: fine
  ck.params.values()[0] += 1.0;
  try {
    save_checkpoint(dir / "a.ckpt", ck);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ArtifactExists);
  }
  save_checkpoint(dir / "a.ckpt", ck, true);
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt").params, ck.params);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace fairjudge
