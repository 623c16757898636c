#include <gtest/gtest.h>

#include <cstdio>

#include "test_util.hpp"

namespace vspcn {
namespace {

class CheckpointFile : public ::testing::Test {
 protected:
  RunConfig cfg = testing::toy_config();
  Checkpoint ck;
  std::vector<std::uint8_t> bytes;
  std::string path = ::testing::TempDir() + "vspcn_checkpoint_test.bin";

  void SetUp() override {
    cfg.optim.epochs = 2;
    auto state = fresh_state<double>(cfg);
    train(state, synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream)), cfg);
    ck = to_checkpoint(state, cfg);
    bytes = serialize_checkpoint(ck);
  }
  void TearDown() override { std::remove(path.c_str()); }

  template <class E>
  std::string error_of(const std::vector<std::uint8_t>& b, const RunConfig& c) {
    try {
      deserialize_checkpoint(b, c);
    } catch (const E& e) {
      return e.what();
    }
    ADD_FAILURE() << "no exception";
    return {};
  }
};

TEST_F(CheckpointFile, SaveLoadSaveIsBitExact) {
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path, cfg);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.epoch, 2u);
  EXPECT_EQ(back.step, ck.step);
  EXPECT_EQ(back.config_text, config_to_text(cfg));
  visit_slots([](const std::string& name, Decay, const Tensor<double>& a, const Tensor<double>& b) {
    EXPECT_EQ(a, b) << name;
  }, back.params, ck.params);
  visit_slots([](const std::string& name, Decay, const Tensor<double>& a, const Tensor<double>& b, std::uint64_t sa,
                 std::uint64_t sb) {
    EXPECT_EQ(a, b) << name;
    EXPECT_EQ(sa, sb) << name;
  }, back.optimizer.v, ck.optimizer.v, back.optimizer.steps, ck.optimizer.steps);
}

TEST_F(CheckpointFile, ConfigEchoIsRecoverable) {
  save_checkpoint(ck, path);
  EXPECT_EQ(config_to_text(checkpoint_config(path)), config_to_text(cfg));
}

TEST_F(CheckpointFile, ResumingMatchesUninterruptedTraining) {
  // 2 epochs + 1 more from the checkpoint == 3 epochs straight
  auto resumed = from_checkpoint<double>(deserialize_checkpoint(bytes, cfg));
  auto three = cfg;
  three.optim.epochs = 3;
  const auto ds = synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream));
  train(resumed, ds, three);
  auto straight = fresh_state<double>(three);
  train(straight, ds, three);
  EXPECT_EQ(serialize_checkpoint(to_checkpoint(resumed, three)), serialize_checkpoint(to_checkpoint(straight, three)));
}

TEST_F(CheckpointFile, TruncationIsNamed) {
  for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_ANY_THROW(deserialize_checkpoint(cut, cfg));
    if (keep >= 4) {
      EXPECT_THROW(deserialize_checkpoint(cut, cfg), TruncatedError) << keep;
    }
  }
}

TEST_F(CheckpointFile, BadMagicVersionAndChecksum) {
  auto b = bytes;
  b[1] = 'Q';
  EXPECT_THROW(deserialize_checkpoint(b, cfg), BadMagicError);
  b = bytes;
  b[4] = 2;
  EXPECT_NE(error_of<VersionError>(b, cfg).find("version 2"), std::string::npos);
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 3, bytes.size() - 5, bytes.size() - 1}) {
    b = bytes;
    b[pos] ^= 0x01;
    EXPECT_THROW(deserialize_checkpoint(b, cfg), ChecksumError) << pos;
  }
}

TEST_F(CheckpointFile, MismatchedWidthNamesTheTensor) {
  auto other = cfg;
  other.model.d_model = 12;
  const auto msg = error_of<ShapeMismatchError>(bytes, other);
  EXPECT_NE(msg.find("'cls'"), std::string::npos) << msg;
}

TEST_F(CheckpointFile, MismatchedClassCountNamesTheTensor) {
  auto other = cfg;
  other.data.n_seen = 4;
  const auto msg = error_of<ShapeMismatchError>(bytes, other);
  EXPECT_NE(msg.find("'w_c'"), std::string::npos) << msg;
}

TEST_F(CheckpointFile, MismatchedDepthIsShapeError) {
  auto other = cfg;
  other.model.layers = 2;
  EXPECT_THROW(deserialize_checkpoint(bytes, other), ShapeMismatchError);
}

TEST_F(CheckpointFile, MissingFile) {
  EXPECT_THROW(load_checkpoint(path + ".absent", cfg), Error);
}

TEST(CheckpointInit, ZeroEpochsCheckpointEqualsInitialisation) {
  auto cfg = testing::toy_config();
  cfg.optim.epochs = 0;
  auto state = fresh_state<double>(cfg);
  std::ostringstream log;
  TrainOptions opt;
  opt.log = &log;
  train(state, synth_gzsl_dataset(cfg, 1), cfg, opt);
  const auto init = init_params<double>(cfg.model, cfg.data.n_attr, cfg.data.n_seen, derive_seed(cfg.seed, kInitStream));
  visit_slots([](const std::string& name, Decay, const Tensor<double>& a, const Tensor<double>& b) {
    EXPECT_EQ(a, b) << name;
  }, state.params, init);
  EXPECT_EQ(log.str(), train_log_header());
  EXPECT_EQ(state.step, 0u);
}

}  // namespace
}  // namespace vspcn
