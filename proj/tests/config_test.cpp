#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "test_util.hpp"

namespace vspcn {
namespace {

TEST(Config, DefaultsAreValidAndMatchDocumentedValues) {
  RunConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  EXPECT_EQ(cfg.model.d_model, 64u);
  EXPECT_EQ(cfg.model.layers, 8u);
  EXPECT_EQ(cfg.model.split_layer, 4u);
  EXPECT_DOUBLE_EQ(cfg.optim.lr, 1e-3);
  EXPECT_DOUBLE_EQ(cfg.optim.weight_decay, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.model.alpha_v, 0.05);
  EXPECT_DOUBLE_EQ(cfg.model.alpha_s, 0.8);
  EXPECT_DOUBLE_EQ(cfg.loss.lambda_ced, 0.8);
  EXPECT_DOUBLE_EQ(cfg.loss.lambda_skd, 0.9);
  EXPECT_EQ(cfg.optim.batch_size, 32u);
}

TEST(Config, ParsesIniText) {
  RunConfig cfg;
  apply_config_text(cfg,
                    "# comment\n"
                    "[model]\n"
                    "d_model = 32   ; trailing comment\n"
                    "heads=2\n"
                    "\n"
                    "adapter = off\n"
                    "lr = 5e-4\n");
  EXPECT_EQ(cfg.model.d_model, 32u);
  EXPECT_EQ(cfg.model.heads, 2u);
  EXPECT_FALSE(cfg.model.toggles.adapter);
  EXPECT_DOUBLE_EQ(cfg.optim.lr, 5e-4);
}

TEST(Config, ErrorsCarryLineNumbers) {
  RunConfig cfg;
  try {
    apply_config_text(cfg, "heads = 2\nbogus = 1\n", "run.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.ini:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_config_text(cfg, "heads two\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "heads = -1\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "lr = fast\n"), ConfigError);
  EXPECT_THROW(apply_config_text(cfg, "pv = maybe\n"), ConfigError);
}

TEST(Config, TextRoundTripIsExact) {
  RunConfig cfg;
  cfg.model.alpha_v = 0.1 + 0.2;  // not representable in short decimal form
  cfg.model.toggles.wspf = false;
  cfg.data.attr_file = "vectors.txt";
  cfg.seed = 123456789012345ull;
  RunConfig back;
  apply_config_text(back, config_to_text(cfg));
  EXPECT_EQ(config_to_text(back), config_to_text(cfg));
  EXPECT_EQ(back.model.alpha_v, cfg.model.alpha_v);
  EXPECT_EQ(back.seed, cfg.seed);
}

TEST(Config, EveryKeyRoundTripsThroughSetAndGet) {
  RunConfig cfg;
  for (const auto& key : config_keys()) {
    const std::string v = key.get(cfg);
    EXPECT_NO_THROW(set_config_value(cfg, key.name, v)) << key.name;
    EXPECT_EQ(key.get(cfg), v) << key.name;
  }
}

TEST(Config, ValidationRules) {
  auto invalid = [](auto mutate) {
    RunConfig cfg;
    mutate(cfg);
    EXPECT_THROW(validate(cfg), ConfigError);
  };
  invalid([](RunConfig& c) { c.model.heads = 3; });
  invalid([](RunConfig& c) { c.model.split_layer = 9; });
  invalid([](RunConfig& c) { c.model.alpha_s = 1.5; });
  invalid([](RunConfig& c) { c.model.grid_h = 0; });
  invalid([](RunConfig& c) { c.model.toggles.pv = false; });  // wvpf/svpf still on
  invalid([](RunConfig& c) {
    c.model.toggles.ps = false;
    c.model.toggles.wspf = false;  // sspf still on
  });
  invalid([](RunConfig& c) { c.loss.gamma = -1; });
  invalid([](RunConfig& c) { c.optim.batch_size = 0; });
  invalid([](RunConfig& c) { c.precision = "f16"; });
  invalid([](RunConfig& c) { c.data.active_attrs = 100; });
}

TEST(Config, AdapterToggleIsIndependentOfSspf) {
  RunConfig cfg;
  cfg.model.toggles.sspf = false;
  cfg.model.toggles.adapter = true;
  EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, SplitEqualToLayersIsAllowed) {
  RunConfig cfg;
  cfg.model.split_layer = cfg.model.layers;
  EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, LoadsFile) {
  const std::string path = ::testing::TempDir() + "vspcn_config_test.ini";
  {
    std::ofstream out(path);
    out << "seed = 99\nepochs = 3\n";
  }
  RunConfig cfg;
  load_config_file(cfg, path);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.optim.epochs, 3u);
  std::remove(path.c_str());
  EXPECT_THROW(load_config_file(cfg, path), ConfigError);
}

}  // namespace
}  // namespace vspcn
