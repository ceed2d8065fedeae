#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "autofi/config.hpp"

using namespace autofi;
using namespace autofi::config;

namespace {

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no ConfigError";
  return {};
}

}  // namespace

TEST(Parse, KeyValueLinesWithComments) {
  const KeyValues kv = parse("# comment\n\n  lr = 0.005 \nmi_sign=literal\r\n\tgss_epochs =12\n");
  EXPECT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("lr"), "0.005");
  EXPECT_EQ(kv.at("mi_sign"), "literal");
  EXPECT_EQ(kv.at("gss_epochs"), "12");
}

TEST(Parse, RejectsMalformedLines) {
  EXPECT_NE(what_of([] { parse("lr = 1\nnot a pair\n"); }).find("line 2"), std::string::npos);
  EXPECT_NE(what_of([] { parse("lr = 1\nlr = 2\n"); }).find("twice"), std::string::npos);
  EXPECT_THROW(parse(" = 3\n"), ConfigError);
}

TEST(Apply, SetsEveryModule) {
  Settings s;
  config::apply(parse("subcarriers = 21\nwindow = 72\nlr = 0.003\nlambda = 10\nmi_sign = literal\nfreeze_encoder = true\n"
              "n_way = 5\nfirst_stride_w = 2\nenvironment_seed = 11\ntones_per_class = 3\ngrad_seeds = 4\n"),
        s);
  EXPECT_EQ(s.stream.subcarriers, 21u);
  EXPECT_EQ(s.stream.window, 72u);
  EXPECT_EQ(s.segment.window, 72u);
  EXPECT_DOUBLE_EQ(s.train.lr, 0.003);
  EXPECT_DOUBLE_EQ(s.train.lambda, 10.0);
  EXPECT_EQ(s.train.mi_sign, gss::MiSign::literal);
  EXPECT_TRUE(s.train.freeze_encoder);
  EXPECT_EQ(s.episodes.n_way, 5u);
  EXPECT_EQ(s.arch.first_stride.w, 2u);
  EXPECT_EQ(s.stream.environment_seed, 11u);
  EXPECT_EQ(s.generator.tones_per_class, 3u);
  EXPECT_EQ(s.grad_seeds, 4u);
  EXPECT_EQ(s.encoder_arch().input, (Shape{3, 21, 72}));
}

TEST(Apply, DefaultsMatchTrainingSetup) {
  const Settings s;
  EXPECT_EQ(s.train.gss_epochs, 300u);
  EXPECT_EQ(s.train.batch_size, 128u);
  EXPECT_DOUBLE_EQ(s.train.lr, 0.01);
  EXPECT_DOUBLE_EQ(s.train.momentum, 0.9);
  EXPECT_EQ(s.train.fsc_epochs, 100u);
  EXPECT_EQ(s.encoder_arch().input, (Shape{3, 114, 500}));
}

TEST(Apply, UnknownKeyIsNamed) {
  Settings s;
  EXPECT_NE(what_of([&] { config::apply(parse("bogus_key = 1\n"), s); }).find("'bogus_key'"), std::string::npos);
}

TEST(Apply, BadValuesAreNamed) {
  Settings s;
  EXPECT_NE(what_of([&] { config::apply(parse("lr = fast\n"), s); }).find("'lr'"), std::string::npos);
  EXPECT_NE(what_of([&] { config::apply(parse("batch_size = 12x\n"), s); }).find("'batch_size'"), std::string::npos);
  EXPECT_NE(what_of([&] { config::apply(parse("mi_sign = flipped\n"), s); }).find("'mi_sign'"), std::string::npos);
  EXPECT_NE(what_of([&] { config::apply(parse("freeze_encoder = yes\n"), s); }).find("'freeze_encoder'"), std::string::npos);
}

TEST(Load, MissingFileNamesPath) {
  EXPECT_NE(what_of([] { load("/nonexistent/dir/run.cfg"); }).find("/nonexistent/dir/run.cfg"), std::string::npos);
  const auto path = std::filesystem::temp_directory_path() / "autofi_config_test.cfg";
  std::ofstream(path) << "gamma = 100\n";
  EXPECT_EQ(load(path).at("gamma"), "100");
  std::filesystem::remove(path);
}

TEST(DocumentedKeys, CoverEveryAcceptedKey) {
  const auto keys = documented_keys();
  EXPECT_GE(keys.size(), 40u);
  for (const auto& [key, help] : keys) {
    EXPECT_FALSE(help.empty()) << key;
    Settings s;
    try {
      KeyValues kv;
      kv[key] = "1";
      config::apply(kv, s);
    } catch (const ConfigError& e) {
      EXPECT_EQ(std::string(e.what()).find("unknown"), std::string::npos) << key;
    }
  }
}
