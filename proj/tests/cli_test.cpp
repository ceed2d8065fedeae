#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "autofi/data.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run(const std::string& args) {
  const std::string cmd = std::string(AUTOFI_CLI_PATH) + " " + args + " 2>/dev/null";
  CmdResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("autofi_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string write_config(const std::string& name, const std::string& text) {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }

  fs::path dir;
};

const char* kSmall =
    "subcarriers = 21\nwindow = 72\nsample_rate = 50\nduration = 120\nevent_rate = 600\nbaseline_len = 50\n"
    "first_filters = 8\nfirst_kernel_h = 3\nfirst_kernel_w = 5\nfirst_stride_h = 3\nfirst_stride_w = 2\n"
    "gss_epochs = 2\nfsc_epochs = 3\nbatch_size = 32\nn_episodes = 3\nk_shot = 2\nq_query = 2\nn_way = 3\n";

}  // namespace

TEST_F(Cli, PipelineRunsAndIsReproducible) {
  const std::string cfg = write_config("small.cfg", kSmall);
  for (const char* out : {"a", "b"}) {
    const fs::path o = dir / out;
    const std::string common = " --config " + cfg + " --seed 3 --out " + o.string();
    ASSERT_EQ(run("gen" + common).code, 0);
    ASSERT_EQ(run("segment" + common + " --data " + (o / "stream.afcs").string()).code, 0);
    ASSERT_TRUE(fs::exists(o / "labeled.aflb"));
    ASSERT_EQ(run("pretrain" + common + " --data " + (o / "segments.afcs").string()).code, 0);
    ASSERT_EQ(run("calibrate" + common + " --data " + (o / "labeled.afcs").string() + " --checkpoint " +
                  (o / "gss.afck").string())
                  .code,
              0);
    const CmdResult ev = run("eval" + common + " --data " + (o / "labeled.afcs").string() + " --checkpoint " +
                       (o / "gss.afck").string());
    ASSERT_EQ(ev.code, 0);
    const auto summary = nlohmann::json::parse(ev.out);
    EXPECT_EQ(summary.at("episodes"), 3);
    const CmdResult inf = run("infer" + common + " --data " + (o / "labeled.afcs").string() + " --checkpoint " +
                        (o / "fsc.afck").string());
    ASSERT_EQ(inf.code, 0);
    const auto first = nlohmann::json::parse(inf.out.substr(0, inf.out.find('\n')));
    EXPECT_TRUE(first.contains("class"));
    EXPECT_TRUE(first.contains("posterior"));
  }
  for (const char* f : {"stream.afcs", "events.jsonl", "segments.afcs", "labeled.afcs", "labeled.aflb", "gss.afck",
                        "gss_runlog.jsonl", "fsc.afck", "fsc_runlog.jsonl", "metrics.jsonl", "summary.json",
                        "predictions.jsonl"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_FALSE(slurp(dir / "a" / f).empty()) << f;
  }
  std::istringstream metrics(slurp(dir / "a" / "metrics.jsonl"));
  std::string line;
  for (int e = 0; std::getline(metrics, line); ++e) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("episode"), e);
    EXPECT_EQ(j.size(), 2u);
  }
}

TEST_F(Cli, InferOnFullSizeSample) {
  const std::string cfg = write_config("full.cfg",
                                       "duration = 40\nevent_rate = 30\nfsc_epochs = 1\nembed_dim = 16\n");
  const std::string common = " --config " + cfg + " --seed 1 --out " + dir.string();
  ASSERT_EQ(run("gen" + common).code, 0);
  ASSERT_EQ(run("segment" + common + " --data " + (dir / "stream.afcs").string()).code, 0);
  // A fresh scratch encoder checkpoint stands in for pretraining.
  ASSERT_EQ(run("calibrate" + common + " --data " + (dir / "labeled.afcs").string() + " --checkpoint " +
                (dir / "nothing.afck").string())
                .code,
            1);
  const std::string pre = write_config("pre.cfg", "duration = 40\nevent_rate = 30\ngss_epochs = 0\nbatch_size = 2\n");
  ASSERT_EQ(run("pretrain --config " + pre + " --seed 1 --out " + dir.string() + " --data " +
                (dir / "labeled.afcs").string())
                .code,
            0);
  ASSERT_EQ(run("calibrate" + common + " --data " + (dir / "labeled.afcs").string() + " --checkpoint " +
                (dir / "gss.afck").string())
                .code,
            0);
  const CmdResult r = run("infer --checkpoint " + (dir / "fsc.afck").string() + " --data " + (dir / "labeled.afcs").string());
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_TRUE(j.at("class").is_number_unsigned());
  double sum = 0.0;
  for (double p : j.at("posterior")) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-6);
}

TEST_F(Cli, GradcheckPassesAndReportsEveryLoss) {
  const std::string cfg = write_config("g.cfg", "grad_seeds = 2\n");
  const CmdResult r = run("gradcheck --config " + cfg);
  EXPECT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.at("pass").get<bool>()) << line;
    ++n;
  }
  EXPECT_EQ(n, 7);
}

TEST_F(Cli, ValidationErrorsExitWithOne) {
  EXPECT_EQ(run("gen --config " + write_config("bad.cfg", "bogus = 1\n") + " --out " + dir.string()).code, 1);
  EXPECT_EQ(run("segment --data " + (dir / "missing.afcs").string() + " --out " + dir.string()).code, 1);
  EXPECT_EQ(run("gen --config " + (dir / "missing.cfg").string() + " --out " + dir.string()).code, 1);
  EXPECT_EQ(run("nosuchcommand").code, 1);
  EXPECT_EQ(run("pretrain --bogus-flag").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, RuntimeAbortExitsWithTwo) {
  std::vector<autofi::data::CsiSample> samples(4);
  for (auto& x : samples) x.values = autofi::Tensor({3, 21, 72}, 40.0f);
  samples[2].values[5] = std::numeric_limits<float>::quiet_NaN();
  autofi::data::write_dataset(dir / "nan.afcs", samples);
  const std::string cfg = write_config("nan.cfg",
                                       "subcarriers = 21\nwindow = 72\nfirst_filters = 8\nfirst_kernel_h = 3\n"
                                       "first_kernel_w = 5\nfirst_stride_h = 3\nfirst_stride_w = 2\n"
                                       "gss_epochs = 2\nbatch_size = 2\n");
  const CmdResult r = run("pretrain --config " + cfg + " --out " + dir.string() + " --data " + (dir / "nan.afcs").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(fs::exists(dir / "last_good.afck"));
}
