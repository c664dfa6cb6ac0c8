#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "dualformer/cli.hpp"

using namespace dualformer;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("dualformer_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  std::string write_table(const std::string& name, const data::Dataset& ds) const {
    std::ofstream f(path(name));
    data::write_csv(ds, f);
    return path(name);
  }

  // Small two-channel run that trains in well under a second per epoch.
  std::vector<std::string> tiny_train(const std::string& csv, const std::string& out_dir) const {
    return {"train",       "--set", "data=" + csv, "--set", "L=24",           "--set", "T=6",
            "--set",       "D=8",   "--set",       "N=2",   "--set",          "heads=2",
            "--set",       "max_epochs=2",         "--set", "lr=1e-3",        "--set", "out_dir=" + out_dir};
  }

  fs::path dir;
};

data::Dataset table(std::size_t len, std::size_t channels, const std::function<double(std::size_t, std::size_t)>& f) {
  data::Dataset ds;
  ds.length = len;
  ds.channels = channels;
  for (std::size_t c = 0; c < channels; ++c) ds.channel_names.push_back("c" + std::to_string(c));
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < channels; ++c) ds.values.push_back(f(t, c));
  return ds;
}

std::vector<report::Record> records_of(const std::string& text, const std::string& type) {
  std::vector<report::Record> out;
  for (auto& r : report::parse(text))
    if (r.type == type) out.push_back(r);
  return out;
}

}  // namespace

TEST(RunConfig, DefaultsFollowTheReferenceSetup) {
  cli::RunConfig rc;
  EXPECT_EQ(rc.model.lookback, 96u);
  EXPECT_EQ(rc.model.layers, 3u);
  EXPECT_EQ(rc.model.n_harmonics, 3u);
  EXPECT_EQ(rc.train.lr, 1e-4);
  EXPECT_EQ(rc.train.patience, 3u);
  EXPECT_EQ(rc.model.seed, 0u);
  EXPECT_EQ(rc.split.train, 0.6);
}

TEST_F(CliTest, ConfigFileThenOverrides) {
  {
    std::ofstream f(path("run.cfg"));
    f << "# comment\nalpha = 0.3\n\nseed=5   # trailing\nlag_policy = direct\nsplit_train=0.7\nsplit_val=0.1\n";
  }
  auto rc = cli::load_run_config(path("run.cfg"), {"alpha=0.4"});
  EXPECT_EQ(rc.model.alpha, 0.4);
  EXPECT_EQ(rc.model.seed, 5u);
  EXPECT_EQ(rc.train.seed, 5u);
  EXPECT_EQ(rc.model.lag_policy, attention::LagPolicy::direct);
  EXPECT_EQ(rc.split.train, 0.7);

  // Every canonical entry reloads to the same configuration.
  {
    std::ofstream f(path("echo.cfg"));
    for (const auto& [k, v] : rc.entries()) f << k << " = " << v << '\n';
  }
  auto back = cli::load_run_config(path("echo.cfg"), {});
  EXPECT_EQ(back.entries(), rc.entries());

  {
    std::ofstream f(path("bad.cfg"));
    f << "alpha = 0.3\nwidth = 16\n";
  }
  EXPECT_THROW(cli::load_run_config(path("bad.cfg"), {}), ConfigError);
  EXPECT_THROW(cli::load_run_config("", {"alpha"}), ConfigError);
  EXPECT_THROW(cli::load_run_config("", {"alpha=abc"}), ConfigError);
  EXPECT_THROW(cli::load_run_config("", {"ablation=sideways"}), ConfigError);
}

TEST_F(CliTest, TrainWritesArtifactsAndIsDeterministic) {
  const auto csv = write_table("tt.csv", data::two_tone_dataset(300, 2, 0.05, 4));
  auto a = invoke(tiny_train(csv, path("a")));
  ASSERT_EQ(a.code, cli::kOk) << a.err;
  auto b = invoke(tiny_train(csv, path("b")));
  ASSERT_EQ(b.code, cli::kOk) << b.err;
  for (auto name : {"history.txt", "metrics.txt", "checkpoint.txt"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / name)) << name;
    EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name)) << name;
  }
  auto history = slurp(dir / "a" / "history.txt");
  EXPECT_EQ(records_of(history, "epoch").size(), 2u);
  EXPECT_EQ(records_of(history, "run").at(0).get("seed"), "0");
  auto metrics = records_of(slurp(dir / "a" / "metrics.txt"), "metrics");
  ASSERT_EQ(metrics.size(), 2u);
  EXPECT_EQ(metrics[0].get("label"), "model");
  EXPECT_EQ(metrics[1].get("label"), "naive");

  auto args = tiny_train(csv, path("c"));
  args.insert(args.end(), {"--set", "seed=1"});
  auto c = invoke(args);
  ASSERT_EQ(c.code, cli::kOk);
  EXPECT_NE(slurp(dir / "c" / "history.txt"), history);
  EXPECT_EQ(records_of(slurp(dir / "c" / "history.txt"), "run").at(0).get("seed"), "1");
}

TEST_F(CliTest, TrainAblationAndErrors) {
  const auto csv = write_table("tt.csv", data::two_tone_dataset(300, 2, 0.05, 4));
  auto args = tiny_train(csv, path("f"));
  args.insert(args.end(), {"--set", "ablation=freq_only"});
  ASSERT_EQ(invoke(args).code, cli::kOk);
  std::ifstream ck(dir / "f" / "checkpoint.txt");
  EXPECT_EQ(model::load_checkpoint(ck).mode, model::Ablation::freq_only);
  EXPECT_EQ(records_of(slurp(dir / "f" / "history.txt"), "config").at(0).get("ablation"), "freq_only");

  EXPECT_EQ(invoke({"train", "--set", "data=" + path("missing.csv")}).code, cli::kData);
  EXPECT_EQ(invoke({"train"}).code, cli::kConfig);
  auto bad = tiny_train(csv, path("g"));
  bad.insert(bad.end(), {"--set", "D=7"});
  EXPECT_EQ(invoke(bad).code, cli::kConfig);
  // 60 rows cannot hold a test window of L + T = 30.
  const auto small = write_table("small.csv", data::two_tone_dataset(60, 2, 0.05, 4));
  EXPECT_EQ(invoke(tiny_train(small, path("h"))).code, cli::kData);
  {
    std::ofstream f(path("ragged.csv"));
    f << "a,b\n1,2\n3\n";
  }
  auto r = invoke(tiny_train(path("ragged.csv"), path("i")));
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("row"), std::string::npos);
}

TEST_F(CliTest, EvalReportsNaiveBaselineAndChecksChannels) {
  const auto csv = write_table("tt.csv", data::two_tone_dataset(300, 2, 0.05, 4));
  ASSERT_EQ(invoke(tiny_train(csv, path("run"))).code, cli::kOk);
  const auto ck = path("run/checkpoint.txt");
  auto r = invoke({"eval", "--checkpoint", ck, "--data", csv});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto m = records_of(r.out, "metrics");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[1].get("label"), "naive");
  // Same split and statistics as the training run.
  auto trained = records_of(slurp(dir / "run" / "metrics.txt"), "metrics");
  EXPECT_EQ(m[0].get("mse"), trained[0].get("mse"));
  EXPECT_EQ(m[1].get("mse"), trained[1].get("mse"));

  const auto three = write_table("three.csv", data::two_tone_dataset(300, 3, 0.05, 4));
  auto bad = invoke({"eval", "--checkpoint", ck, "--data", three});
  EXPECT_EQ(bad.code, cli::kData);
  EXPECT_NE(bad.err.find("C=2"), std::string::npos) << bad.err;
  EXPECT_NE(bad.err.find("C=3"), std::string::npos) << bad.err;
  EXPECT_EQ(invoke({"eval", "--checkpoint", ck, "--data", csv, "--split", "holdout"}).code, cli::kUsage);
}

TEST_F(CliTest, EvalOnOverfitTrainSplit) {
  const auto csv = write_table("tone.csv", table(240, 1, [](std::size_t t, std::size_t) {
                                 return std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 12.0);
                               }));
  auto args = tiny_train(csv, path("fit"));
  args.insert(args.end(), {"--set", "max_epochs=15", "--set", "batch_size=8", "--set", "patience=15"});
  ASSERT_EQ(invoke(args).code, cli::kOk);
  auto r = invoke({"eval", "--checkpoint", path("fit/checkpoint.txt"), "--data", csv, "--split", "train"});
  ASSERT_EQ(r.code, cli::kOk);
  EXPECT_LT(records_of(r.out, "metrics").at(0).real("mse"), 0.01);
}

TEST_F(CliTest, AnalyzeTrajectories) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0.0, 1.0);
  const auto csv = write_table("mix.csv", table(600, 3, [&](std::size_t t, std::size_t c) {
                                 if (c == 0) return std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 24.0);
                                 if (c == 1) return nd(rng);
                                 return 4.0;
                               }));
  auto r = invoke({"analyze", "--data", csv, "--window", "96", "--stride", "8"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto windows = records_of(r.out, "window");
  EXPECT_EQ(windows.size(), 3u * ((600 - 96) / 8 + 1));
  std::vector<double> noise;
  for (const auto& w : windows) {
    const auto c = w.count("channel");
    if (c == 0) {
      EXPECT_GE(w.real("w_f"), 0.999);
      EXPECT_EQ(w.count("k"), 4u);
    }
    if (c == 1) noise.push_back(w.real("w_f"));
    if (c == 2) {
      EXPECT_EQ(w.get("flat"), "true");
      EXPECT_EQ(w.real("w_f"), 0.0);
    }
  }
  std::sort(noise.begin(), noise.end());
  EXPECT_LT(noise[noise.size() / 2], 0.3);
  auto channels = records_of(r.out, "channel");
  ASSERT_EQ(channels.size(), 3u);
  EXPECT_GT(channels[0].real("mean_w_f"), channels[1].real("mean_w_f"));
  EXPECT_EQ(channels[2].count("flat_windows"), channels[2].count("windows"));

  EXPECT_EQ(invoke({"analyze", "--data", csv, "--window", "700"}).code, cli::kData);
  EXPECT_EQ(invoke({"analyze", "--data", csv, "--stride", "0"}).code, cli::kConfig);
}

TEST_F(CliTest, VerifyTheorem) {
  auto a = invoke({"verify-theorem", "--count", "200", "--lambda-min", "4.5", "--lambda-max", "100"});
  ASSERT_EQ(a.code, cli::kOk);
  auto s = records_of(a.out, "theorem").at(0);
  EXPECT_EQ(s.count("count"), 200u);
  EXPECT_EQ(s.count("violations"), 0u);
  EXPECT_EQ(s.get("seed"), "0");
  EXPECT_EQ(invoke({"verify-theorem", "--count", "200"}).out, a.out);
  EXPECT_NE(invoke({"verify-theorem", "--seed", "3"}).out, a.out);

  // Below lambda = 4 the bound is 0 and holds trivially.
  auto low = invoke({"verify-theorem", "--count", "20", "--lambda-min", "1", "--lambda-max", "3.5", "--records"});
  ASSERT_EQ(low.code, cli::kOk);
  for (const auto& r : records_of(low.out, "spec"))
    if (r.get("binding") == "false") {
      EXPECT_EQ(r.real("bound"), 0.0);
    }
  EXPECT_EQ(records_of(low.out, "spec").size(), 20u);
  EXPECT_EQ(invoke({"verify-theorem", "--count", "0"}).code, cli::kConfig);
}

TEST_F(CliTest, GradcheckCoversEveryGroupOnce) {
  auto r = invoke({"gradcheck"});
  ASSERT_EQ(r.code, cli::kOk) << r.out;
  std::vector<std::string> names;
  for (const auto& g : records_of(r.out, "group")) {
    names.push_back(g.get("name"));
    EXPECT_LE(g.real("rel_error"), 1e-3) << g.get("name");
  }
  std::vector<std::string> expected;
  for (const auto& [n, t] : model::init_model(cli::gradcheck_defaults().model).named_parameters()) expected.push_back(n);
  EXPECT_EQ(names, expected);
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
  EXPECT_EQ(records_of(r.out, "gradcheck").at(0).get("pass"), "true");

  EXPECT_EQ(invoke({"gradcheck", "--set", "L=64"}).code, cli::kConfig);
}

TEST(Gradcheck, CorruptedBackwardIsDetected) {
  auto rc = cli::gradcheck_defaults();
  cli::GradcheckOptions opt;
  opt.corrupt = "head.bias";
  std::ostringstream out;
  EXPECT_EQ(cli::cmd_gradcheck(rc, opt, out), cli::kVerification);
  auto s = records_of(out.str(), "gradcheck").at(0);
  EXPECT_EQ(s.get("worst_group"), "head.bias");
  EXPECT_EQ(s.get("pass"), "false");
  opt.corrupt = "no.such.param";
  EXPECT_THROW(cli::run_gradcheck(rc.model, opt), ConfigError);
}

TEST_F(CliTest, SweepTableAndFailedCells) {
  const auto csv = write_table("tt.csv", data::two_tone_dataset(300, 1, 0.05, 4));
  auto base = tiny_train(csv, path("sweep"));
  base[0] = "sweep";
  base.insert(base.end(), {"--set", "max_steps=3", "--param", "alpha", "--jobs", "2"});
  auto r = invoke(base);
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto rows = records_of(r.out, "sweep");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].get("value"), "0.2");
  EXPECT_EQ(rows[4].get("value"), "1");
  for (const auto& row : rows) EXPECT_EQ(row.get("status"), "ok");
  EXPECT_EQ(slurp(dir / "sweep" / "sweep_alpha.txt"), r.out);

  // Same sweep run serially gives the same table.
  auto serial = base;
  serial.back() = "1";
  EXPECT_EQ(invoke(serial).out, r.out);

  auto bad = base;
  bad.insert(bad.end(), {"--values", "0.5,1.5"});
  auto f = invoke(bad);
  EXPECT_EQ(f.code, cli::kConfig);
  auto cells = records_of(f.out, "sweep");
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].get("status"), "ok");
  EXPECT_EQ(cells[1].get("status"), "failed");
  EXPECT_NE(report::unescape(cells[1].get("error")).find("alpha"), std::string::npos);

  auto wrong = base;
  wrong[wrong.size() - 3] = "D";
  EXPECT_EQ(invoke(wrong).code, cli::kUsage);
}

TEST_F(CliTest, SynthWritesReadableCsv) {
  auto r = invoke({"synth", "--set", "period=16", "--set", "repeats=10", "--set", "channels=2", "--set",
                   "harmonics=1,0.25", "--out", path("s.csv")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  auto ds = data::load_csv(path("s.csv"));
  EXPECT_EQ(ds.length, 160u);
  EXPECT_EQ(ds.channels, 2u);
  EXPECT_EQ(records_of(r.out, "synth").at(0).get("seed"), "0");
  invoke({"synth", "--set", "period=16", "--set", "repeats=10", "--set", "channels=2", "--set", "harmonics=1,0.25",
          "--out", path("t.csv")});
  EXPECT_EQ(slurp(path("s.csv")), slurp(path("t.csv")));

  {
    std::ofstream f(path("synth.cfg"));
    f << "kind = two_tone\nlength = 123\nchannels = 3\n";
  }
  ASSERT_EQ(invoke({"synth", "--config", path("synth.cfg"), "--out", path("u.csv")}).code, cli::kOk);
  EXPECT_EQ(data::load_csv(path("u.csv")).length, 123u);
  EXPECT_EQ(invoke({"synth", "--set", "kind=square", "--out", path("v.csv")}).code, cli::kConfig);
  EXPECT_EQ(invoke({"synth", "--set", "period=10", "--set", "harmonics=1,1,1,1,1,1", "--out", path("v.csv")}).code,
            cli::kConfig);
}

TEST(CliSurface, HelpAndUnknownFlags) {
  const std::map<std::string, std::vector<std::string>> flags{
      {"train", {"--config", "--set"}},
      {"eval", {"--checkpoint", "--data", "--split", "--config", "--set"}},
      {"analyze", {"--data", "--window", "--stride", "--n-harmonics", "--max-rows"}},
      {"verify-theorem", {"--count", "--lambda-min", "--lambda-max", "--seed", "--records"}},
      {"gradcheck", {"--config", "--set", "--tolerance", "--step"}},
      {"sweep", {"--config", "--set", "--param", "--values", "--jobs"}},
      {"synth", {"--config", "--set", "--out"}}};
  for (const auto& [cmd, names] : flags) {
    auto r = invoke({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& f : names) EXPECT_NE(r.out.find(f), std::string::npos) << cmd << " " << f;
    EXPECT_EQ(invoke({cmd, "--no-such-flag"}).code, cli::kUsage) << cmd;
  }
  EXPECT_EQ(invoke({}).code, cli::kUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kUsage);
}
