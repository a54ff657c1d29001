// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors
//
// RunConfig plumbing plus end-to-end runs of the mtlsplit binary.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"
#include "mtlsplit/model.hpp"
#include "mtlsplit/run_config.hpp"
#include "mtlsplit/synth_data.hpp"
#include "test_util.hpp"

using namespace mtlsplit;
namespace fs = std::filesystem;

namespace {

const std::string kCli = MTLSPLIT_CLI_PATH;
const std::string kDescriptors = MTLSPLIT_SOURCE_DIR "/descriptors";

struct Result {
  int code = -1;
  std::string out;
};

Result run_cli(const std::vector<std::string>& args) {
  std::string cmd = "MTLSPLIT_LOG=off '" + kCli + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " 2>/dev/null";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Child process with its stdout on a pipe.
struct Child {
  pid_t pid = -1;
  FILE* out = nullptr;

  static Child spawn(const std::vector<std::string>& args) {
    int fds[2];
    if (::pipe(fds) != 0) return {};
    const pid_t pid = ::fork();
    if (pid == 0) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
      ::setenv("MTLSPLIT_LOG", "off", 1);
      std::vector<char*> argv{const_cast<char*>(kCli.c_str())};
      for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      ::execv(kCli.c_str(), argv.data());
      ::_exit(127);
    }
    ::close(fds[1]);
    return {pid, ::fdopen(fds[0], "r")};
  }

  std::string read_line() {
    std::string line;
    int c;
    while ((c = std::fgetc(out)) != EOF && c != '\n') line.push_back(static_cast<char>(c));
    return line;
  }

  std::string read_rest() {
    std::string s;
    int c;
    while ((c = std::fgetc(out)) != EOF) s.push_back(static_cast<char>(c));
    return s;
  }

  int wait() {
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (out) std::fclose(out);
    out = nullptr;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// A run config small enough for each CLI invocation to take well under a second.
RunConfig tiny_config() {
  RunConfig c;
  c.seed = 5;
  c.dataset.width = 8;
  c.dataset.height = 8;
  c.dataset.factors = {{"object-hue", 2}, {"object-shape", 3}, {"object-size", 2}};
  c.dataset.samples_per_combination = 4;
  c.dataset.noise_fraction = 0.1;
  c.backbone_widths = {16};
  c.feature_len = 8;
  c.head_hidden_width = 8;
  c.epochs = 2;
  c.batch_size = 8;
  c.finetune_epochs = 2;
  c.listen = "127.0.0.1:0";
  return c;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = testutil::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return dir_ + "/" + name; }
  std::string write_config(const RunConfig& c, const std::string& name = "config.json") const {
    std::ofstream(path(name)) << to_json(c).dump(2);
    return path(name);
  }

  std::string dir_;
};

}  // namespace

TEST(RunConfig, DefaultsValidate) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.model_config().tasks.size(), 3u);
  EXPECT_EQ(c.model_config().width, 16u);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = tiny_config();
  c.tasks = {"object-shape"};
  c.finetune_add_task = "object-hue";
  c.finetune.eta = 0.5f;
  c.paradigm = Paradigm::kRoC;
  c.channel.per_message_overhead_s = 0.25;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_digest(back), config_digest(c));
}

TEST(RunConfig, MissingFieldsKeepDefaults) {
  const RunConfig c = run_config_from_json(nlohmann::json{{"seed", 9}});
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.epochs, RunConfig{}.epochs);
  EXPECT_EQ(to_json(c.dataset), to_json(RunConfig{}.dataset));
}

TEST(RunConfig, TypeErrorsNameTheField) {
  try {
    run_config_from_json(nlohmann::json{{"epochs", "many"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_config_from_json(nlohmann::json::array()), ConfigError);
  RunConfig bad = tiny_config();
  bad.tasks = {"wall-hue"};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.train_ratio = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.dataset.factors = {{"object-shape", 9}};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RunConfig, DigestTracksContent) {
  RunConfig a = tiny_config(), b = tiny_config();
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_EQ(config_digest(a).size(), 16u);
  b.seed = 6;
  EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(DeltaTable, SignsAndMissingTasks) {
  RunMetrics stl, mtl;
  stl.tasks = mtl.tasks = {"a", "b"};
  stl.accuracies = {90.0, 80.0};
  mtl.accuracies = {91.5, 79.25};
  const auto rows = delta_rows(stl, mtl);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].delta, 1.5);
  EXPECT_DOUBLE_EQ(rows[1].delta, -0.75);
  const std::string table = format_delta_table(rows);
  EXPECT_NE(table.find("+1.50"), std::string::npos) << table;
  EXPECT_NE(table.find("-0.75"), std::string::npos) << table;
  mtl.tasks = {"a", "c"};
  EXPECT_THROW(delta_rows(stl, mtl), ContractError);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
  EXPECT_EQ(run_cli({"train", "--mode", "both"}).code, 1);
  EXPECT_EQ(run_cli({"train", "--bogus"}).code, 1);
  std::ofstream(path("bad.json")) << R"({"train_ratio": 2.0})";
  EXPECT_EQ(run_cli({"gen-data", "--config", path("bad.json"), "--out", path("d.mtld")}).code, 1);
  EXPECT_EQ(run_cli({"finetune", "--checkpoint", path("missing.ckpt")}).code, 2);
  EXPECT_EQ(run_cli({"analyze", "--descriptor", path("missing.json")}).code, 2);
}

TEST_F(CliTest, GenDataIsDeterministic) {
  const std::string cfg = write_config(tiny_config());
  const auto a = run_cli({"gen-data", "--config", cfg, "--out", path("a.mtld")});
  const auto b = run_cli({"gen-data", "--config", cfg, "--out", path("b.mtld")});
  const auto c = run_cli({"gen-data", "--config", cfg, "--seed", "6", "--out", path("c.mtld")});
  ASSERT_EQ(a.code, 0);
  EXPECT_NE(a.out.find("K = 48"), std::string::npos) << a.out;
  EXPECT_EQ(slurp(path("a.mtld")), slurp(path("b.mtld")));
  EXPECT_NE(slurp(path("a.mtld")), slurp(path("c.mtld")));
  EXPECT_TRUE(bitwise_equal(load_dataset(path("a.mtld")), generate(tiny_config().dataset, 5)));
}

TEST_F(CliTest, ZeroEpochTrainingSavesTheInitialization) {
  RunConfig c = tiny_config();
  c.epochs = 0;
  const std::string cfg = write_config(c);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--mode", "mtl", "--out", path("run")}).code, 0);
  const auto bytes = read_file(path("run/mtl.ckpt"));
  EXPECT_EQ(bytes, encode_checkpoint(MtlModel::initialize(c.model_config(), c.seed)));
}

TEST_F(CliTest, TrainingIsReproducible) {
  const std::string cfg = write_config(tiny_config());
  for (const char* run : {"r1", "r2"}) {
    ASSERT_EQ(run_cli({"train", "--config", cfg, "--mode", "mtl", "--out", path(run)}).code, 0);
    ASSERT_EQ(run_cli({"train", "--config", cfg, "--mode", "stl", "--out", path(run)}).code, 0);
  }
  for (const char* f : {"mtl.ckpt", "mtl.backbone.ckpt", "mtl.heads.ckpt", "stl_object-hue.ckpt", "config.json"}) {
    EXPECT_EQ(slurp(path(std::string("r1/") + f)), slurp(path(std::string("r2/") + f))) << f;
  }
  for (const char* f : {"mtl_metrics.json", "stl_metrics.json"}) {
    auto a = nlohmann::json::parse(slurp(path(std::string("r1/") + f)));
    auto b = nlohmann::json::parse(slurp(path(std::string("r2/") + f)));
    a.erase("wall_clock_seconds");
    b.erase("wall_clock_seconds");
    EXPECT_EQ(a, b) << f;
  }
  const auto delta = run_cli({"report-delta", "--stl", path("r1/stl_metrics.json"), "--mtl",
                              path("r1/mtl_metrics.json"), "--out", path("delta.json")});
  EXPECT_EQ(delta.code, 0);
  EXPECT_NE(delta.out.find("object-shape"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("delta.json"))).size(), 3u);
}

TEST_F(CliTest, FinetuneWithFrozenBackboneAddsAHead) {
  RunConfig c = tiny_config();
  c.tasks = {"object-hue", "object-shape"};
  ASSERT_EQ(run_cli({"train", "--config", write_config(c), "--out", path("run")}).code, 0);
  c.finetune_add_task = "object-size";
  c.finetune.eta = 0.0f;
  const auto r = run_cli({"finetune", "--config", write_config(c, "ft.json"), "--checkpoint", path("run/mtl.ckpt"),
                          "--out", path("ft.ckpt")});
  ASSERT_EQ(r.code, 0) << r.out;
  const MtlModel before = model_from_checkpoint(load_checkpoint(path("run/mtl.ckpt")));
  const MtlModel after = model_from_checkpoint(load_checkpoint(path("ft.ckpt")));
  EXPECT_EQ(after.n_tasks(), before.n_tasks() + 1);
  EXPECT_EQ(after.config().tasks.back().name, "object-size");
  const auto pb = before.backbone_parameters(), pa = after.backbone_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].tensor->bitwise_equal(*pb[i].tensor)) << pa[i].name;
  EXPECT_TRUE(fs::exists(path("ft.ckpt.metrics.json")));

  c.finetune.alpha = 0.0f;
  EXPECT_EQ(run_cli({"finetune", "--config", write_config(c, "bad.json"), "--checkpoint", path("run/mtl.ckpt")}).code,
            1);
}

TEST_F(CliTest, ServeAndEdgeMatchLocalInference) {
  const RunConfig c = tiny_config();
  const std::string cfg = write_config(c);
  ASSERT_EQ(run_cli({"train", "--config", cfg, "--out", path("run")}).code, 0);
  ASSERT_EQ(run_cli({"gen-data", "--config", cfg, "--out", path("d.mtld")}).code, 0);

  for (const char* mode : {"sc", "roc"}) {
    const std::string heads = std::string(mode) == "sc" ? "run/mtl.heads.ckpt" : "run/mtl.ckpt";
    Child server = Child::spawn({"serve", "--config", cfg, "--checkpoint", path(heads), "--mode", mode});
    const std::string banner = server.read_line();
    std::smatch m;
    ASSERT_TRUE(std::regex_search(banner, m, std::regex(R"(on 127\.0\.0\.1:(\d+))"))) << banner;
    const std::string addr = "127.0.0.1:" + m[1].str();

    std::vector<std::string> edge{"edge", "--config", cfg, "--mode", mode, "--connect", addr, "--data",
                                  path("d.mtld"), "--limit", "20", "--out", path("pred.json")};
    if (std::string(mode) == "sc") edge.insert(edge.end(), {"--checkpoint", path("run/mtl.backbone.ckpt")});
    const auto r = run_cli(edge);
    ::kill(server.pid, SIGINT);
    const std::string tail = server.read_rest();
    EXPECT_EQ(server.wait(), 0) << mode;
    EXPECT_NE(tail.find("served 20 requests"), std::string::npos) << tail;
    ASSERT_EQ(r.code, 0) << mode;

    const MtlModel model = model_from_checkpoint(load_checkpoint(path("run/mtl.ckpt")));
    const Dataset ds = load_dataset(path("d.mtld"));
    const auto doc = nlohmann::json::parse(slurp(path("pred.json")));
    ASSERT_EQ(doc.at("predictions").size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) {
      const auto local = predict_all(model, ds.samples[i].pixels);
      const auto& row = doc.at("predictions")[i];
      for (std::size_t j = 0; j < local.size(); ++j) {
        const auto remote = row.at("logits")[j].get<std::vector<float>>();
        const auto d = local[j].data();
        EXPECT_TRUE(std::equal(d.begin(), d.end(), remote.begin(), remote.end())) << mode << " input " << i;
      }
    }
  }
}

TEST_F(CliTest, EdgeWithoutServerFailsAtRuntime) {
  const std::string cfg = write_config(tiny_config());
  const auto r = run_cli({"edge", "--config", cfg, "--mode", "roc", "--connect", "127.0.0.1:1", "--limit", "1"});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, SimulateReportsIdenticalLogits) {
  const std::string cfg = write_config(tiny_config());
  for (const char* mode : {"sc", "roc"}) {
    const auto r = run_cli({"simulate", "--config", cfg, "--mode", mode, "--limit", "10", "--out", path("sim.json")});
    EXPECT_EQ(r.code, 0) << r.out;
    const auto doc = nlohmann::json::parse(slurp(path("sim.json")));
    EXPECT_EQ(doc.at("logit_mismatches"), 0);
    EXPECT_GT(doc.at("simulated_seconds").get<double>(), 0.0);
  }
}

TEST_F(CliTest, AnalyzeRendersPublishedDescriptors) {
  const auto r = run_cli({"analyze", "--descriptor", kDescriptors + "/mobilenetv3.json", "--descriptor",
                          kDescriptors + "/efficientnet.json", "--format", "json", "--sc-target-seconds", "12"});
  ASSERT_EQ(r.code, 0);
  const auto doc = nlohmann::json::parse(r.out);
  const auto& rows = doc.at("table").at("rows");
  EXPECT_EQ(rows[0].at("estimated_mb"), 727.66);
  EXPECT_EQ(rows[1].at("estimated_mb"), 3467.54);
  EXPECT_EQ(doc.at("comparisons")[1].at("loc_memory_gb").at("3"), 10.40);
  EXPECT_NEAR(doc.at("comparisons")[1].at("sc_overhead_to_match").at("overhead_seconds").get<double>(), 0.107, 5e-4);
  const auto text = run_cli({"analyze", "--descriptor", kDescriptors + "/efficientnet.json", "--unit", "binary"});
  EXPECT_NE(text.out.find("binary"), std::string::npos);
}
