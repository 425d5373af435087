#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include "common.hpp"

using namespace mvflow;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string output;
};

Result cli(const std::string& args) {
  const auto log = fs::temp_directory_path() / "mvflow_cli_output.txt";
  const std::string cmd = std::string(MVFLOW_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, detail::read_file_bytes(log)};
}

fs::path fresh(const std::string& name) {
  auto d = fs::temp_directory_path() / ("mvflow_cli_" + name);
  fs::remove_all(d);
  return d;
}

const std::string kData = MVFLOW_TEST_DATA;

}  // namespace

TEST(Cli, RasterizeReproducesGoldenFlo) {
  const auto out = fresh("rasterize");
  auto r = cli("--out " + out.string() + " rasterize " + kData + "/golden.mvs --frame 1");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(detail::read_file_bytes(out / "flow.flo"), detail::read_file_bytes(kData + "/golden_raster.flo"));
}

TEST(Cli, RasterizeErrors) {
  const auto out = fresh("rasterize_err");
  EXPECT_EQ(cli("--out " + out.string() + " rasterize " + kData + "/golden.mvs").code, 1);
  EXPECT_EQ(cli("--out " + out.string() + " rasterize " + kData + "/golden.mvs --frame 1 --no-clip").code, 2);
  EXPECT_EQ(cli("--out " + out.string() + " rasterize " + kData + "/golden.flo").code, 2);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("estimate --init nonsense").code, 1);
}

TEST(Cli, WarmStartWithoutPrevFlowNamesTheFlag) {
  auto r = cli("--out " + fresh("warm").string() + " estimate --init mvcm_warm_start");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("--prev-flow"), std::string::npos) << r.output;
}

TEST(Cli, SynthEstimateAndIdempotence) {
  const auto data = fresh("synth_data");
  ASSERT_EQ(cli("--seed 4 --out " + data.string() + " synth --count 2").code, 0);
  const auto manifest = detail::read_file_bytes(data / "manifest.jsonl");
  const auto a = fresh("est_a"), b = fresh("est_b");
  const std::string args = " estimate --data " + data.string() + " --index 1 --init mvcm_warm_start --iters 2";
  auto ra = cli("--out " + a.string() + args);
  ASSERT_EQ(ra.code, 0) << ra.output;
  ASSERT_EQ(cli("--out " + b.string() + args).code, 0);
  EXPECT_EQ(detail::read_file_bytes(a / "flow.flo"), detail::read_file_bytes(b / "flow.flo"));
  EXPECT_TRUE(fs::exists(a / "flow.png"));
  EXPECT_TRUE(fs::exists(a / "error.png"));
  ASSERT_EQ(cli("--seed 4 --out " + data.string() + " synth --count 2").code, 0);
  EXPECT_EQ(detail::read_file_bytes(data / "manifest.jsonl"), manifest);
  auto m = cli("--out " + a.string() + " mvcm --data " + data.string());
  EXPECT_EQ(m.code, 0) << m.output;
  EXPECT_TRUE(fs::exists(a / "mvcm.flo"));
}

TEST(Cli, EstimateFromFiles) {
  const auto data = fresh("files_data");
  ASSERT_EQ(cli("--out " + data.string() + " synth --count 1").code, 0);
  const auto seq = data / "synthetic/seq_0000";
  const auto out = fresh("files_out");
  auto r = cli("--out " + out.string() + " estimate --init warm_start --iters 1 --image1 " + (seq / "000000.png").string() +
               " --image2 " + (seq / "000001.png").string() + " --mvs " + (seq / "000000.mvs").string() +
               " --prev-flow " + (seq / "000000_prev.flo").string());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_flo(out / "flow.flo").width(), 64);
  EXPECT_EQ(cli("estimate --image1 " + (seq / "000000.png").string()).code, 1);
}

TEST(Cli, EvalGridEmitsTenRows) {
  const auto cfg = fresh("eval_cfg");
  fs::create_directories(cfg);
  detail::write_file_bytes(cfg / "c.txt", "eval_samples = 2\nsynth_width = 32\nsynth_height = 32\n");
  const auto out = fresh("eval_out");
  auto r = cli("--config " + (cfg / "c.txt").string() + " --out " + out.string() +
               " eval --strategies zero,mvcm --iters 1,2,4,8,16 --timing-runs 1");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = detail::read_file_bytes(out / "eval.jsonl");
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 10);
  EXPECT_TRUE(fs::exists(out / "renders/mvcm_it16_flow.png"));
}

TEST(Cli, TrainWritesCheckpointAndIsIdempotent) {
  const auto cfg = fresh("train_cfg");
  fs::create_directories(cfg);
  detail::write_file_bytes(cfg / "c.txt",
                           "synth_width = 16\nsynth_height = 16\nsynth_block_size = 4\ncrop_h = 16\ncrop_w = 16\n"
                           "encoder_widths = 4,4,4,4,4,4\nceb_width = 4\nfeature_dim = 8\nupdate_width = 8\n"
                           "train_iters = 1\n");
  const auto a = fresh("train_a"), b = fresh("train_b");
  const std::string args = "--config " + (cfg / "c.txt").string() + " train --steps 2";
  ASSERT_EQ(cli("--out " + a.string() + " " + args).code, 0);
  ASSERT_EQ(cli("--out " + b.string() + " " + args).code, 0);
  EXPECT_EQ(detail::read_file_bytes(a / "checkpoint.bin"), detail::read_file_bytes(b / "checkpoint.bin"));
  EXPECT_EQ(load_checkpoint(a / "checkpoint.bin").step, 2u);
  auto r = cli("--out " + a.string() + " estimate --checkpoint " + (a / "checkpoint.bin").string() + " --iters 1");
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST(Cli, BadConfigAndDataExitCodes) {
  const auto d = fresh("bad");
  fs::create_directories(d);
  detail::write_file_bytes(d / "c.txt", "nonsense_key = 1\n");
  EXPECT_EQ(cli("--config " + (d / "c.txt").string() + " train --steps 0").code, 1);
  EXPECT_EQ(cli("eval --data " + d.string()).code, 2);
  EXPECT_EQ(cli("estimate --checkpoint " + kData + "/golden.flo").code, 2);
}

TEST(Cli, GradcheckPasses) {
  auto r = cli("gradcheck --checks 3");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
}
