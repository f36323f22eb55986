#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hapfuse/cli.hpp"
#include "hapfuse/episode_io.hpp"
#include "hapfuse/policy.hpp"
#include "hapfuse/tensor_file.hpp"

using namespace hapfuse;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_tiny_config(const std::filesystem::path& p) {
  RunConfig cfg = default_config(TaskId::pour);
  cfg.world.episode_length = 40;
  cfg.world.max_pos_step = 0.05;
  cfg.world.max_rot_step = 0.3;
  cfg.world.c_flow = 1.5;
  cfg.pipeline.n_mels = 8;
  cfg.pipeline.window_frames = 6;
  cfg.pipeline.n_fft = 256;
  cfg.pipeline.hop = 128;
  cfg.pipeline.n_points = 16;
  cfg.model.embed_dim = 8;
  cfg.model.diffusion_steps = 32;
  cfg.model.inference_steps = 4;
  cfg.model.horizon = 3;
  cfg.model.exec_steps = 2;
  cfg.model.denoiser_width = 16;
  cfg.model.denoiser_blocks = 1;
  cfg.model.k_embed_dim = 8;
  cfg.train.steps = 8;
  cfg.train.batch = 4;
  cfg.train.warmup = 2;
  cfg.train.checkpoint_every = 8;
  cfg.train.pretrain_steps = 6;
  std::ofstream f(p);
  f << cfg.serialize();
}

}  // namespace

TEST_CASE("metric command validates inputs") {
  cmd_metric(0, 0, 0, 0.3, 0.3, 0.4);      // prints 0.0000
  cmd_metric(2, 0, 5, 0.3, 0.3, 0.4);      // prints 2.6000
  CHECK_THROWS_AS(cmd_metric(-1, 0, 0, 0.3, 0.3, 0.4), UsageError);
}

TEST_CASE("config loading errors become usage errors naming the key") {
  TempDir tmp("hapfuse_test_cli_cfg");
  const auto bad = tmp.path / "bad.cfg";
  std::ofstream(bad) << "[modle]\nD = 3\n";
  CHECK_THROWS_WITH_AS(load_config_or_default(bad, TaskId::pour),
                       doctest::Contains("modle"), UsageError);

  const auto bad2 = tmp.path / "bad2.cfg";
  std::ofstream(bad2) << "[model]\nembed_dim = not_a_number\n";
  CHECK_THROWS_AS(load_config_or_default(bad2, TaskId::pour), UsageError);

  CHECK_THROWS_AS(load_config_or_default(tmp.path / "missing.cfg", TaskId::pour),
                  UsageError);
}

TEST_CASE("gen-data is reproducible at the command level") {
  TempDir tmp("hapfuse_test_cli_gen");
  const auto cfg_path = tmp.path / "tiny.cfg";
  write_tiny_config(cfg_path);

  cmd_gen_data({cfg_path, tmp.path / "a", 7}, 2);
  cmd_gen_data({cfg_path, tmp.path / "b", 7}, 2);
  const DatasetInfo a = read_manifest(tmp.path / "a");
  const DatasetInfo b = read_manifest(tmp.path / "b");
  CHECK(a.digest == b.digest);
  CHECK(std::filesystem::exists(tmp.path / "a" / "run.meta"));
  CHECK(std::filesystem::exists(tmp.path / "a" / "config.used"));

  CHECK_THROWS_AS(cmd_gen_data({cfg_path, tmp.path / "c", 7}, 0), UsageError);
}

TEST_CASE("train then eval produces a parsable report") {
  TempDir tmp("hapfuse_test_cli_pipe");
  const auto cfg_path = tmp.path / "tiny.cfg";
  write_tiny_config(cfg_path);

  cmd_gen_data({cfg_path, tmp.path / "data", 3}, 2);
  cmd_train({cfg_path, tmp.path / "run", 3}, tmp.path / "data", "concat_ps", "", {});
  CHECK(std::filesystem::exists(tmp.path / "run" / "checkpoint.hapc"));
  CHECK(std::filesystem::exists(tmp.path / "run" / "metrics.tsv"));

  cmd_eval(tmp.path / "run" / "checkpoint.hapc", tmp.path / "eval", 2, 5, 0);
  CHECK(std::filesystem::exists(tmp.path / "eval" / "eval.tsv"));
  CHECK(std::filesystem::exists(tmp.path / "eval" / "eval.json"));

  // report parses and is self-consistent
  std::ifstream js(tmp.path / "eval" / "eval.json");
  std::string text((std::istreambuf_iterator<char>(js)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("\"mean\"") != std::string::npos);
  CHECK(text.find("concat_ps") != std::string::npos);

  // variant evaluation drives the container shift
  cmd_eval(tmp.path / "run" / "checkpoint.hapc", tmp.path / "eval_v4", 2, 5, 4);
  CHECK(std::filesystem::exists(tmp.path / "eval_v4" / "eval.tsv"));

  // plots render from the run and report directories
  cmd_plot(tmp.path / "run", tmp.path / "plots");
  CHECK(std::filesystem::exists(tmp.path / "plots" / "loss_curve.svg"));
  cmd_plot(tmp.path / "eval", tmp.path / "plots2");
  CHECK(std::filesystem::exists(tmp.path / "plots2" / "eval.svg"));
}

TEST_CASE("pretrain command writes an encoder checkpoint") {
  TempDir tmp("hapfuse_test_cli_pre");
  const auto cfg_path = tmp.path / "tiny.cfg";
  write_tiny_config(cfg_path);
  cmd_gen_data({cfg_path, tmp.path / "data", 11}, 2);
  cmd_pretrain({cfg_path, tmp.path / "pre", 11}, tmp.path / "data");
  const Checkpoint ck = load_checkpoint(tmp.path / "pre" / "pretrain.hapc");
  CHECK(ck.params.has("enc.audio.proj.w"));
  CHECK(ck.params.has("pre.bottleneck.w"));
}

TEST_CASE("eval rejects a missing checkpoint") {
  TempDir tmp("hapfuse_test_cli_missing");
  CHECK_THROWS_AS(cmd_eval(tmp.path / "nope.hapc", tmp.path / "out", 1, 0, 0),
                  UsageError);
}

TEST_CASE("mi command rejects malformed specs") {
  TempDir tmp("hapfuse_test_cli_mi");
  CHECK_THROWS_AS(cmd_mi({"no_equals_sign"}, tmp.path / "out", 4, 0), UsageError);
  CHECK_THROWS_AS(cmd_mi({}, tmp.path / "out", 4, 0), UsageError);
}

TEST_CASE("plot command needs plottable input") {
  TempDir tmp("hapfuse_test_cli_plot");
  std::filesystem::create_directories(tmp.path / "empty");
  CHECK_THROWS_AS(cmd_plot(tmp.path / "empty", tmp.path / "out"), UsageError);
  CHECK_THROWS_AS(cmd_plot(tmp.path / "missing", tmp.path / "out"), UsageError);
}
