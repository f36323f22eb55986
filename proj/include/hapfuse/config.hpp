#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hapfuse {

enum class TaskId { pour, latch };
enum class FusionMode {
  hierarchical,
  bbfm_only,
  imm_only,
  concat_ps,
  concat_aps,
  transformer_maniwav,
};
enum class ExecSlice { first, last };
enum class Objective { epsilon, sample };

std::string to_string(TaskId t);
std::string to_string(FusionMode m);
std::string to_string(ExecSlice s);
std::string to_string(Objective o);
TaskId parse_task(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);
ExecSlice parse_exec_slice(const std::string& s);
Objective parse_objective(const std::string& s);
std::vector<FusionMode> all_fusion_modes();

struct CropBox {
  double min_x = 0.20, max_x = 0.70;
  double min_y = -0.25, max_y = 0.25;
  double min_z = 0.005, max_z = 0.50;

  bool contains(double x, double y, double z) const {
    return x >= min_x && x <= max_x && y >= min_y && y <= max_y && z >= min_z &&
           z <= max_z;
  }
  double center(int axis) const;
};

struct WorldCfg {
  TaskId task = TaskId::pour;
  int sr = 16000;             // audio sample rate, Hz
  int control_rate = 10;      // policy steps per second
  int episode_length = 120;   // steps per episode
  // shared container / acoustics
  double container_height = 0.10;        // m
  double container_radius_top = 0.035;   // m
  double container_radius_bottom = 0.035;
  double f_min = 300.0;  // resonance at empty, Hz
  double f_max = 900.0;  // resonance at full, Hz
  double tone_amp = 0.30;
  double noise_std = 0.03;
  // pour dynamics
  double tilt_threshold = 0.5;   // rad; flow starts above this
  double c_flow = 0.9;           // fill fraction per rad-second above threshold
  double target_fill = 0.95;
  double expert_deadband = 0.08;
  double init_fill_max = 0.25;     // initial fill ~ U[0, init_fill_max]
  double flow_jitter = 0.30;       // per-episode flow scale ~ U[1-j, 1+j]
  double container_xy_jitter = 0.02;
  // latch dynamics
  double door_travel = 0.12;        // m of handle travel open -> closed
  double coupling_jitter = 0.30;    // per-episode pull->door coupling jitter
  double click_amp = 0.8;
  double misalign_disp_gain = 0.8;  // base displacement per m of lateral pull
  double misalign_rot_gain = 4.0;   // base rotation per m of lateral pull
  double overpull_gain = 0.5;       // base motion per m pulled past closure
  // action limits
  double max_pos_step = 0.012;  // m per control step
  double max_rot_step = 0.08;   // rad per control step

  int block_len() const { return sr / control_rate; }
  int proprio_dim() const { return task == TaskId::pour ? 7 : 8; }
  int action_dim() const { return task == TaskId::pour ? 7 : 8; }
};

struct PipelineCfg {
  int n_mels = 64;        // M
  int window_frames = 32; // T
  int n_fft = 512;
  int hop = 160;
  double f_lo = 50.0;
  double f_hi = 7800.0;
  int n_points = 512;  // N after crop + FPS
  int n_obs = 2;       // N_o stacked frames
  CropBox crop;
};

struct ModelCfg {
  int embed_dim = 128;  // D
  int heads = 1;
  FusionMode fusion_mode = FusionMode::hierarchical;
  int diffusion_steps = 50;   // K at training time
  int inference_steps = 10;   // strided reverse steps at rollout time
  int horizon = 8;            // H+1 actions per chunk
  int exec_steps = 4;         // N_a executed per replan
  ExecSlice exec_slice = ExecSlice::first;
  Objective objective = Objective::epsilon;
  int denoiser_width = 256;
  int denoiser_blocks = 2;
  int k_embed_dim = 64;
};

struct TrainCfg {
  int steps = 3000;
  int batch = 16;
  double lr = 3e-4;
  int warmup = 100;
  int checkpoint_every = 1000;
  bool pretrain = false;
  int pretrain_steps = 1500;
  double pretrain_lr = 1e-3;
  double lambda_p = 1.0;
  double ema_decay = 0.99;
};

struct EvalCfg {
  int trials = 20;
  int max_steps = 0;  // 0 -> world.episode_length
  std::vector<int> variants = {1, 2, 3, 4};
};

struct MiCfg {
  int k = 3;
  int d_reduce = 8;
  int rollouts = 30;
};

struct RunConfig {
  WorldCfg world;
  PipelineCfg pipeline;
  ModelCfg model;
  TrainCfg train;
  EvalCfg eval;
  MiCfg mi;

  /// Canonical text form; parsing it back yields an identical config.
  std::string serialize() const;
  std::uint64_t hash() const;
  void validate() const;  // throws std::runtime_error naming the bad field
};

/// Built-in defaults for a task. Latch gets a crop box whose far edge the
/// door handle crosses at door_position 0.7.
RunConfig default_config(TaskId task = TaskId::pour);

/// Parse `key = value` sections. Unknown sections or keys are errors that
/// name the offending key. Missing keys keep the defaults for `task` unless
/// the file sets world.task itself (the file wins).
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::filesystem::path& path);

}  // namespace hapfuse
