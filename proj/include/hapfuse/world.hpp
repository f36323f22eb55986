#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <memory>
#include <vector>

#include "hapfuse/config.hpp"
#include "hapfuse/pipeline.hpp"
#include "hapfuse/rng.hpp"

namespace hapfuse {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

// Latch scene constants shared with the default crop box: the handle knob is
// fully outside the crop exactly when door_position exceeds 0.7.
constexpr double kLatchHandleStartX = 0.45;
constexpr double kLatchKnobRadius = 0.008;
constexpr double kLatchHandleZ = 0.12;
constexpr double kLatchGraspRadius = 0.03;

struct EePose {
  Vec3 pos = Vec3::Zero();
  Quat rot = Quat::Identity();

  Vec as_vec() const;          // [x y z qw qx qy qz]
  static EePose from_vec(const Vec& v);
};

struct PourState {
  double tilt = 0.0;       // rad, accumulated wrist rotation about world y
  double fill = 0.0;       // fraction of target capacity, in [0, 1]
  bool spilled = false;
  EePose ee;
  int time_step = 0;
};

struct LatchState {
  double door = 0.0;       // 0 = open, 1 = fully closed
  double base_disp = 0.0;  // m
  double base_rot = 0.0;   // rad
  bool click_emitted = false;
  EePose ee;
  bool gripper_closed = false;
  int time_step = 0;
};

/// Per-episode context: hidden episode parameters, the fixed local surface
/// sample patterns (so the rendered cloud is a rigid transform of a constant
/// pattern), and carried audio synthesis state.
struct PourEpisodeCtx {
  double flow_scale = 1.0;   // hidden per-episode flow multiplier
  Vec3 target_pos = Vec3(0.45, 0.0, 0.0);  // target container base center
  Mat target_local;  // sampled on the frustum surface, container frame
  Mat source_local;  // sampled on the held cup, hand frame
  Mat hand_local;
  double audio_phase = 0.0;
  Rng noise_rng;
};

struct LatchEpisodeCtx {
  double coupling = 1.0;     // hidden pull -> door coupling
  Mat knob_local;
  Mat frame_local;           // static cabinet rail
  Mat hand_local;
  Rng noise_rng;
  Rng click_rng;             // burst shape, consumed once
};

struct StepOutput {
  Vec audio_block;  // block_len samples
  Mat cloud;        // K x 3
  Vec proprio;
};

/// One control step of the pouring world. Clips the action, integrates the
/// commanded wrist rotation into tilt, advances the hidden fill level, and
/// synthesizes the synchronized sensor streams. The fill level never touches
/// the point cloud.
StepOutput pour_step(PourState& state, const Vec& action, const WorldCfg& cfg,
                     PourEpisodeCtx& ctx);

StepOutput latch_step(LatchState& state, const Vec& action, const WorldCfg& cfg,
                      LatchEpisodeCtx& ctx);

/// Privileged proportional controllers used to script demonstrations.
Vec pour_expert_action(const PourState& state, double target_fill,
                       const Vec3& target_pos, const WorldCfg& cfg);
Vec latch_expert_action(const LatchState& state, const WorldCfg& cfg);

Vec pour_hidden_row(const PourState& s);
Vec latch_hidden_row(const LatchState& s);

PourEpisodeCtx make_pour_ctx(const WorldCfg& cfg, Rng& episode_rng);
LatchEpisodeCtx make_latch_ctx(const WorldCfg& cfg, Rng& episode_rng);

/// Uniform task-agnostic simulator facade for rollouts and generation.
class Sim {
 public:
  virtual ~Sim() = default;
  virtual Vec proprio() const = 0;
  virtual Mat render() const = 0;
  virtual Vec hidden_row() const = 0;
  virtual StepOutput step(const Vec& action) = 0;
  virtual Vec expert_action() const = 0;
  virtual bool success() const = 0;
  virtual int action_dim() const = 0;
};

std::unique_ptr<Sim> make_sim(const WorldCfg& cfg, Rng episode_rng);

struct Episode {
  TaskId task = TaskId::pour;
  std::uint64_t seed = 0;
  int length = 0;
  std::vector<double> waveform;   // length * block_len samples
  std::vector<Mat> clouds;        // length of K x 3
  std::vector<Vec> proprio;
  std::vector<Vec> actions;
  std::vector<Vec> hidden;
  double container_height = 0, container_radius_top = 0,
         container_radius_bottom = 0, f_min = 0, f_max = 0;
  bool success = false;
  // rollout bookkeeping, never serialized
  std::vector<Vec> fused_latents;
};

Episode run_scripted_episode(const RunConfig& cfg, std::uint64_t episode_seed);

/// Fixed container variant table for zero-shot generalization. Factors are
/// multiplicative on the base geometry and resonance range; variant 4 is an
/// inverted frustum with by far the largest acoustic shift.
RunConfig shift_container(const RunConfig& cfg, int variant_id);

}  // namespace hapfuse
