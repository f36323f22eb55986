#include "hapfuse/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hapfuse {

namespace {

constexpr int kTargetPoints = 512;
constexpr int kSourcePoints = 288;
constexpr int kHandPoints = 224;
constexpr int kKnobPoints = 224;
constexpr int kFramePoints = 384;

constexpr double kSourceRadius = 0.025;
constexpr double kSourceHeight = 0.08;
constexpr double kPourHover = 0.08;     // pour pose height above the rim
constexpr double kExpertTiltGain = 1.5; // desired tilt per unit fill gap
constexpr double kExpertTiltCap = 0.6;  // above threshold
constexpr double kExpertStopMargin = 0.25;  // fraction of the deadband
constexpr double kApproachGain = 0.6;
constexpr double kClickDecay = 60.0;    // 1/s envelope for the closure click

Vec3 clip_pos_delta(const Vec& action, double limit) {
  Vec3 d;
  for (int i = 0; i < 3; ++i) d[i] = std::clamp(action[i], -limit, limit);
  return d;
}

// Quaternion part of an action, clipped to a maximum rotation angle.
Quat clip_rot_delta(const Vec& action, double max_angle) {
  Quat q(action[3], action[4], action[5], action[6]);
  if (q.norm() < 1e-8) return Quat::Identity();
  q.normalize();
  Eigen::AngleAxisd aa(q);
  double angle = aa.angle();
  // keep angles in [-pi, pi] so clipping is symmetric
  if (angle > M_PI) angle -= 2.0 * M_PI;
  if (std::abs(angle) > max_angle)
    return Quat(Eigen::AngleAxisd(std::copysign(max_angle, angle), aa.axis()));
  return q;
}

Vec3 rotation_vector(const Quat& q) {
  Eigen::AngleAxisd aa(q);
  double angle = aa.angle();
  if (angle > M_PI) angle -= 2.0 * M_PI;
  return aa.axis() * angle;
}

Quat y_rotation(double angle) {
  return Quat(Eigen::AngleAxisd(angle, Vec3::UnitY()));
}

// Area-weighted surface samples of a conical frustum standing on z = 0,
// lateral surface only.
Mat sample_frustum(int n, double r_bottom, double r_top, double height, Rng& rng) {
  Mat out(n, 3);
  const double a = r_bottom, b = r_top;
  const double total = a + 0.5 * (b - a);
  for (int i = 0; i < n; ++i) {
    // density over v is proportional to r(v) = a + (b-a) v
    const double u = rng.uniform() * total;
    double v;
    if (std::abs(b - a) < 1e-12) {
      v = u / a;
    } else {
      // solve a v + (b-a) v^2 / 2 = u
      const double disc = a * a + 2.0 * (b - a) * u;
      v = (-a + std::sqrt(std::max(0.0, disc))) / (b - a);
    }
    v = std::clamp(v, 0.0, 1.0);
    const double r = a + (b - a) * v;
    const double th = rng.uniform() * 2.0 * M_PI;
    out(i, 0) = r * std::cos(th);
    out(i, 1) = r * std::sin(th);
    out(i, 2) = v * height;
  }
  return out;
}

// Axis-aligned box surface samples, faces weighted by area, centered at c.
Mat sample_box(int n, const Vec3& c, const Vec3& size, Rng& rng) {
  Mat out(n, 3);
  const double sx = size[0], sy = size[1], sz = size[2];
  const double ax = sy * sz, ay = sx * sz, az = sx * sy;
  const double total = 2.0 * (ax + ay + az);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    int face;
    if (u < 2 * ax) {
      face = u < ax ? 0 : 1;
    } else if (u < 2 * ax + 2 * ay) {
      face = (u - 2 * ax) < ay ? 2 : 3;
    } else {
      face = (u - 2 * ax - 2 * ay) < az ? 4 : 5;
    }
    const double p = rng.uniform() - 0.5, q = rng.uniform() - 0.5;
    Vec3 pt;
    switch (face) {
      case 0: pt = Vec3(+0.5 * sx, p * sy, q * sz); break;
      case 1: pt = Vec3(-0.5 * sx, p * sy, q * sz); break;
      case 2: pt = Vec3(p * sx, +0.5 * sy, q * sz); break;
      case 3: pt = Vec3(p * sx, -0.5 * sy, q * sz); break;
      case 4: pt = Vec3(p * sx, q * sy, +0.5 * sz); break;
      default: pt = Vec3(p * sx, q * sy, -0.5 * sz); break;
    }
    out.row(i) = (c + pt).transpose();
  }
  return out;
}

void write_transformed(Mat& dst, int row0, const Mat& local, const Quat& rot,
                       const Vec3& trans) {
  const Eigen::Matrix3d R = rot.toRotationMatrix();
  for (int i = 0; i < local.rows(); ++i)
    dst.row(row0 + i) = (R * local.row(i).transpose() + trans).transpose();
}

void write_translated(Mat& dst, int row0, const Mat& local, const Vec3& trans) {
  for (int i = 0; i < local.rows(); ++i)
    dst.row(row0 + i) = local.row(i) + trans.transpose();
}

Mat render_pour(const PourState& s, const WorldCfg& cfg, const PourEpisodeCtx& ctx) {
  Mat cloud(ctx.target_local.rows() + ctx.source_local.rows() + ctx.hand_local.rows(), 3);
  int row = 0;
  write_translated(cloud, row, ctx.target_local, ctx.target_pos);
  row += int(ctx.target_local.rows());
  write_transformed(cloud, row, ctx.source_local, s.ee.rot, s.ee.pos);
  row += int(ctx.source_local.rows());
  write_transformed(cloud, row, ctx.hand_local, s.ee.rot, s.ee.pos);
  return cloud;
}

Mat render_latch(const LatchState& s, const WorldCfg& cfg, const LatchEpisodeCtx& ctx) {
  Mat cloud(ctx.knob_local.rows() + ctx.frame_local.rows() + ctx.hand_local.rows(), 3);
  const double hx = kLatchHandleStartX + s.door * cfg.door_travel;
  int row = 0;
  write_translated(cloud, row, ctx.knob_local, Vec3(hx, 0.0, kLatchHandleZ));
  row += int(ctx.knob_local.rows());
  write_translated(cloud, row, ctx.frame_local, Vec3::Zero());
  row += int(ctx.frame_local.rows());
  write_transformed(cloud, row, ctx.hand_local, s.ee.rot, s.ee.pos);
  return cloud;
}

Vec pour_proprio(const PourState& s) { return s.ee.as_vec(); }

Vec latch_proprio(const LatchState& s) {
  Vec v(8);
  v.head(7) = s.ee.as_vec();
  v[7] = s.gripper_closed ? 1.0 : 0.0;
  return v;
}

Vec synth_noise_block(int n, double noise_std, Rng& rng) {
  Vec block(n);
  for (int i = 0; i < n; ++i) block[i] = noise_std * rng.normal();
  return block;
}

}  // namespace

Vec EePose::as_vec() const {
  Vec v(7);
  v << pos[0], pos[1], pos[2], rot.w(), rot.x(), rot.y(), rot.z();
  return v;
}

EePose EePose::from_vec(const Vec& v) {
  EePose p;
  p.pos = Vec3(v[0], v[1], v[2]);
  p.rot = Quat(v[3], v[4], v[5], v[6]).normalized();
  return p;
}

Vec pour_hidden_row(const PourState& s) {
  Vec v(11);
  v[0] = s.tilt;
  v[1] = s.fill;
  v[2] = s.spilled ? 1.0 : 0.0;
  v.segment(3, 7) = s.ee.as_vec();
  v[10] = s.time_step;
  return v;
}

Vec latch_hidden_row(const LatchState& s) {
  Vec v(12);
  v[0] = s.door;
  v[1] = s.base_disp;
  v[2] = s.base_rot;
  v[3] = s.click_emitted ? 1.0 : 0.0;
  v.segment(4, 7) = s.ee.as_vec();
  v[11] = s.gripper_closed ? 1.0 : 0.0;
  return v;
}

PourEpisodeCtx make_pour_ctx(const WorldCfg& cfg, Rng& episode_rng) {
  PourEpisodeCtx ctx;
  ctx.flow_scale = episode_rng.uniform(1.0 - cfg.flow_jitter, 1.0 + cfg.flow_jitter);
  const double jx = episode_rng.uniform(-cfg.container_xy_jitter, cfg.container_xy_jitter);
  const double jy = episode_rng.uniform(-cfg.container_xy_jitter, cfg.container_xy_jitter);
  ctx.target_pos = Vec3(0.45 + jx, jy, 0.0);
  Rng shape_rng = Rng(episode_rng.next_u64());
  ctx.target_local = sample_frustum(kTargetPoints, cfg.container_radius_bottom,
                                    cfg.container_radius_top, cfg.container_height,
                                    shape_rng);
  ctx.source_local = sample_frustum(kSourcePoints, kSourceRadius, kSourceRadius,
                                    kSourceHeight, shape_rng);
  ctx.hand_local = sample_box(kHandPoints, Vec3(0, 0, kSourceHeight + 0.015),
                              Vec3(0.05, 0.05, 0.025), shape_rng);
  ctx.noise_rng = Rng(episode_rng.next_u64());
  return ctx;
}

LatchEpisodeCtx make_latch_ctx(const WorldCfg& cfg, Rng& episode_rng) {
  LatchEpisodeCtx ctx;
  ctx.coupling = episode_rng.uniform(1.0 - cfg.coupling_jitter, 1.0 + cfg.coupling_jitter);
  // couplings above 1 would let the handle outrun the gripper instantly
  ctx.coupling = std::min(ctx.coupling, 1.0);
  Rng shape_rng = Rng(episode_rng.next_u64());
  // knob: small cylinder around the handle point
  ctx.knob_local = sample_frustum(kKnobPoints, kLatchKnobRadius, kLatchKnobRadius,
                                  0.04, shape_rng);
  ctx.knob_local.col(2).array() -= 0.02;  // center on the handle height
  ctx.frame_local = sample_box(kFramePoints, Vec3(0.40, -0.16, 0.10),
                               Vec3(0.24, 0.04, 0.20), shape_rng);
  ctx.hand_local = sample_box(kHandPoints, Vec3(0, 0, 0), Vec3(0.04, 0.05, 0.04),
                              shape_rng);
  ctx.noise_rng = Rng(episode_rng.next_u64());
  ctx.click_rng = Rng(episode_rng.next_u64());
  return ctx;
}

StepOutput pour_step(PourState& state, const Vec& action, const WorldCfg& cfg,
                     PourEpisodeCtx& ctx) {
  if (action.size() != 7) throw std::invalid_argument("pour_step: action must be 7-d");
  const double dt = 1.0 / cfg.control_rate;

  const Vec3 dpos = clip_pos_delta(action, cfg.max_pos_step);
  const Quat drot = clip_rot_delta(action, cfg.max_rot_step);
  state.ee.pos += dpos;
  state.ee.rot = (drot * state.ee.rot).normalized();
  state.tilt += rotation_vector(drot)[1];

  // fill responds to tilt above the flow threshold; the tone tracks the fill
  // level present while the stream is flowing
  const double flow = ctx.flow_scale * cfg.c_flow * std::max(0.0, state.tilt - cfg.tilt_threshold);
  const double fill_before = state.fill;
  const double dfill = flow * dt;
  if (flow > 0.0 && fill_before + dfill > 1.0) state.spilled = true;
  state.fill = std::min(1.0, fill_before + dfill);

  StepOutput out;
  const int block = cfg.block_len();
  out.audio_block = synth_noise_block(block, cfg.noise_std, ctx.noise_rng);
  if (flow > 0.0) {
    const double f = cfg.f_min + fill_before * (cfg.f_max - cfg.f_min);
    const double w = 2.0 * M_PI * f / cfg.sr;
    for (int i = 0; i < block; ++i)
      out.audio_block[i] += cfg.tone_amp * std::sin(ctx.audio_phase + w * i);
    ctx.audio_phase = std::fmod(ctx.audio_phase + w * block, 2.0 * M_PI);
  }

  out.cloud = render_pour(state, cfg, ctx);
  out.proprio = pour_proprio(state);
  state.time_step += 1;
  return out;
}

StepOutput latch_step(LatchState& state, const Vec& action, const WorldCfg& cfg,
                      LatchEpisodeCtx& ctx) {
  if (action.size() != 8) throw std::invalid_argument("latch_step: action must be 8-d");

  const Vec3 dpos = clip_pos_delta(action, cfg.max_pos_step);
  const Quat drot = clip_rot_delta(action, cfg.max_rot_step);
  const bool grip = action[7] > 0.5;

  const Vec3 handle(kLatchHandleStartX + state.door * cfg.door_travel, 0.0,
                    kLatchHandleZ);
  const bool engaged = grip && (state.ee.pos - handle).norm() <= kLatchGraspRadius;

  state.ee.pos += dpos;
  state.ee.rot = (drot * state.ee.rot).normalized();
  state.gripper_closed = grip;

  const bool was_closed = state.door >= 1.0;
  if (engaged) {
    const double pull = std::max(0.0, dpos[0]);
    if (was_closed) {
      // the door cannot move further; pulling on shoves the cabinet base
      state.base_disp += cfg.overpull_gain * pull;
      state.base_rot += 0.5 * cfg.overpull_gain * pull;
    } else {
      state.door = std::min(1.0, state.door + ctx.coupling * pull / cfg.door_travel);
    }
    const double lateral = std::abs(dpos[1]) + std::abs(dpos[2]);
    state.base_disp += cfg.misalign_disp_gain * lateral;
    state.base_rot += cfg.misalign_rot_gain * lateral;
  }

  StepOutput out;
  const int block = cfg.block_len();
  out.audio_block = synth_noise_block(block, cfg.noise_std, ctx.noise_rng);
  if (!was_closed && state.door >= 1.0 && !state.click_emitted) {
    // one short broadband click, exactly once per episode
    state.click_emitted = true;
    const int click_len = std::min(block, cfg.sr / 50);
    for (int i = 0; i < click_len; ++i) {
      const double env = std::exp(-kClickDecay * double(i) / cfg.sr);
      out.audio_block[i] += cfg.click_amp * env * ctx.click_rng.normal();
    }
  }

  out.cloud = render_latch(state, cfg, ctx);
  out.proprio = latch_proprio(state);
  state.time_step += 1;
  return out;
}

Vec pour_expert_action(const PourState& state, double target_fill,
                       const Vec3& target_pos, const WorldCfg& cfg) {
  Vec action = Vec::Zero(7);
  action[3] = 1.0;  // identity rotation

  const Vec3 pour_pos = target_pos + Vec3(0, 0, cfg.container_height + kPourHover);
  const Vec3 gap = pour_pos - state.ee.pos;
  const bool in_place = gap.norm() < 0.01;

  if (!in_place && state.tilt < 0.05) {
    for (int i = 0; i < 3; ++i)
      action[i] = std::clamp(kApproachGain * gap[i], -cfg.max_pos_step, cfg.max_pos_step);
    return action;
  }

  double desired_tilt = 0.0;
  if (state.fill < target_fill - kExpertStopMargin * cfg.expert_deadband) {
    desired_tilt = std::min(cfg.tilt_threshold + kExpertTiltGain * (target_fill - state.fill),
                            cfg.tilt_threshold + kExpertTiltCap);
  }
  const double dtheta = std::clamp(desired_tilt - state.tilt, -cfg.max_rot_step,
                                   cfg.max_rot_step);
  const Quat dq = y_rotation(dtheta);
  action[3] = dq.w();
  action[4] = dq.x();
  action[5] = dq.y();
  action[6] = dq.z();
  return action;
}

Vec latch_expert_action(const LatchState& state, const WorldCfg& cfg) {
  Vec action = Vec::Zero(8);
  action[3] = 1.0;

  if (state.click_emitted || state.door >= 1.0) {
    // done: release and retreat to a rest point
    const Vec3 rest(kLatchHandleStartX - 0.06, 0.0, kLatchHandleZ);
    const Vec3 gap = rest - state.ee.pos;
    for (int i = 0; i < 3; ++i)
      action[i] = std::clamp(kApproachGain * gap[i], -cfg.max_pos_step, cfg.max_pos_step);
    return action;
  }

  const Vec3 handle(kLatchHandleStartX + state.door * cfg.door_travel, 0.0,
                    kLatchHandleZ);
  const Vec3 gap = handle - state.ee.pos;
  if (gap.norm() > 0.01) {
    for (int i = 0; i < 3; ++i)
      action[i] = std::clamp(kApproachGain * gap[i], -cfg.max_pos_step, cfg.max_pos_step);
    return action;
  }

  // engaged pull along the track, easing off near closure; the floor keeps
  // the door crossing 1.0 in finite time instead of creeping asymptotically
  action[7] = 1.0;
  const double rate = std::clamp(3.0 * (1.0 - state.door) * cfg.max_pos_step,
                                 0.3 * cfg.max_pos_step, cfg.max_pos_step);
  action[0] = rate;
  return action;
}

namespace {

class PourSim : public Sim {
 public:
  PourSim(const WorldCfg& cfg, Rng episode_rng) : cfg_(cfg) {
    ctx_ = make_pour_ctx(cfg, episode_rng);
    state_.fill = episode_rng.uniform() * cfg.init_fill_max;
    state_.ee.pos = Vec3(0.30, 0.0, 0.25);
  }

  Vec proprio() const override { return pour_proprio(state_); }
  Mat render() const override { return render_pour(state_, cfg_, ctx_); }
  Vec hidden_row() const override { return pour_hidden_row(state_); }
  StepOutput step(const Vec& action) override {
    return pour_step(state_, action, cfg_, ctx_);
  }
  Vec expert_action() const override {
    return pour_expert_action(state_, cfg_.target_fill, ctx_.target_pos, cfg_);
  }
  bool success() const override {
    return !state_.spilled &&
           std::abs(state_.fill - cfg_.target_fill) <= cfg_.expert_deadband;
  }
  int action_dim() const override { return 7; }

 private:
  WorldCfg cfg_;
  PourState state_;
  PourEpisodeCtx ctx_;
};

class LatchSim : public Sim {
 public:
  LatchSim(const WorldCfg& cfg, Rng episode_rng) : cfg_(cfg) {
    ctx_ = make_latch_ctx(cfg, episode_rng);
    state_.ee.pos = Vec3(0.36, 0.0, 0.18);
  }

  Vec proprio() const override { return latch_proprio(state_); }
  Mat render() const override { return render_latch(state_, cfg_, ctx_); }
  Vec hidden_row() const override { return latch_hidden_row(state_); }
  StepOutput step(const Vec& action) override {
    return latch_step(state_, action, cfg_, ctx_);
  }
  Vec expert_action() const override { return latch_expert_action(state_, cfg_); }
  bool success() const override {
    return state_.door >= 0.999 && state_.base_disp < 0.02 && state_.base_rot < 0.02;
  }
  int action_dim() const override { return 8; }

 private:
  WorldCfg cfg_;
  LatchState state_;
  LatchEpisodeCtx ctx_;
};

}  // namespace

std::unique_ptr<Sim> make_sim(const WorldCfg& cfg, Rng episode_rng) {
  if (cfg.task == TaskId::pour)
    return std::make_unique<PourSim>(cfg, episode_rng);
  return std::make_unique<LatchSim>(cfg, episode_rng);
}

Episode run_scripted_episode(const RunConfig& cfg, std::uint64_t episode_seed) {
  auto sim = make_sim(cfg.world, Rng(episode_seed));
  Episode ep;
  ep.task = cfg.world.task;
  ep.seed = episode_seed;
  ep.length = cfg.world.episode_length;
  ep.container_height = cfg.world.container_height;
  ep.container_radius_top = cfg.world.container_radius_top;
  ep.container_radius_bottom = cfg.world.container_radius_bottom;
  ep.f_min = cfg.world.f_min;
  ep.f_max = cfg.world.f_max;
  ep.waveform.reserve(std::size_t(ep.length) * cfg.world.block_len());

  for (int t = 0; t < ep.length; ++t) {
    // observation first, then the action taken under it; the audio block is
    // produced by the step itself, so windows at step t cover blocks < t
    ep.clouds.push_back(sim->render());
    ep.proprio.push_back(sim->proprio());
    const Vec action = sim->expert_action();
    StepOutput out = sim->step(action);
    ep.actions.push_back(action);
    ep.hidden.push_back(sim->hidden_row());
    ep.waveform.insert(ep.waveform.end(), out.audio_block.data(),
                       out.audio_block.data() + out.audio_block.size());
  }
  ep.success = sim->success();
  return ep;
}

RunConfig shift_container(const RunConfig& cfg, int variant_id) {
  struct Row {
    double height, r_top, r_bottom, f_min, f_max;
  };
  // multiplicative factors; variant 4 flips the radius profile (inverted
  // frustum) and moves the resonance range the farthest
  static const Row table[4] = {
      {1.10, 1.15, 1.08, 320.0 / 300.0, 860.0 / 900.0},
      {0.90, 0.85, 0.95, 340.0 / 300.0, 960.0 / 900.0},
      {1.20, 1.25, 1.15, 260.0 / 300.0, 1000.0 / 900.0},
      {1.15, 0.80, 1.45, 380.0 / 300.0, 1250.0 / 900.0},
  };
  if (variant_id < 1 || variant_id > 4)
    throw std::invalid_argument("shift_container: variant_id must be in 1..4");
  const Row& r = table[variant_id - 1];
  RunConfig out = cfg;
  out.world.container_height = cfg.world.container_height * r.height;
  out.world.container_radius_top = cfg.world.container_radius_top * r.r_top;
  out.world.container_radius_bottom = cfg.world.container_radius_bottom * r.r_bottom;
  out.world.f_min = cfg.world.f_min * r.f_min;
  out.world.f_max = cfg.world.f_max * r.f_max;
  out.validate();
  return out;
}

}  // namespace hapfuse
