#include "hapfuse/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "hapfuse/rng.hpp"

namespace hapfuse {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string key;  // "section.name"
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

double parse_double_or_throw(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (...) {
    throw std::runtime_error("config: invalid number for '" + key + "': " + v);
  }
}

int parse_int_or_throw(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(d);
  } catch (...) {
    throw std::runtime_error("config: invalid integer for '" + key + "': " + v);
  }
}

bool parse_bool_or_throw(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::runtime_error("config: invalid bool for '" + key + "': " + v);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int_or_throw(key, trim(item)));
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

// One registry drives parse, serialize, and unknown-key rejection.
std::vector<Field> field_table(RunConfig& c) {
  std::vector<Field> f;
  auto add_d = [&](const std::string& key, double* p) {
    f.push_back({key, [p] { return fmt_double(*p); },
                 [p, key](const std::string& v) { *p = parse_double_or_throw(key, v); }});
  };
  auto add_i = [&](const std::string& key, int* p) {
    f.push_back({key, [p] { return std::to_string(*p); },
                 [p, key](const std::string& v) { *p = parse_int_or_throw(key, v); }});
  };
  auto add_b = [&](const std::string& key, bool* p) {
    f.push_back({key, [p] { return *p ? std::string("true") : std::string("false"); },
                 [p, key](const std::string& v) { *p = parse_bool_or_throw(key, v); }});
  };

  f.push_back({"world.task", [&c] { return to_string(c.world.task); },
               [&c](const std::string& v) { c.world.task = parse_task(v); }});
  add_i("world.sr", &c.world.sr);
  add_i("world.control_rate", &c.world.control_rate);
  add_i("world.episode_length", &c.world.episode_length);
  add_d("world.container_height", &c.world.container_height);
  add_d("world.container_radius_top", &c.world.container_radius_top);
  add_d("world.container_radius_bottom", &c.world.container_radius_bottom);
  add_d("world.f_min", &c.world.f_min);
  add_d("world.f_max", &c.world.f_max);
  add_d("world.tone_amp", &c.world.tone_amp);
  add_d("world.noise_std", &c.world.noise_std);
  add_d("world.tilt_threshold", &c.world.tilt_threshold);
  add_d("world.c_flow", &c.world.c_flow);
  add_d("world.target_fill", &c.world.target_fill);
  add_d("world.expert_deadband", &c.world.expert_deadband);
  add_d("world.init_fill_max", &c.world.init_fill_max);
  add_d("world.flow_jitter", &c.world.flow_jitter);
  add_d("world.container_xy_jitter", &c.world.container_xy_jitter);
  add_d("world.door_travel", &c.world.door_travel);
  add_d("world.coupling_jitter", &c.world.coupling_jitter);
  add_d("world.click_amp", &c.world.click_amp);
  add_d("world.misalign_disp_gain", &c.world.misalign_disp_gain);
  add_d("world.misalign_rot_gain", &c.world.misalign_rot_gain);
  add_d("world.overpull_gain", &c.world.overpull_gain);
  add_d("world.max_pos_step", &c.world.max_pos_step);
  add_d("world.max_rot_step", &c.world.max_rot_step);

  add_i("pipeline.n_mels", &c.pipeline.n_mels);
  add_i("pipeline.window_frames", &c.pipeline.window_frames);
  add_i("pipeline.n_fft", &c.pipeline.n_fft);
  add_i("pipeline.hop", &c.pipeline.hop);
  add_d("pipeline.f_lo", &c.pipeline.f_lo);
  add_d("pipeline.f_hi", &c.pipeline.f_hi);
  add_i("pipeline.n_points", &c.pipeline.n_points);
  add_i("pipeline.n_obs", &c.pipeline.n_obs);
  add_d("pipeline.crop_min_x", &c.pipeline.crop.min_x);
  add_d("pipeline.crop_max_x", &c.pipeline.crop.max_x);
  add_d("pipeline.crop_min_y", &c.pipeline.crop.min_y);
  add_d("pipeline.crop_max_y", &c.pipeline.crop.max_y);
  add_d("pipeline.crop_min_z", &c.pipeline.crop.min_z);
  add_d("pipeline.crop_max_z", &c.pipeline.crop.max_z);

  add_i("model.embed_dim", &c.model.embed_dim);
  add_i("model.heads", &c.model.heads);
  f.push_back({"model.fusion_mode", [&c] { return to_string(c.model.fusion_mode); },
               [&c](const std::string& v) { c.model.fusion_mode = parse_fusion_mode(v); }});
  add_i("model.diffusion_steps", &c.model.diffusion_steps);
  add_i("model.inference_steps", &c.model.inference_steps);
  add_i("model.horizon", &c.model.horizon);
  add_i("model.exec_steps", &c.model.exec_steps);
  f.push_back({"model.exec_slice", [&c] { return to_string(c.model.exec_slice); },
               [&c](const std::string& v) { c.model.exec_slice = parse_exec_slice(v); }});
  f.push_back({"model.objective", [&c] { return to_string(c.model.objective); },
               [&c](const std::string& v) { c.model.objective = parse_objective(v); }});
  add_i("model.denoiser_width", &c.model.denoiser_width);
  add_i("model.denoiser_blocks", &c.model.denoiser_blocks);
  add_i("model.k_embed_dim", &c.model.k_embed_dim);

  add_i("train.steps", &c.train.steps);
  add_i("train.batch", &c.train.batch);
  add_d("train.lr", &c.train.lr);
  add_i("train.warmup", &c.train.warmup);
  add_i("train.checkpoint_every", &c.train.checkpoint_every);
  add_b("train.pretrain", &c.train.pretrain);
  add_i("train.pretrain_steps", &c.train.pretrain_steps);
  add_d("train.pretrain_lr", &c.train.pretrain_lr);
  add_d("train.lambda_p", &c.train.lambda_p);
  add_d("train.ema_decay", &c.train.ema_decay);

  add_i("eval.trials", &c.eval.trials);
  add_i("eval.max_steps", &c.eval.max_steps);
  f.push_back({"eval.variants", [&c] { return fmt_int_list(c.eval.variants); },
               [&c](const std::string& v) { c.eval.variants = parse_int_list("eval.variants", v); }});

  add_i("mi.k", &c.mi.k);
  add_i("mi.d_reduce", &c.mi.d_reduce);
  add_i("mi.rollouts", &c.mi.rollouts);
  return f;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error("config: " + msg);
}

}  // namespace

std::string to_string(TaskId t) { return t == TaskId::pour ? "pour" : "latch"; }

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::hierarchical: return "hierarchical";
    case FusionMode::bbfm_only: return "bbfm_only";
    case FusionMode::imm_only: return "imm_only";
    case FusionMode::concat_ps: return "concat_ps";
    case FusionMode::concat_aps: return "concat_aps";
    case FusionMode::transformer_maniwav: return "transformer_maniwav";
  }
  return "?";
}

std::string to_string(ExecSlice s) { return s == ExecSlice::first ? "first" : "last"; }
std::string to_string(Objective o) { return o == Objective::epsilon ? "epsilon" : "sample"; }

TaskId parse_task(const std::string& s) {
  if (s == "pour") return TaskId::pour;
  if (s == "latch") return TaskId::latch;
  throw std::runtime_error("config: unknown task '" + s + "'");
}

FusionMode parse_fusion_mode(const std::string& s) {
  for (FusionMode m : all_fusion_modes())
    if (to_string(m) == s) return m;
  throw std::runtime_error("config: unknown fusion mode '" + s + "'");
}

ExecSlice parse_exec_slice(const std::string& s) {
  if (s == "first") return ExecSlice::first;
  if (s == "last") return ExecSlice::last;
  throw std::runtime_error("config: unknown exec slice '" + s + "'");
}

Objective parse_objective(const std::string& s) {
  if (s == "epsilon") return Objective::epsilon;
  if (s == "sample") return Objective::sample;
  throw std::runtime_error("config: unknown objective '" + s + "'");
}

std::vector<FusionMode> all_fusion_modes() {
  return {FusionMode::hierarchical, FusionMode::bbfm_only, FusionMode::imm_only,
          FusionMode::concat_ps, FusionMode::concat_aps,
          FusionMode::transformer_maniwav};
}

double CropBox::center(int axis) const {
  switch (axis) {
    case 0: return 0.5 * (min_x + max_x);
    case 1: return 0.5 * (min_y + max_y);
    default: return 0.5 * (min_z + max_z);
  }
}

std::string RunConfig::serialize() const {
  auto& self = const_cast<RunConfig&>(*this);
  std::ostringstream os;
  std::string section;
  for (const auto& f : field_table(self)) {
    std::string sec = f.key.substr(0, f.key.find('.'));
    std::string name = f.key.substr(f.key.find('.') + 1);
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << name << " = " << f.get() << "\n";
  }
  return os.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(serialize()); }

void RunConfig::validate() const {
  require(world.sr > 0, "world.sr must be positive");
  require(world.control_rate > 0, "world.control_rate must be positive");
  require(world.sr % world.control_rate == 0,
          "world.sr must be a multiple of world.control_rate");
  require(world.episode_length >= pipeline.n_obs + 1,
          "world.episode_length must be at least pipeline.n_obs + 1");
  require(world.container_height > 0, "world.container_height must be positive");
  require(world.container_radius_top > 0 && world.container_radius_bottom > 0,
          "world.container radii must be positive");
  require(world.f_min > 0 && world.f_max > world.f_min,
          "world.f_min/f_max must satisfy 0 < f_min < f_max");
  require(world.f_max < 0.5 * world.sr, "world.f_max must be below Nyquist");
  require(world.target_fill > 0 && world.target_fill <= 1.0,
          "world.target_fill must be in (0, 1]");
  require(world.expert_deadband > 0 && world.expert_deadband < 0.5,
          "world.expert_deadband must be in (0, 0.5)");
  require(world.init_fill_max >= 0 && world.init_fill_max < world.target_fill,
          "world.init_fill_max must be in [0, target_fill)");
  require(world.flow_jitter >= 0 && world.flow_jitter < 1,
          "world.flow_jitter must be in [0, 1)");
  require(world.coupling_jitter >= 0 && world.coupling_jitter < 1,
          "world.coupling_jitter must be in [0, 1)");
  require(world.max_pos_step > 0 && world.max_rot_step > 0,
          "world action step limits must be positive");

  require(pipeline.n_mels >= 2, "pipeline.n_mels must be at least 2");
  require(pipeline.window_frames >= 1, "pipeline.window_frames must be positive");
  require(pipeline.n_fft >= 16 && (pipeline.n_fft & (pipeline.n_fft - 1)) == 0,
          "pipeline.n_fft must be a power of two >= 16");
  require(pipeline.hop > 0, "pipeline.hop must be positive");
  require(pipeline.f_lo >= 0 && pipeline.f_hi > pipeline.f_lo,
          "pipeline.f_lo/f_hi must satisfy 0 <= f_lo < f_hi");
  require(pipeline.f_hi <= 0.5 * world.sr, "pipeline.f_hi must be at most Nyquist");
  require(pipeline.n_points >= 1, "pipeline.n_points must be positive");
  require(pipeline.n_obs >= 1, "pipeline.n_obs must be positive");
  require(pipeline.crop.min_x < pipeline.crop.max_x &&
              pipeline.crop.min_y < pipeline.crop.max_y &&
              pipeline.crop.min_z < pipeline.crop.max_z,
          "pipeline.crop box must have positive extent");

  require(model.embed_dim >= 2, "model.embed_dim must be at least 2");
  require(model.heads >= 1, "model.heads must be positive");
  require(model.embed_dim % model.heads == 0,
          "model.embed_dim must be divisible by model.heads");
  require(model.diffusion_steps >= 1, "model.diffusion_steps must be positive");
  require(model.inference_steps >= 1 &&
              model.inference_steps <= model.diffusion_steps,
          "model.inference_steps must be in [1, diffusion_steps]");
  require(model.horizon >= 1, "model.horizon must be positive");
  require(model.exec_steps >= 1 && model.exec_steps <= model.horizon,
          "model.exec_steps must be in [1, horizon]");
  require(model.denoiser_width >= 4, "model.denoiser_width must be at least 4");
  require(model.denoiser_blocks >= 1, "model.denoiser_blocks must be positive");
  require(model.k_embed_dim >= 2 && model.k_embed_dim % 2 == 0,
          "model.k_embed_dim must be even and >= 2");

  require(train.steps >= 1, "train.steps must be positive");
  require(train.batch >= 1, "train.batch must be positive");
  require(train.lr > 0, "train.lr must be positive");
  require(train.warmup >= 0, "train.warmup must be non-negative");
  require(train.checkpoint_every >= 1, "train.checkpoint_every must be positive");
  require(train.pretrain_steps >= 1, "train.pretrain_steps must be positive");
  require(train.lambda_p >= 0, "train.lambda_p must be non-negative");
  require(train.ema_decay > 0 && train.ema_decay < 1,
          "train.ema_decay must be in (0, 1)");

  require(eval.trials >= 1, "eval.trials must be positive");
  require(eval.max_steps >= 0, "eval.max_steps must be non-negative");
  for (int v : eval.variants)
    require(v >= 1 && v <= 4, "eval.variants entries must be in 1..4");

  require(mi.k >= 1, "mi.k must be positive");
  require(mi.d_reduce >= 1, "mi.d_reduce must be positive");
  require(mi.rollouts >= 2, "mi.rollouts must be at least 2");
}

RunConfig default_config(TaskId task) {
  RunConfig c;
  c.world.task = task;
  if (task == TaskId::latch) {
    // The handle knob (radius 0.008) slides from x = 0.45; the crop edge is
    // placed so the knob has fully left the box once door_position > 0.7.
    c.pipeline.crop.min_x = 0.20;
    c.pipeline.crop.max_x = 0.45 + 0.7 * c.world.door_travel - 0.008;
  }
  return c;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;  // pour defaults; a latch file overrides crop explicitly
  auto fields = field_table(cfg);

  std::istringstream is(text);
  std::string line;
  std::string section;
  int lineno = 0;
  bool saw_task = false;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error("config: malformed section at line " +
                                 std::to_string(lineno));
      section = trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const auto& f : fields)
        if (f.key.rfind(section + ".", 0) == 0) known = true;
      if (!known) throw std::runtime_error("config: unknown section '" + section + "'");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected 'key = value' at line " +
                               std::to_string(lineno));
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw std::runtime_error("config: key '" + key + "' outside any section");
    std::string full = section + "." + key;
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const Field& f) { return f.key == full; });
    if (it == fields.end())
      throw std::runtime_error("config: unknown key '" + full + "'");
    it->set(value);
    if (full == "world.task") saw_task = true;
  }

  // Task-specific defaults apply only when the file did not pin them itself:
  // re-parse on top of the right task's defaults.
  if (saw_task && cfg.world.task == TaskId::latch) {
    RunConfig base = default_config(TaskId::latch);
    auto base_fields = field_table(base);
    std::istringstream is2(text);
    std::string section2;
    while (std::getline(is2, line)) {
      std::string t = trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        section2 = trim(t.substr(1, t.size() - 2));
        continue;
      }
      auto eq = t.find('=');
      std::string key = trim(t.substr(0, eq));
      std::string value = trim(t.substr(eq + 1));
      std::string full = section2 + "." + key;
      auto it = std::find_if(base_fields.begin(), base_fields.end(),
                             [&](const Field& f) { return f.key == full; });
      it->set(value);
    }
    cfg = base;
  }

  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace hapfuse
