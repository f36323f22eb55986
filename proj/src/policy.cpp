#include "hapfuse/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hapfuse/episode_io.hpp"
#include "hapfuse/tensor_file.hpp"
#include "hapfuse/util.hpp"

namespace hapfuse {

// ---------------------------------------------------------------------------
// schedule

NoiseSchedule NoiseSchedule::squared_cosine(int K) {
  if (K < 1) throw std::invalid_argument("schedule: K must be >= 1");
  NoiseSchedule s;
  const double offset = 0.008;
  auto f = [&](double t) {
    const double x = (t / K + offset) / (1.0 + offset) * M_PI / 2.0;
    return std::cos(x) * std::cos(x);
  };
  const double f0 = f(0.0);
  double abar = 1.0;
  for (int k = 0; k < K; ++k) {
    const double beta = std::min(1.0 - f(k + 1.0) / f(double(k)), 0.999);
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    abar *= 1.0 - beta;
    s.alpha_bar.push_back(abar);
    s.base_index.push_back(k);
  }
  (void)f0;
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::respaced(int n) const {
  const int K = steps();
  if (n < 1 || n > K) throw std::invalid_argument("respace: bad step count");
  std::vector<int> idx;
  if (n == 1) {
    idx.push_back(K - 1);
  } else {
    for (int j = 0; j < n; ++j)
      idx.push_back(int(std::lround(double(j) * (K - 1) / (n - 1))));
  }
  NoiseSchedule out;
  double prev_abar = 1.0;
  for (int j = 0; j < n; ++j) {
    const double abar = alpha_bar[idx[j]];
    const double beta = 1.0 - abar / prev_abar;
    out.betas.push_back(beta);
    out.alphas.push_back(1.0 - beta);
    out.alpha_bar.push_back(abar);
    out.base_index.push_back(base_index[idx[j]]);
    prev_abar = abar;
  }
  return out;
}

void NoiseSchedule::validate() const {
  if (betas.empty()) throw std::logic_error("schedule: empty");
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0))
      throw std::logic_error("schedule: beta out of (0,1)");
    if (i > 0 && betas[i] < betas[i - 1])
      throw std::logic_error("schedule: betas must be non-decreasing");
    if (i > 0 && !(alpha_bar[i] < alpha_bar[i - 1]))
      throw std::logic_error("schedule: alpha_bar must be strictly decreasing");
  }
  if (!(alpha_bar[0] > 0.99))
    throw std::logic_error("schedule: alpha_bar[0] must exceed 0.99");
}

Mat forward_diffuse(const Mat& a0, int k, const Mat& noise, const NoiseSchedule& s) {
  if (k < 0 || k >= s.steps())
    throw std::invalid_argument("forward_diffuse: k out of range");
  if (noise.rows() != a0.rows() || noise.cols() != a0.cols())
    throw std::invalid_argument("forward_diffuse: noise shape mismatch");
  const double abar = s.alpha_bar[k];
  return std::sqrt(abar) * a0 + std::sqrt(1.0 - abar) * noise;
}

Mat reverse_step_mean(const Mat& a_k, int k, const Mat& eps_hat, const NoiseSchedule& s) {
  const double beta = s.betas[k];
  const double abar = s.alpha_bar[k];
  return (a_k - (beta / std::sqrt(1.0 - abar)) * eps_hat) / std::sqrt(s.alphas[k]);
}

double reverse_step_sigma(int k, const NoiseSchedule& s) {
  if (k <= 0) return 0.0;
  const double beta_tilde =
      (1.0 - s.alpha_bar[k - 1]) / (1.0 - s.alpha_bar[k]) * s.betas[k];
  return std::sqrt(beta_tilde);
}

// ---------------------------------------------------------------------------
// preprocessing

ProcessedEpisode preprocess_episode(const Episode& ep, const RunConfig& cfg,
                                    std::uint64_t fps_seed) {
  ProcessedEpisode pe;
  pe.length = ep.length;
  const auto& p = cfg.pipeline;
  const MelBank bank = MelBank::build(cfg.world.sr, p.n_fft, p.n_mels, p.f_lo, p.f_hi);
  if (long(ep.waveform.size()) >= p.n_fft)
    pe.mel = log_mel(ep.waveform, cfg.world.sr, bank, p.hop);
  else
    pe.mel = Mat::Zero(0, p.n_mels);

  const int block = cfg.world.block_len();
  pe.frames_at.resize(ep.length);
  for (int t = 0; t < ep.length; ++t) {
    // audio available before acting at step t: the first t blocks
    const long samples = long(t) * block;
    pe.frames_at[t] = samples >= p.n_fft ? int((samples - p.n_fft) / p.hop) + 1 : 0;
  }

  pe.clouds.resize(ep.length);
  for (int t = 0; t < ep.length; ++t) {
    Rng rng = Rng::stream(fps_seed, "fps", t);
    pe.clouds[t] = crop_and_fps(ep.clouds[t], p.crop, p.n_points, rng).points;
  }
  pe.proprio = ep.proprio;
  pe.actions = ep.actions;
  return pe;
}

Observation observation_at(const ProcessedEpisode& pe, const RunConfig& cfg, int t) {
  Observation obs;
  const auto& p = cfg.pipeline;
  for (int s : stacked_indices(t + 1, p.n_obs)) {
    const int nf = pe.frames_at[s];
    obs.audio.push_back(nf > 0 ? window_audio(pe.mel, nf - 1, p.window_frames)
                               : silence_window(p.window_frames, p.n_mels));
    obs.points.push_back(pe.clouds[s]);
    obs.proprio.push_back(pe.proprio[s]);
  }
  return obs;
}

Mat chunk_at(const ProcessedEpisode& pe, int t, int horizon) {
  const int Da = int(pe.actions[0].size());
  Mat chunk(horizon, Da);
  for (int i = 0; i < horizon; ++i)
    chunk.row(i) = pe.actions[std::min(t + i, pe.length - 1)].transpose();
  return chunk;
}

NormStats fit_dataset_stats(const std::vector<ProcessedEpisode>& eps) {
  std::vector<Mat> mels;
  std::vector<Vec> proprio, actions;
  for (const auto& pe : eps) {
    if (pe.mel.rows() > 0) mels.push_back(pe.mel);
    proprio.insert(proprio.end(), pe.proprio.begin(), pe.proprio.end());
    actions.insert(actions.end(), pe.actions.begin(), pe.actions.end());
  }
  return fit_norm_stats(mels, proprio, actions);
}

// ---------------------------------------------------------------------------
// loss

BatchGrad bc_loss(const ParamStore& params, const ModelDims& dims, FusionMode mode,
                  Objective objective, const std::vector<LossSample>& batch,
                  const NoiseSchedule& schedule, Rng& rng, bool want_grads) {
  if (batch.empty()) throw std::invalid_argument("bc_loss: empty batch");
  const int B = int(batch.size());

  // all random draws happen up front in a fixed order, so per-sample work can
  // run on any thread without touching the stream
  std::vector<int> ks(B);
  std::vector<Mat> noises(B);
  for (int i = 0; i < B; ++i) {
    ks[i] = int(rng.below(std::uint64_t(schedule.steps())));
    Mat n(dims.horizon, dims.Da);
    for (int r = 0; r < n.rows(); ++r)
      for (int c = 0; c < n.cols(); ++c) n(r, c) = rng.normal();
    noises[i] = std::move(n);
  }

  std::vector<double> losses(B, 0.0);
  std::vector<GradMap> grads(B);

  parallel_for(B, [&](int i) {
    ad::Tape tape;
    GraphBuilder g(tape, params);
    ad::Var z = fuse_obs(g, dims, mode, batch[i].obs);
    const Mat a_k = forward_diffuse(batch[i].chunk, ks[i], noises[i], schedule);

    Mat a_flat(1, dims.chunk_elems());
    for (int r = 0; r < a_k.rows(); ++r)
      for (int c = 0; c < a_k.cols(); ++c) a_flat(0, r * a_k.cols() + c) = a_k(r, c);

    ad::Var pred = denoiser_forward(g, dims, tape.constant(a_flat), ks[i], z);

    const Mat& target_mat = objective == Objective::epsilon ? noises[i] : batch[i].chunk;
    Mat target(1, dims.chunk_elems());
    for (int r = 0; r < target_mat.rows(); ++r)
      for (int c = 0; c < target_mat.cols(); ++c)
        target(0, r * target_mat.cols() + c) = target_mat(r, c);

    ad::Var loss = tape.scale(tape.mse(pred, target), 1.0 / B);
    losses[i] = tape.value(loss)(0, 0) * B;
    if (want_grads) {
      tape.backward(loss);
      g.collect_grads(grads[i]);
    }
  });

  BatchGrad out;
  for (int i = 0; i < B; ++i) {
    out.loss += losses[i] / B;
    for (auto& [name, gmat] : grads[i]) {
      auto it = out.grads.find(name);
      if (it == out.grads.end())
        out.grads.emplace(name, std::move(gmat));
      else
        it->second += gmat;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kCkptMagic[4] = {'H', 'A', 'P', 'C'};

ArrayF32 mat_to_array(const Mat& m) {
  ArrayF32 a;
  a.dims = {std::uint32_t(m.rows()), std::uint32_t(m.cols())};
  a.data.reserve(std::size_t(m.size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) a.data.push_back(float(m(i, j)));
  return a;
}

Mat array_to_mat(const ArrayF32& a) {
  if (a.dims.size() != 2) throw std::runtime_error("checkpoint: expected matrix");
  Mat m(a.dims[0], a.dims[1]);
  for (std::uint32_t i = 0; i < a.dims[0]; ++i)
    for (std::uint32_t j = 0; j < a.dims[1]; ++j)
      m(i, j) = a.data[std::size_t(i) * a.dims[1] + j];
  return m;
}

ArrayF32 vec_to_array(const Vec& v) {
  ArrayF32 a;
  a.dims = {std::uint32_t(v.size())};
  for (int i = 0; i < v.size(); ++i) a.data.push_back(float(v[i]));
  return a;
}

Vec array_to_vec(const ArrayF32& a) {
  Vec v(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) v[i] = a.data[i];
  return v;
}

void append_entry(std::vector<std::uint8_t>& buf, const std::string& name,
                  const ArrayF32& a) {
  append_u32(buf, std::uint32_t(name.size()));
  buf.insert(buf.end(), name.begin(), name.end());
  encode_array(buf, a);
}

void append_entry(std::vector<std::uint8_t>& buf, const std::string& name,
                  const ArrayU64& a) {
  append_u32(buf, std::uint32_t(name.size()));
  buf.insert(buf.end(), name.begin(), name.end());
  encode_array(buf, a);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kCkptMagic, kCkptMagic + 4);
  append_u32(buf, 1);  // version

  const std::string cfg_text = ck.cfg.serialize();
  append_u64(buf, cfg_text.size());
  buf.insert(buf.end(), cfg_text.begin(), cfg_text.end());

  std::vector<std::pair<std::string, ArrayF32>> f32_entries;
  for (const auto& [name, m] : ck.params.values())
    f32_entries.emplace_back("param/" + name, mat_to_array(m));
  if (ck.has_train_state) {
    for (const auto& [name, m] : ck.adam_m)
      f32_entries.emplace_back("adam_m/" + name, mat_to_array(m));
    for (const auto& [name, m] : ck.adam_v)
      f32_entries.emplace_back("adam_v/" + name, mat_to_array(m));
  }
  ArrayF32 mel;
  mel.dims = {2};
  mel.data = {float(ck.norm.mel_mean), float(ck.norm.mel_std)};
  f32_entries.emplace_back("norm/mel", mel);
  f32_entries.emplace_back("norm/proprio_mean", vec_to_array(ck.norm.proprio_mean));
  f32_entries.emplace_back("norm/proprio_std", vec_to_array(ck.norm.proprio_std));
  f32_entries.emplace_back("norm/action_min", vec_to_array(ck.norm.action_min));
  f32_entries.emplace_back("norm/action_max", vec_to_array(ck.norm.action_max));

  ArrayU64 state;
  state.dims = {7};
  state.data = {ck.step, std::uint64_t(ck.adam_t), ck.has_train_state ? 1ull : 0ull,
                ck.rng_state[0], ck.rng_state[1], ck.rng_state[2], ck.rng_state[3]};

  append_u32(buf, std::uint32_t(f32_entries.size()) + 1);
  for (const auto& [name, a] : f32_entries) append_entry(buf, name, a);
  append_entry(buf, "state/train", state);

  write_file_bytes(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto buf = read_file_bytes(path);
  std::size_t off = 0;
  if (buf.size() < 8 || std::memcmp(buf.data(), kCkptMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  off = 8;  // magic + version

  auto read_u64_at = [&](std::size_t& o) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[o + i];
    o += 8;
    return v;
  };
  auto read_u32_at = [&](std::size_t& o) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[o + i];
    o += 4;
    return v;
  };

  const std::uint64_t cfg_len = read_u64_at(off);
  const std::string cfg_text(buf.begin() + off, buf.begin() + off + cfg_len);
  off += cfg_len;

  Checkpoint ck;
  ck.cfg = parse_config(cfg_text);

  const std::uint32_t n_entries = read_u32_at(off);
  for (std::uint32_t e = 0; e < n_entries; ++e) {
    const std::uint32_t name_len = read_u32_at(off);
    const std::string name(buf.begin() + off, buf.begin() + off + name_len);
    off += name_len;
    if (peek_dtype(buf, off) == 2) {
      ArrayU64 a = decode_array_u64(buf, off);
      if (name == "state/train" && a.data.size() == 7) {
        ck.step = a.data[0];
        ck.adam_t = std::int64_t(a.data[1]);
        ck.has_train_state = a.data[2] != 0;
        for (int i = 0; i < 4; ++i) ck.rng_state[i] = a.data[3 + i];
      }
      continue;
    }
    ArrayF32 a = decode_array_f32(buf, off);
    if (name.rfind("param/", 0) == 0)
      ck.params.values()[name.substr(6)] = array_to_mat(a);
    else if (name.rfind("adam_m/", 0) == 0)
      ck.adam_m[name.substr(7)] = array_to_mat(a);
    else if (name.rfind("adam_v/", 0) == 0)
      ck.adam_v[name.substr(7)] = array_to_mat(a);
    else if (name == "norm/mel") {
      ck.norm.mel_mean = a.data[0];
      ck.norm.mel_std = a.data[1];
    } else if (name == "norm/proprio_mean")
      ck.norm.proprio_mean = array_to_vec(a);
    else if (name == "norm/proprio_std")
      ck.norm.proprio_std = array_to_vec(a);
    else if (name == "norm/action_min")
      ck.norm.action_min = array_to_vec(a);
    else if (name == "norm/action_max")
      ck.norm.action_max = array_to_vec(a);
    else
      throw std::runtime_error("checkpoint: unknown entry " + name);
  }
  return ck;
}

// ---------------------------------------------------------------------------
// training

std::uint64_t splitmix64_mix(std::uint64_t a, std::uint64_t b);

namespace {

struct SamplePool {
  std::vector<ProcessedEpisode> episodes;

  LossSample make(const RunConfig& cfg, const NormStats& norm, int e, int t,
                  int horizon) const {
    LossSample s;
    s.obs = normalize_obs(observation_at(episodes[e], cfg, t), norm);
    s.chunk = norm.norm_actions(chunk_at(episodes[e], t, horizon));
    return s;
  }
};

SamplePool preprocess_dataset(const std::vector<Episode>& eps, const RunConfig& cfg,
                              std::uint64_t seed) {
  SamplePool pool;
  pool.episodes.resize(eps.size());
  parallel_for(int(eps.size()), [&](int i) {
    pool.episodes[i] =
        preprocess_episode(eps[i], cfg, splitmix64_mix(seed, std::uint64_t(i)));
  });
  return pool;
}

double ema_update(double ema, double x, double decay, bool first) {
  return first ? x : decay * ema + (1.0 - decay) * x;
}

}  // namespace

TrainResult train_policy(const std::filesystem::path& dataset_dir, RunConfig cfg,
                         std::uint64_t seed, const std::filesystem::path& out_dir,
                         const std::filesystem::path& resume, int stop_after) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  const std::vector<Episode> raw = load_dataset(dataset_dir);
  if (raw.empty()) throw std::runtime_error("train: empty dataset");
  if (raw[0].task != cfg.world.task)
    throw std::runtime_error("train: dataset task does not match config");
  if (int(raw[0].proprio[0].size()) != cfg.world.proprio_dim() ||
      int(raw[0].actions[0].size()) != cfg.world.action_dim())
    throw std::runtime_error("train: dataset dimensions do not match config");

  const ModelDims dims = ModelDims::from(cfg);
  const FusionMode mode = cfg.model.fusion_mode;
  const NoiseSchedule schedule = NoiseSchedule::squared_cosine(cfg.model.diffusion_steps);
  SamplePool pool = preprocess_dataset(raw, cfg, fnv1a64("preprocess") ^ seed);

  ParamStore params;
  NormStats norm;
  Adam adam;
  Rng train_rng = Rng::stream(seed, "train");
  std::uint64_t step0 = 0;
  double ema = 0.0;

  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    if (ck.cfg.serialize() != cfg.serialize())
      throw std::runtime_error("train: resume checkpoint config differs");
    if (!ck.has_train_state)
      throw std::runtime_error("train: checkpoint has no training state");
    params = std::move(ck.params);
    norm = ck.norm;
    adam.m() = std::move(ck.adam_m);
    adam.v() = std::move(ck.adam_v);
    adam.set_steps_taken(ck.adam_t);
    train_rng.set_state(ck.rng_state);
    step0 = ck.step;
  } else {
    norm = fit_dataset_stats(pool.episodes);
    params = make_policy_params(dims, mode, seed);
    if (cfg.train.pretrain) {
      TrainResult pre = pretrain_encoders(dataset_dir, cfg, seed, out_dir);
      Checkpoint pck = load_checkpoint(pre.checkpoint);
      for (auto& [name, m] : pck.params.values())
        if (name.rfind("enc.audio.", 0) == 0 || name.rfind("enc.prop.", 0) == 0)
          params.at(name) = m;
    }
  }

  std::ofstream metrics(out_dir / "metrics.tsv",
                        resume.empty() ? std::ios::trunc : std::ios::app);
  metrics.precision(12);

  auto save = [&](std::uint64_t next_step, const std::filesystem::path& p) {
    // quantize the live state through the checkpoint encoding so the run
    // continues from exactly what the file holds
    for (auto& [_, m] : params.values()) quantize_f32(m);
    quantize_f32(adam.m());
    quantize_f32(adam.v());
    Checkpoint ck;
    ck.cfg = cfg;
    ck.params = params;
    ck.norm = norm;
    ck.adam_m = adam.m();
    ck.adam_v = adam.v();
    ck.adam_t = adam.steps_taken();
    ck.step = next_step;
    ck.rng_state = train_rng.state();
    ck.has_train_state = true;
    save_checkpoint(p, ck);
  };

  const int B = cfg.train.batch;
  const std::uint64_t stop_step =
      stop_after > 0 ? std::min<std::uint64_t>(stop_after, cfg.train.steps)
                     : std::uint64_t(cfg.train.steps);
  double last_loss = 0.0;
  std::uint64_t last_saved = step0;
  for (std::uint64_t step = step0; step < stop_step; ++step) {
    std::vector<LossSample> batch(B);
    for (int i = 0; i < B; ++i) {
      const int e = int(train_rng.below(pool.episodes.size()));
      const int t = int(train_rng.below(std::uint64_t(pool.episodes[e].length)));
      batch[i] = pool.make(cfg, norm, e, t, dims.horizon);
    }
    BatchGrad bg = bc_loss(params, dims, mode, cfg.model.objective, batch,
                           schedule, train_rng);
    const double lr = lr_at_step(int(step), cfg.train.steps, cfg.train.lr,
                                 cfg.train.warmup);
    adam.step(params, bg.grads, lr);
    last_loss = bg.loss;
    ema = ema_update(ema, bg.loss, cfg.train.ema_decay, step == step0);
    metrics << step << "\t" << bg.loss << "\t" << lr << "\n";

    const bool at_interval = (step + 1) % std::uint64_t(cfg.train.checkpoint_every) == 0;
    const bool at_end = step + 1 == stop_step;
    if (at_interval || at_end) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt-%06llu.hapc",
                    static_cast<unsigned long long>(step + 1));
      save(step + 1, out_dir / name);
      last_saved = step + 1;
      if (step + 1 == std::uint64_t(cfg.train.steps))
        save(step + 1, out_dir / "checkpoint.hapc");
    }
  }
  metrics.flush();

  TrainResult res;
  char last_name[32];
  std::snprintf(last_name, sizeof(last_name), "ckpt-%06llu.hapc",
                static_cast<unsigned long long>(last_saved));
  res.checkpoint = stop_step == std::uint64_t(cfg.train.steps)
                       ? out_dir / "checkpoint.hapc"
                       : out_dir / last_name;
  res.final_loss = last_loss;
  res.final_loss_ema = ema;
  return res;
}

TrainResult pretrain_encoders(const std::filesystem::path& dataset_dir, RunConfig cfg,
                              std::uint64_t seed, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::vector<Episode> raw = load_dataset(dataset_dir);
  if (raw.empty()) throw std::runtime_error("pretrain: empty dataset");

  const ModelDims dims = ModelDims::from(cfg);
  SamplePool pool = preprocess_dataset(raw, cfg, fnv1a64("preprocess") ^ seed);
  NormStats norm = fit_dataset_stats(pool.episodes);

  ParamStore params;
  register_encoder_params(params, dims, seed);
  register_pretrain_params(params, dims, seed);
  Adam adam;
  Rng rng = Rng::stream(seed, "pretrain");

  std::ofstream metrics(out_dir / "pretrain_metrics.tsv", std::ios::trunc);
  metrics.precision(12);
  double ema = 0.0, last = 0.0;
  const int B = cfg.train.batch;

  for (int step = 0; step < cfg.train.pretrain_steps; ++step) {
    struct Pair {
      Mat window;
      Mat proprio;
    };
    std::vector<Pair> batch(B);
    for (int i = 0; i < B; ++i) {
      const int e = int(rng.below(pool.episodes.size()));
      const int t = int(rng.below(std::uint64_t(pool.episodes[e].length)));
      const auto& pe = pool.episodes[e];
      const int nf = pe.frames_at[t];
      Mat win = nf > 0 ? window_audio(pe.mel, nf - 1, cfg.pipeline.window_frames)
                       : silence_window(cfg.pipeline.window_frames, cfg.pipeline.n_mels);
      batch[i].window = norm.norm_mel(win);
      batch[i].proprio = norm.norm_proprio(pe.proprio[t]).transpose();
    }

    std::vector<double> losses(B, 0.0);
    std::vector<GradMap> grads(B);
    parallel_for(B, [&](int i) {
      ad::Tape tape;
      GraphBuilder g(tape, params);
      PretrainLoss pl = pretrain_loss(g, dims, tape.constant(batch[i].window),
                                      batch[i].window, tape.constant(batch[i].proprio),
                                      batch[i].proprio, cfg.train.lambda_p);
      ad::Var scaled = tape.scale(pl.total, 1.0 / B);
      losses[i] = tape.value(pl.total)(0, 0);
      tape.backward(scaled);
      g.collect_grads(grads[i]);
    });

    GradMap total;
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
      loss += losses[i] / B;
      for (auto& [name, gmat] : grads[i]) {
        auto it = total.find(name);
        if (it == total.end())
          total.emplace(name, std::move(gmat));
        else
          it->second += gmat;
      }
    }
    const double lr = lr_at_step(step, cfg.train.pretrain_steps, cfg.train.pretrain_lr,
                                 cfg.train.warmup);
    adam.step(params, total, lr);
    last = loss;
    ema = ema_update(ema, loss, cfg.train.ema_decay, step == 0);
    metrics << step << "\t" << loss << "\t" << lr << "\n";
  }

  Checkpoint ck;
  ck.cfg = cfg;
  ck.params = params;
  ck.norm = norm;
  const auto path = out_dir / "pretrain.hapc";
  save_checkpoint(path, ck);

  TrainResult res;
  res.checkpoint = path;
  res.final_loss = last;
  res.final_loss_ema = ema;
  return res;
}

// ---------------------------------------------------------------------------
// sampling / rollout

Mat sample_actions(const ParamStore& params, const ModelDims& dims, Objective objective,
                   const Mat& z, const NoiseSchedule& s, Rng& rng) {
  Mat x(dims.horizon, dims.Da);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) x(r, c) = rng.normal();

  for (int j = s.steps() - 1; j >= 0; --j) {
    Mat x_flat(1, dims.chunk_elems());
    for (int r = 0; r < x.rows(); ++r)
      for (int c = 0; c < x.cols(); ++c) x_flat(0, r * x.cols() + c) = x(r, c);

    ad::Tape tape;
    GraphBuilder g(tape, params);
    ad::Var pred = denoiser_forward(g, dims, tape.constant(x_flat),
                                    s.base_index[j], tape.constant(z));
    Mat pred_flat = tape.value(pred);
    Mat pred_mat(dims.horizon, dims.Da);
    for (int r = 0; r < pred_mat.rows(); ++r)
      for (int c = 0; c < pred_mat.cols(); ++c)
        pred_mat(r, c) = pred_flat(0, r * pred_mat.cols() + c);

    Mat eps_hat;
    if (objective == Objective::epsilon) {
      eps_hat = pred_mat;
    } else {
      const double abar = s.alpha_bar[j];
      eps_hat = (x - std::sqrt(abar) * pred_mat) / std::sqrt(1.0 - abar);
    }

    Mat mean = reverse_step_mean(x, j, eps_hat, s);
    const double sigma = reverse_step_sigma(j, s);
    if (j > 0 && sigma > 0.0) {
      for (int r = 0; r < mean.rows(); ++r)
        for (int c = 0; c < mean.cols(); ++c) mean(r, c) += sigma * rng.normal();
    }
    x = mean;
  }
  return x;
}

Episode rollout_policy(const Checkpoint& ck, std::uint64_t seed,
                       const RolloutOptions& opts) {
  const RunConfig& cfg = ck.cfg;
  const WorldCfg world = opts.world_override.value_or(cfg.world);
  if (world.task != cfg.world.task)
    throw std::runtime_error("rollout: world task does not match checkpoint");
  const ModelDims dims = ModelDims::from(cfg);
  const NoiseSchedule schedule =
      NoiseSchedule::squared_cosine(cfg.model.diffusion_steps)
          .respaced(cfg.model.inference_steps);
  const int max_steps = opts.max_steps < 0 ? world.episode_length : opts.max_steps;
  const int n_exec = cfg.model.exec_steps;

  auto sim = make_sim(world, Rng::stream(seed, "episode"));
  Rng policy_rng = Rng::stream(seed, "policy");
  Rng fps_rng = Rng::stream(seed, "rollout_fps");

  const auto& p = cfg.pipeline;
  StreamingMel mel(MelBank::build(world.sr, p.n_fft, p.n_mels, p.f_lo, p.f_hi), p.hop);
  std::vector<double> wave;
  ObsBuilder builder(p.n_obs);

  Episode ep;
  ep.task = world.task;
  ep.seed = seed;
  ep.length = max_steps;
  ep.container_height = world.container_height;
  ep.container_radius_top = world.container_radius_top;
  ep.container_radius_bottom = world.container_radius_bottom;
  ep.f_min = world.f_min;
  ep.f_max = world.f_max;

  Mat chunk;  // denormalized
  int cursor = 0, chunk_len = 0;

  for (int t = 0; t < max_steps; ++t) {
    // observation before acting
    const Mat raw_cloud = sim->render();
    const Vec prop = sim->proprio();
    builder.push(mel.window(p.window_frames),
                 crop_and_fps(raw_cloud, p.crop, p.n_points, fps_rng).points, prop);
    ep.clouds.push_back(raw_cloud);
    ep.proprio.push_back(prop);

    if (cursor >= chunk_len) {
      const NormalizedObs obs = normalize_obs(builder.build(), ck.norm);
      const Mat z = fuse_latent(ck.params, dims, cfg.model.fusion_mode, obs);
      if (opts.record_latents) ep.fused_latents.push_back(z.row(0).transpose());
      const Mat norm_chunk =
          sample_actions(ck.params, dims, cfg.model.objective, z, schedule, policy_rng);
      const Mat full = ck.norm.denorm_actions(norm_chunk);
      chunk_len = std::min(n_exec, int(full.rows()));
      chunk = cfg.model.exec_slice == ExecSlice::first
                  ? full.topRows(chunk_len)
                  : full.bottomRows(chunk_len);
      cursor = 0;
    }

    const Vec action = chunk.row(cursor++).transpose();
    StepOutput out = sim->step(action);
    ep.actions.push_back(action);
    ep.hidden.push_back(sim->hidden_row());
    wave.insert(wave.end(), out.audio_block.data(),
                out.audio_block.data() + out.audio_block.size());
    mel.push(out.audio_block);
  }
  ep.waveform = std::move(wave);
  ep.success = sim->success();
  return ep;
}

Episode rollout_expert(const RunConfig& cfg, std::uint64_t seed, int max_steps) {
  RunConfig c = cfg;
  if (max_steps > 0) c.world.episode_length = max_steps;
  Rng stream = Rng::stream(seed, "episode");
  return run_scripted_episode(c, stream.next_u64());
}

// mixing helper kept here to avoid a second tiny translation unit
std::uint64_t splitmix64_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + b);
  return splitmix64_next(s);
}

}  // namespace hapfuse
