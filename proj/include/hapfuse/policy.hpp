#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hapfuse/config.hpp"
#include "hapfuse/model.hpp"
#include "hapfuse/params.hpp"
#include "hapfuse/pipeline.hpp"
#include "hapfuse/world.hpp"

namespace hapfuse {

/// DDPM noise schedule. Betas follow the squared-cosine construction, are
/// strictly inside (0, 1) and non-decreasing; alpha_bar is strictly
/// decreasing with alpha_bar[0] > 0.99.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bar;   // cumulative product
  std::vector<int> base_index;     // position in the unstrided schedule

  int steps() const { return int(betas.size()); }
  static NoiseSchedule squared_cosine(int K);
  /// Subsequence schedule over `n` of the original K steps with betas
  /// recomputed from the alpha_bar ratios.
  NoiseSchedule respaced(int n) const;
  void validate() const;
};

/// a_k = sqrt(abar_k) a0 + sqrt(1 - abar_k) noise
Mat forward_diffuse(const Mat& a0, int k, const Mat& noise, const NoiseSchedule& s);

/// Posterior mean of a_{k-1} given (a_k, predicted noise); the last step
/// (k = 0) returns the mean itself.
Mat reverse_step_mean(const Mat& a_k, int k, const Mat& eps_hat, const NoiseSchedule& s);
double reverse_step_sigma(int k, const NoiseSchedule& s);

// ---------------------------------------------------------------------------
// dataset preprocessing

/// Episode prepared for training: mel spectrogram over the full waveform,
/// per-step processed clouds, raw proprio/actions.
struct ProcessedEpisode {
  Mat mel;                   // frames x M
  std::vector<int> frames_at;// spectrogram frames available at each step
  std::vector<Mat> clouds;   // per step, N x 3
  std::vector<Vec> proprio;
  std::vector<Vec> actions;
  int length = 0;
};

ProcessedEpisode preprocess_episode(const Episode& ep, const RunConfig& cfg,
                                    std::uint64_t fps_seed);

/// Observation at step t of a processed episode (frames stacked per config).
Observation observation_at(const ProcessedEpisode& pe, const RunConfig& cfg, int t);

/// Expert action chunk a_{t..t+H}, repeating the final action at episode end.
Mat chunk_at(const ProcessedEpisode& pe, int t, int horizon);

NormStats fit_dataset_stats(const std::vector<ProcessedEpisode>& eps);

// ---------------------------------------------------------------------------
// loss

struct LossSample {
  NormalizedObs obs;
  Mat chunk;  // normalized, horizon x Da
};

struct BatchGrad {
  double loss = 0.0;
  GradMap grads;
};

/// Behavior-cloning diffusion loss over a batch; per-sample noise levels and
/// noise are drawn from `rng`. Gradients flow through the denoiser, the
/// fusion stack, and all encoders.
BatchGrad bc_loss(const ParamStore& params, const ModelDims& dims, FusionMode mode,
                  Objective objective, const std::vector<LossSample>& batch,
                  const NoiseSchedule& schedule, Rng& rng, bool want_grads = true);

// ---------------------------------------------------------------------------
// checkpoints

struct Checkpoint {
  RunConfig cfg;
  ParamStore params;
  NormStats norm;
  // training state (present when saved from the trainer)
  std::map<std::string, Mat> adam_m, adam_v;
  std::int64_t adam_t = 0;
  std::uint64_t step = 0;
  std::array<std::uint64_t, 4> rng_state{};
  bool has_train_state = false;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// training

struct TrainResult {
  std::filesystem::path checkpoint;
  double final_loss = 0.0;
  double final_loss_ema = 0.0;
};

/// End-to-end behavior cloning. Writes metrics.tsv (one `step loss lr` line
/// per step) and periodic checkpoints under out_dir. When saving a
/// checkpoint the live training state is replaced by its float32-quantized
/// image, so resuming from the file continues the run bit-exactly.
/// `stop_after` > 0 interrupts the run at that step (a checkpoint is written
/// there); the learning-rate horizon stays cfg.train.steps either way.
TrainResult train_policy(const std::filesystem::path& dataset_dir, RunConfig cfg,
                         std::uint64_t seed, const std::filesystem::path& out_dir,
                         const std::filesystem::path& resume = {},
                         int stop_after = 0);

/// Joint audio--proprio autoencoding warm start; returns encoder parameters
/// in a checkpoint-compatible store and logs its own metrics file.
TrainResult pretrain_encoders(const std::filesystem::path& dataset_dir, RunConfig cfg,
                              std::uint64_t seed, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// sampling and rollout

/// Reverse diffusion from pure noise, conditioned on z. Returns a normalized
/// chunk (horizon x Da).
Mat sample_actions(const ParamStore& params, const ModelDims& dims, Objective objective,
                   const Mat& z, const NoiseSchedule& inference_schedule, Rng& rng);

struct RolloutOptions {
  int max_steps = 0;  // 0 -> episode_length
  std::optional<WorldCfg> world_override;  // e.g. container variants
  bool record_latents = true;
};

/// Receding-horizon execution of a trained policy in the simulator.
Episode rollout_policy(const Checkpoint& ck, std::uint64_t seed,
                       const RolloutOptions& opts = {});

/// Same harness loop with the scripted expert supplying the actions
/// (checkpoint-free sanity path).
Episode rollout_expert(const RunConfig& cfg, std::uint64_t seed, int max_steps = 0);

}  // namespace hapfuse
