#pragma once

#include <Eigen/Dense>
#include <deque>
#include <span>
#include <vector>

#include "hapfuse/config.hpp"
#include "hapfuse/rng.hpp"

namespace hapfuse {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr double kLogMelFloor = 1e-10;  // power floor inside the log

/// HTK Mel scale: m = 2595 log10(1 + f/700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular Mel filterbank over FFT power bins (unnormalized HTK-style
/// triangles). weights is M x (n_fft/2 + 1).
struct MelBank {
  int n_fft = 0;
  int sr = 0;
  Mat weights;
  std::vector<double> center_hz;  // filter peak frequencies, size M

  static MelBank build(int sr, int n_fft, int n_mels, double f_lo, double f_hi);
};

/// Log-Mel spectrogram of a waveform. Frames are n_fft samples every `hop`
/// samples under a periodic Hann window; frame count is
/// 1 + floor((len - n_fft)/hop). Throws if the waveform is shorter than
/// n_fft. Output is T' x M with entries ln(power + 1e-10).
Mat log_mel(std::span<const double> waveform, int sr, int n_fft, int hop,
            int n_mels, double f_lo, double f_hi);
Mat log_mel(std::span<const double> waveform, int sr, const MelBank& bank, int hop);

/// The last `window` rows of `frames` ending at row `t` inclusive,
/// left-padded with silence rows (every entry ln(1e-10)) when t+1 < window.
Mat window_audio(const Mat& frames, int t, int window);

Mat silence_window(int window, int n_mels);

/// Incremental log-Mel over a growing waveform; frames are computed once as
/// enough samples arrive. Matches log_mel() on the full prefix exactly.
class StreamingMel {
 public:
  StreamingMel(MelBank bank, int hop);

  void push(const Vec& block);
  int frame_count() const { return n_frames_; }
  /// Last `window` frames, silence-padded on the left.
  Mat window(int window) const;

 private:
  MelBank bank_;
  int hop_;
  std::vector<double> samples_;
  Mat frames_;   // capacity grows geometrically; first n_frames_ rows valid
  int n_frames_ = 0;
};

/// Greedy farthest point sampling: starting from `start`, repeatedly take
/// the point with maximum distance to the selected set (ties -> lowest
/// index). Returns n_out row indices into `points`.
std::vector<int> farthest_point_indices(const Mat& points, int n_out, int start);

struct CropResult {
  Mat points;       // n_points x 3
  bool empty_crop;  // crop removed everything; output is the box center
};

/// Crop to the box, then FPS down to n_points (or cyclically repeat when
/// fewer survive). The FPS start index is drawn from `rng`.
CropResult crop_and_fps(const Mat& points, const CropBox& box, int n_points, Rng& rng);

/// Model-ready observation: N_o stacked frames per modality.
struct Observation {
  std::vector<Mat> audio;   // N_o windows, each T x M
  std::vector<Mat> points;  // N_o clouds, each N x 3
  std::vector<Vec> proprio; // N_o vectors, each D_s
};

/// Last n_obs entries of a history, repeating the earliest entry while the
/// history is still shorter. Returns indices into the history.
std::vector<int> stacked_indices(int history_len, int n_obs);

/// Per-step history buffer feeding frame stacking at rollout time.
class ObsBuilder {
 public:
  ObsBuilder(int n_obs) : n_obs_(n_obs) {}

  void push(Mat audio_window, Mat cloud, Vec proprio);
  Observation build() const;  // throws if empty
  int size() const { return static_cast<int>(proprio_.size()); }

 private:
  int n_obs_;
  std::vector<Mat> audio_;
  std::vector<Mat> points_;
  std::vector<Vec> proprio_;
};

/// Normalization fitted on a training set: global z-score for log-Mel,
/// per-channel z-score for proprioception, per-channel min/max for actions
/// (mapped to [-1, 1]). All statistics are quantized through float32 when
/// fitted so training after a checkpoint round-trip sees identical values.
struct NormStats {
  double mel_mean = 0.0, mel_std = 1.0;
  Vec proprio_mean, proprio_std;  // std floored at 1e-6
  Vec action_min, action_max;

  Mat norm_mel(const Mat& x) const;
  Vec norm_proprio(const Vec& x) const;
  Mat norm_actions(const Mat& chunk) const;    // rows = steps
  Mat denorm_actions(const Mat& chunk) const;
  Vec norm_vec(const Vec& x, const Vec& mean, const Vec& std) const;
};

NormStats fit_norm_stats(const std::vector<Mat>& mel_frames,
                         const std::vector<Vec>& proprio,
                         const std::vector<Vec>& actions);

/// Generic z-score helpers (used by fitting and tests).
void fit_channel_stats(const std::vector<Vec>& rows, Vec& mean, Vec& std);

}  // namespace hapfuse
