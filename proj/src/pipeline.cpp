#include "hapfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "hapfuse/fft.hpp"
#include "hapfuse/params.hpp"

namespace hapfuse {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelBank MelBank::build(int sr, int n_fft, int n_mels, double f_lo, double f_hi) {
  MelBank bank;
  bank.n_fft = n_fft;
  bank.sr = sr;
  const int n_bins = n_fft / 2 + 1;
  bank.weights = Mat::Zero(n_mels, n_bins);
  bank.center_hz.resize(n_mels);

  const double m_lo = hz_to_mel(f_lo);
  const double m_hi = hz_to_mel(f_hi);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / double(n_mels + 1));

  for (int j = 0; j < n_mels; ++j) {
    bank.center_hz[j] = edges[j + 1];
    const double lo = edges[j], c = edges[j + 1], hi = edges[j + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = double(b) * sr / n_fft;
      double w = 0.0;
      if (f > lo && f < c)
        w = (f - lo) / (c - lo);
      else if (f >= c && f < hi)
        w = (hi - f) / (hi - c);
      if (w > 0) bank.weights(j, b) = w;
    }
  }
  return bank;
}

Mat log_mel(std::span<const double> waveform, int sr, const MelBank& bank, int hop) {
  const int n_fft = bank.n_fft;
  const auto len = static_cast<long>(waveform.size());
  if (len < n_fft) throw std::invalid_argument("log_mel: waveform shorter than n_fft");
  const int frames = 1 + int((len - n_fft) / hop);
  const int n_bins = n_fft / 2 + 1;
  const int n_mels = int(bank.weights.rows());

  // periodic Hann
  std::vector<double> win(n_fft);
  for (int i = 0; i < n_fft; ++i)
    win[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n_fft));

  Mat out(frames, n_mels);
  std::vector<double> frame(n_fft);
  for (int f = 0; f < frames; ++f) {
    const double* src = waveform.data() + std::size_t(f) * hop;
    for (int i = 0; i < n_fft; ++i) frame[i] = src[i] * win[i];
    const auto power = power_spectrum(frame.data(), n_fft);
    for (int j = 0; j < n_mels; ++j) {
      double acc = 0.0;
      for (int b = 0; b < n_bins; ++b) acc += bank.weights(j, b) * power[b];
      out(f, j) = std::log(acc + kLogMelFloor);
    }
  }
  return out;
}

Mat log_mel(std::span<const double> waveform, int sr, int n_fft, int hop,
            int n_mels, double f_lo, double f_hi) {
  return log_mel(waveform, sr, MelBank::build(sr, n_fft, n_mels, f_lo, f_hi), hop);
}

Mat silence_window(int window, int n_mels) {
  return Mat::Constant(window, n_mels, std::log(kLogMelFloor));
}

Mat window_audio(const Mat& frames, int t, int window) {
  if (t < 0) throw std::invalid_argument("window_audio: t must be >= 0");
  const int n_mels = int(frames.cols());
  Mat out = silence_window(window, n_mels);
  const int last = std::min<int>(t, int(frames.rows()) - 1);
  const int avail = std::min(window, last + 1);
  if (avail > 0)
    out.bottomRows(avail) = frames.middleRows(last + 1 - avail, avail);
  return out;
}

StreamingMel::StreamingMel(MelBank bank, int hop)
    : bank_(std::move(bank)), hop_(hop) {}

void StreamingMel::push(const Vec& block) {
  samples_.insert(samples_.end(), block.data(), block.data() + block.size());
  const int n_fft = bank_.n_fft;
  const int n_mels = int(bank_.weights.rows());
  const long len = long(samples_.size());
  const int total = len >= n_fft ? 1 + int((len - n_fft) / hop_) : 0;
  if (total <= n_frames_) return;

  if (frames_.rows() < total) {
    Mat grown(std::max<long>(total, 2 * frames_.rows() + 8), n_mels);
    if (n_frames_ > 0) grown.topRows(n_frames_) = frames_.topRows(n_frames_);
    frames_ = std::move(grown);
  }
  std::vector<double> win(n_fft);
  for (int i = 0; i < n_fft; ++i)
    win[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n_fft));
  std::vector<double> frame(n_fft);
  const int n_bins = n_fft / 2 + 1;
  for (int f = n_frames_; f < total; ++f) {
    const double* src = samples_.data() + std::size_t(f) * hop_;
    for (int i = 0; i < n_fft; ++i) frame[i] = src[i] * win[i];
    const auto power = power_spectrum(frame.data(), n_fft);
    for (int j = 0; j < n_mels; ++j) {
      double acc = 0.0;
      for (int b = 0; b < n_bins; ++b) acc += bank_.weights(j, b) * power[b];
      frames_(f, j) = std::log(acc + kLogMelFloor);
    }
  }
  n_frames_ = total;
}

Mat StreamingMel::window(int window) const {
  const int n_mels = int(bank_.weights.rows());
  if (n_frames_ == 0) return silence_window(window, n_mels);
  return window_audio(frames_.topRows(n_frames_), n_frames_ - 1, window);
}

std::vector<int> farthest_point_indices(const Mat& points, int n_out, int start) {
  const int n = int(points.rows());
  if (n < 1) throw std::invalid_argument("fps: empty point set");
  if (start < 0 || start >= n) throw std::invalid_argument("fps: bad start index");

  std::vector<int> picked;
  picked.reserve(n_out);
  picked.push_back(start);
  Vec min_d2 = (points.rowwise() - points.row(start)).rowwise().squaredNorm();

  while (int(picked.size()) < n_out) {
    int best = 0;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
    Vec d2 = (points.rowwise() - points.row(best)).rowwise().squaredNorm();
    min_d2 = min_d2.cwiseMin(d2);
  }
  return picked;
}

CropResult crop_and_fps(const Mat& points, const CropBox& box, int n_points, Rng& rng) {
  if (points.rows() < 1) throw std::invalid_argument("crop_and_fps: empty input");
  std::vector<int> kept;
  for (int i = 0; i < points.rows(); ++i)
    if (box.contains(points(i, 0), points(i, 1), points(i, 2))) kept.push_back(i);

  CropResult res;
  res.points = Mat(n_points, 3);
  // draw the start index unconditionally so downstream streams are not
  // affected by whether this cloud happened to need FPS
  const std::uint64_t draw = rng.next_u64();

  if (kept.empty()) {
    res.empty_crop = true;
    for (int i = 0; i < n_points; ++i) {
      res.points(i, 0) = box.center(0);
      res.points(i, 1) = box.center(1);
      res.points(i, 2) = box.center(2);
    }
    return res;
  }
  res.empty_crop = false;

  if (int(kept.size()) <= n_points) {
    for (int i = 0; i < n_points; ++i)
      res.points.row(i) = points.row(kept[i % kept.size()]);
    return res;
  }

  Mat cropped(kept.size(), 3);
  for (std::size_t i = 0; i < kept.size(); ++i) cropped.row(i) = points.row(kept[i]);
  const int start = int(draw % kept.size());
  const auto idx = farthest_point_indices(cropped, n_points, start);
  for (int i = 0; i < n_points; ++i) res.points.row(i) = cropped.row(idx[i]);
  return res;
}

std::vector<int> stacked_indices(int history_len, int n_obs) {
  if (history_len < 1) throw std::invalid_argument("stack: empty history");
  std::vector<int> idx(n_obs);
  for (int i = 0; i < n_obs; ++i) {
    const int want = history_len - n_obs + i;
    idx[i] = std::max(0, want);
  }
  return idx;
}

void ObsBuilder::push(Mat audio_window, Mat cloud, Vec proprio) {
  audio_.push_back(std::move(audio_window));
  points_.push_back(std::move(cloud));
  proprio_.push_back(std::move(proprio));
}

Observation ObsBuilder::build() const {
  Observation obs;
  for (int i : stacked_indices(size(), n_obs_)) {
    obs.audio.push_back(audio_[i]);
    obs.points.push_back(points_[i]);
    obs.proprio.push_back(proprio_[i]);
  }
  return obs;
}



void fit_channel_stats(const std::vector<Vec>& rows, Vec& mean, Vec& std) {
  if (rows.empty()) throw std::invalid_argument("fit stats: empty data");
  const int d = int(rows[0].size());
  mean = Vec::Zero(d);
  for (const auto& r : rows) mean += r;
  mean /= double(rows.size());
  Vec var = Vec::Zero(d);
  for (const auto& r : rows) var += (r - mean).cwiseAbs2();
  var /= double(rows.size());
  std = var.cwiseSqrt().cwiseMax(1e-6);
}

NormStats fit_norm_stats(const std::vector<Mat>& mel_frames,
                         const std::vector<Vec>& proprio,
                         const std::vector<Vec>& actions) {
  if (mel_frames.empty() || proprio.empty() || actions.empty())
    throw std::invalid_argument("fit_norm_stats: empty dataset");
  NormStats s;

  double sum = 0.0, count = 0.0;
  for (const auto& m : mel_frames) {
    sum += m.sum();
    count += double(m.size());
  }
  s.mel_mean = sum / count;
  double var = 0.0;
  for (const auto& m : mel_frames) var += (m.array() - s.mel_mean).square().sum();
  s.mel_std = std::max(std::sqrt(var / count), 1e-6);

  fit_channel_stats(proprio, s.proprio_mean, s.proprio_std);

  const int da = int(actions[0].size());
  s.action_min = Vec::Constant(da, std::numeric_limits<double>::infinity());
  s.action_max = Vec::Constant(da, -std::numeric_limits<double>::infinity());
  for (const auto& a : actions) {
    s.action_min = s.action_min.cwiseMin(a);
    s.action_max = s.action_max.cwiseMax(a);
  }
  // guard constant channels
  for (int i = 0; i < da; ++i)
    if (s.action_max[i] - s.action_min[i] < 1e-6) {
      s.action_min[i] -= 5e-7;
      s.action_max[i] += 5e-7;
    }

  s.mel_mean = round_f32(s.mel_mean);
  s.mel_std = round_f32(s.mel_std);
  for (int i = 0; i < s.proprio_mean.size(); ++i) {
    s.proprio_mean[i] = round_f32(s.proprio_mean[i]);
    s.proprio_std[i] = round_f32(s.proprio_std[i]);
  }
  for (int i = 0; i < da; ++i) {
    s.action_min[i] = round_f32(s.action_min[i]);
    s.action_max[i] = round_f32(s.action_max[i]);
  }
  return s;
}

Mat NormStats::norm_mel(const Mat& x) const {
  return (x.array() - mel_mean) / mel_std;
}

Vec NormStats::norm_proprio(const Vec& x) const {
  return norm_vec(x, proprio_mean, proprio_std);
}

Vec NormStats::norm_vec(const Vec& x, const Vec& mean, const Vec& std) const {
  return (x - mean).cwiseQuotient(std);
}

Mat NormStats::norm_actions(const Mat& chunk) const {
  Mat out(chunk.rows(), chunk.cols());
  for (int i = 0; i < chunk.rows(); ++i)
    for (int j = 0; j < chunk.cols(); ++j) {
      const double span = action_max[j] - action_min[j];
      out(i, j) = 2.0 * (chunk(i, j) - action_min[j]) / span - 1.0;
    }
  return out;
}

Mat NormStats::denorm_actions(const Mat& chunk) const {
  Mat out(chunk.rows(), chunk.cols());
  for (int i = 0; i < chunk.rows(); ++i)
    for (int j = 0; j < chunk.cols(); ++j) {
      const double span = action_max[j] - action_min[j];
      out(i, j) = action_min[j] + 0.5 * (chunk(i, j) + 1.0) * span;
    }
  return out;
}

}  // namespace hapfuse
