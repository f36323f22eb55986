#include <cmath>
#include <set>

#include "doctest.h"
#include "hapfuse/pipeline.hpp"

using namespace hapfuse;

namespace {

// Independent reference: naive DFT power spectrum with a periodic Hann
// window, plus a from-scratch HTK triangular filterbank.
std::vector<double> dft_power_oracle(const std::vector<double>& frame) {
  const int n = int(frame.size());
  std::vector<double> power(n / 2 + 1);
  for (int k = 0; k <= n / 2; ++k) {
    double re = 0, im = 0;
    for (int i = 0; i < n; ++i) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
      const double ang = -2.0 * M_PI * k * i / n;
      re += frame[i] * w * std::cos(ang);
      im += frame[i] * w * std::sin(ang);
    }
    power[k] = re * re + im * im;
  }
  return power;
}

Mat log_mel_oracle(const std::vector<double>& wave, int sr, int n_fft, int hop,
                   int n_mels, double f_lo, double f_hi) {
  auto mel_of = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz_of = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = hz_of(mel_of(f_lo) + (mel_of(f_hi) - mel_of(f_lo)) * i / (n_mels + 1.0));

  const int frames = 1 + int((wave.size() - n_fft) / hop);
  Mat out(frames, n_mels);
  for (int f = 0; f < frames; ++f) {
    std::vector<double> frame(wave.begin() + f * hop, wave.begin() + f * hop + n_fft);
    const auto power = dft_power_oracle(frame);
    for (int j = 0; j < n_mels; ++j) {
      double acc = 0;
      for (int b = 0; b <= n_fft / 2; ++b) {
        const double hz = double(b) * sr / n_fft;
        double w = 0;
        if (hz > edges[j] && hz < edges[j + 1])
          w = (hz - edges[j]) / (edges[j + 1] - edges[j]);
        else if (hz >= edges[j + 1] && hz < edges[j + 2])
          w = (edges[j + 2] - hz) / (edges[j + 2] - edges[j + 1]);
        acc += w * power[b];
      }
      out(f, j) = std::log(acc + 1e-10);
    }
  }
  return out;
}

// Brute-force FPS: recompute the full min-distance scan each round.
std::vector<int> fps_oracle(const Mat& pts, int n_out, int start) {
  std::vector<int> picked{start};
  while (int(picked.size()) < n_out) {
    int best = -1;
    double best_d = -1;
    for (int i = 0; i < pts.rows(); ++i) {
      double mind = std::numeric_limits<double>::infinity();
      for (int p : picked)
        mind = std::min(mind, (pts.row(i) - pts.row(p)).squaredNorm());
      if (mind > best_d) {
        best_d = mind;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

}  // namespace

TEST_CASE("log_mel of silence is the floor everywhere") {
  std::vector<double> wave(2048, 0.0);
  const Mat m = log_mel(wave, 16000, 512, 160, 16, 50, 7800);
  CHECK(m.rows() == 1 + (2048 - 512) / 160);
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) CHECK(m(i, j) == doctest::Approx(std::log(1e-10)));
}

TEST_CASE("log_mel matches the DFT + filterbank oracle") {
  Rng rng(5);
  std::vector<double> wave(3000);
  for (auto& s : wave) s = 0.3 * rng.normal();
  const Mat ours = log_mel(wave, 16000, 512, 160, 24, 50, 7800);
  const Mat oracle = log_mel_oracle(wave, 16000, 512, 160, 24, 50, 7800);
  REQUIRE(ours.rows() == oracle.rows());
  CHECK((ours - oracle).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("pure tone at a filter center peaks in that filter") {
  const int sr = 16000, n_fft = 512, M = 24;
  const MelBank bank = MelBank::build(sr, n_fft, M, 50, 7800);
  for (int j : {3, 8, 15, 20}) {
    const double f = bank.center_hz[j];
    std::vector<double> wave(4 * n_fft);
    for (std::size_t i = 0; i < wave.size(); ++i)
      wave[i] = std::sin(2.0 * M_PI * f * i / sr);
    const Mat m = log_mel(wave, sr, bank, 160);
    Vec mean = m.colwise().mean();
    int argmax = 0;
    mean.maxCoeff(&argmax);
    CHECK(argmax == j);
  }
}

TEST_CASE("doubling the waveform raises every bin by log 4") {
  Rng rng(9);
  std::vector<double> wave(2048), wave2(2048);
  for (std::size_t i = 0; i < wave.size(); ++i) {
    wave[i] = 100.0 + 50.0 * rng.normal();  // large so the floor is negligible
    wave2[i] = 2.0 * wave[i];
  }
  const Mat a = log_mel(wave, 16000, 512, 160, 16, 50, 7800);
  const Mat b = log_mel(wave2, 16000, 512, 160, 16, 50, 7800);
  CHECK(((b - a).array() - std::log(4.0)).abs().maxCoeff() < 1e-9);
}

TEST_CASE("log_mel rejects short waveforms") {
  std::vector<double> wave(100, 0.0);
  CHECK_THROWS_AS(log_mel(wave, 16000, 512, 160, 16, 50, 7800),
                  std::invalid_argument);
}

TEST_CASE("window_audio pads early windows with silence") {
  Mat frames(5, 3);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) frames(i, j) = 10.0 * i + j;

  // t = 0: three padding rows then frame 0
  const Mat w0 = window_audio(frames, 0, 4);
  const double silence = std::log(1e-10);
  for (int j = 0; j < 3; ++j) {
    CHECK(w0(0, j) == silence);
    CHECK(w0(1, j) == silence);
    CHECK(w0(2, j) == silence);
    CHECK(w0(3, j) == frames(0, j));
  }

  // t >= window: exact slice
  const Mat w4 = window_audio(frames, 4, 3);
  CHECK(w4 == frames.middleRows(2, 3));
}

TEST_CASE("streaming mel matches the batch computation on every prefix") {
  const int sr = 16000, n_fft = 256, hop = 128, M = 8, block = 1600;
  const MelBank bank = MelBank::build(sr, n_fft, M, 50, 7800);
  StreamingMel stream(bank, hop);
  Rng rng(77);
  std::vector<double> wave;
  CHECK(stream.window(4) == silence_window(4, M));
  for (int b = 0; b < 5; ++b) {
    Vec blockv(block);
    for (int i = 0; i < block; ++i) blockv[i] = 0.2 * rng.normal();
    wave.insert(wave.end(), blockv.data(), blockv.data() + block);
    stream.push(blockv);
    const Mat full = log_mel(wave, sr, bank, hop);
    CHECK(stream.frame_count() == full.rows());
    const Mat a = stream.window(7);
    const Mat b2 = window_audio(full, int(full.rows()) - 1, 7);
    CHECK(a == b2);  // bit identical
  }
}

TEST_CASE("fps picks the opposite corner of a square") {
  Mat pts(4, 3);
  pts << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  const auto idx = farthest_point_indices(pts, 2, 0);
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 3);
}

TEST_CASE("fps matches the brute-force oracle") {
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    Mat pts(64, 3);
    for (int i = 0; i < pts.rows(); ++i)
      for (int j = 0; j < 3; ++j) pts(i, j) = rng.normal();
    const int start = int(rng.below(64));
    CHECK(farthest_point_indices(pts, 8, start) == fps_oracle(pts, 8, start));
  }
}

TEST_CASE("crop keeps a permutation when counts match") {
  Rng rng(4);
  CropBox box;  // default pour box
  Mat pts(16, 3);
  for (int i = 0; i < 16; ++i) {
    pts(i, 0) = 0.3 + 0.01 * i;
    pts(i, 1) = 0.0;
    pts(i, 2) = 0.1;
  }
  const CropResult res = crop_and_fps(pts, box, 16, rng);
  CHECK_FALSE(res.empty_crop);
  std::set<double> in, out;
  for (int i = 0; i < 16; ++i) {
    in.insert(pts(i, 0));
    out.insert(res.points(i, 0));
  }
  CHECK(in == out);
}

TEST_CASE("crop repeats cyclically when too few points survive") {
  Rng rng(4);
  CropBox box;
  Mat pts(3, 3);
  pts << 0.3, 0, 0.1, 0.4, 0, 0.1, 0.5, 0, 0.1;
  const CropResult res = crop_and_fps(pts, box, 7, rng);
  for (int i = 0; i < 7; ++i) CHECK(res.points.row(i) == pts.row(i % 3));
}

TEST_CASE("empty crop falls back to the box center with a warning flag") {
  Rng rng(4);
  CropBox box;
  Mat pts(2, 3);
  pts << 5, 5, 5, -5, -5, -5;
  const CropResult res = crop_and_fps(pts, box, 4, rng);
  CHECK(res.empty_crop);
  for (int i = 0; i < 4; ++i) {
    CHECK(res.points(i, 0) == doctest::Approx(box.center(0)));
    CHECK(res.points(i, 1) == doctest::Approx(box.center(1)));
    CHECK(res.points(i, 2) == doctest::Approx(box.center(2)));
  }
}

TEST_CASE("frame stacking repeats the earliest frame") {
  CHECK(stacked_indices(1, 3) == std::vector<int>{0, 0, 0});
  CHECK(stacked_indices(2, 3) == std::vector<int>{0, 0, 1});
  CHECK(stacked_indices(5, 3) == std::vector<int>{2, 3, 4});
  CHECK_THROWS_AS(stacked_indices(0, 2), std::invalid_argument);

  ObsBuilder builder(3);
  builder.push(Mat::Constant(2, 2, 1.0), Mat::Constant(4, 3, 1.0), Vec::Constant(7, 1.0));
  const Observation obs = builder.build();
  REQUIRE(obs.audio.size() == 3);
  CHECK(obs.audio[0] == obs.audio[2]);
  CHECK(obs.points[0] == obs.points[2]);
}

TEST_CASE("stack then unstack reproduces inputs exactly") {
  ObsBuilder builder(2);
  std::vector<Mat> pushed;
  for (int t = 0; t < 4; ++t) {
    Mat a = Mat::Constant(2, 2, double(t));
    pushed.push_back(a);
    builder.push(a, Mat::Constant(3, 3, double(t)), Vec::Constant(7, double(t)));
  }
  const Observation obs = builder.build();
  CHECK(obs.audio[0] == pushed[2]);
  CHECK(obs.audio[1] == pushed[3]);
}

TEST_CASE("norm stats floor constant channels and z-score the rest") {
  std::vector<Vec> rows;
  for (int i = 0; i < 10; ++i) {
    Vec v(2);
    v << 3.0, double(i);
    rows.push_back(v);
  }
  Vec mean, stddev;
  fit_channel_stats(rows, mean, stddev);
  CHECK(stddev[0] == doctest::Approx(1e-6));
  CHECK(mean[0] == doctest::Approx(3.0));

  std::vector<Mat> mels{Mat::Constant(4, 3, 1.0), Mat::Constant(4, 3, -1.0)};
  std::vector<Vec> actions;
  for (int i = 0; i < 4; ++i) {
    Vec a(2);
    a << double(i), -double(i);
    actions.push_back(a);
  }
  const NormStats stats = fit_norm_stats(mels, rows, actions);
  // constant proprio channel normalizes to zero
  Vec probe(2);
  probe << 3.0, 4.5;
  CHECK(stats.norm_proprio(probe)[0] == doctest::Approx(0.0));
}

TEST_CASE("already standardized data fits to (0, 1)") {
  Rng rng(13);
  std::vector<Vec> rows;
  std::vector<double> raw;
  for (int i = 0; i < 20000; ++i) raw.push_back(rng.normal());
  double m = 0;
  for (double x : raw) m += x;
  m /= raw.size();
  double s2 = 0;
  for (double x : raw) s2 += (x - m) * (x - m);
  const double s = std::sqrt(s2 / raw.size());
  for (double x : raw) {
    Vec v(1);
    v << (x - m) / s;
    rows.push_back(v);
  }
  Vec mean, stddev;
  fit_channel_stats(rows, mean, stddev);
  CHECK(std::abs(mean[0]) < 1e-6);
  CHECK(std::abs(stddev[0] - 1.0) < 1e-4);
}

TEST_CASE("action normalization round trips within 1e-6") {
  std::vector<Mat> mels{Mat::Constant(2, 2, 0.5)};
  std::vector<Vec> proprio{Vec::Constant(3, 1.0), Vec::Constant(3, 2.0)};
  std::vector<Vec> actions;
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    Vec a(4);
    for (int j = 0; j < 4; ++j) a[j] = rng.uniform(-0.02, 0.02);
    actions.push_back(a);
  }
  const NormStats stats = fit_norm_stats(mels, proprio, actions);
  Mat chunk(5, 4);
  Rng r2(18);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) chunk(i, j) = r2.uniform(-0.015, 0.015);
  const Mat back = stats.denorm_actions(stats.norm_actions(chunk));
  CHECK((back - chunk).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(stats.norm_actions(chunk).cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
}
