#pragma once

#include <map>
#include <string>

#include "hapfuse/autodiff.hpp"
#include "hapfuse/rng.hpp"

namespace hapfuse {

using ad::Mat;

/// Named parameter arrays in a deterministic (name-sorted) order. Each array
/// is initialized from its own seed-derived stream, so shapes and values are
/// independent of registration order.
class ParamStore {
 public:
  enum class Init { zeros, ones, glorot, identity_3x };

  Mat& add(const std::string& name, int rows, int cols, Init init,
           std::uint64_t seed);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const { return values_.count(name) > 0; }

  std::map<std::string, Mat>& values() { return values_; }
  const std::map<std::string, Mat>& values() const { return values_; }

 private:
  std::map<std::string, Mat> values_;
};

using GradMap = std::map<std::string, Mat>;

/// Binds parameters into a tape once per forward pass and collects their
/// gradients afterwards.
class GraphBuilder {
 public:
  GraphBuilder(ad::Tape& tape, const ParamStore& params)
      : tape_(tape), params_(params) {}

  ad::Tape& tape() { return tape_; }

  /// Parameter leaf; bound at most once per tape.
  ad::Var P(const std::string& name);

  /// Sum gradients of all bound parameters into `out` (accumulating).
  void collect_grads(GradMap& out) const;

 private:
  ad::Tape& tape_;
  const ParamStore& params_;
  std::map<std::string, ad::Var> bound_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, const GradMap& grads, double lr);

  std::int64_t steps_taken() const { return t_; }
  std::map<std::string, Mat>& m() { return m_; }
  std::map<std::string, Mat>& v() { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::map<std::string, Mat> m_, v_;
  std::int64_t t_ = 0;
};

/// Linear warmup then cosine decay to zero.
double lr_at_step(int step, int total_steps, double base_lr, int warmup);

/// Float32 rounding forced through memory; optimization levels must not be
/// able to keep the wider value (observed with gcc 11 at -O3).
inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

/// Round every entry through float32 in place. Applied to train state when a
/// checkpoint is written, so a resumed run continues from exactly the state
/// the uninterrupted run continued from.
void quantize_f32(Mat& m);
void quantize_f32(std::map<std::string, Mat>& maps);

}  // namespace hapfuse
