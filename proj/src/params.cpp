#include "hapfuse/params.hpp"

#include <cmath>
#include <stdexcept>

namespace hapfuse {

Mat& ParamStore::add(const std::string& name, int rows, int cols, Init init,
                     std::uint64_t seed) {
  if (values_.count(name)) throw std::logic_error("duplicate parameter " + name);
  Mat m(rows, cols);
  Rng rng = Rng::stream(seed, "init/" + name);
  switch (init) {
    case Init::zeros:
      m.setZero();
      break;
    case Init::ones:
      m.setOnes();
      break;
    case Init::glorot: {
      const double s = std::sqrt(6.0 / double(rows + cols));
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-s, s);
      break;
    }
    case Init::identity_3x: {
      // square identity; used for projections that should start as a pass-
      // through
      m.setZero();
      for (int i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
      break;
    }
  }
  return values_.emplace(name, std::move(m)).first->second;
}

Mat& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::logic_error("unknown parameter " + name);
  return it->second;
}

const Mat& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::logic_error("unknown parameter " + name);
  return it->second;
}

ad::Var GraphBuilder::P(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  ad::Var v = tape_.input(params_.at(name), true);
  bound_.emplace(name, v);
  return v;
}

void GraphBuilder::collect_grads(GradMap& out) const {
  for (const auto& [name, var] : bound_) {
    if (!tape_.has_grad(var)) continue;
    auto it = out.find(name);
    if (it == out.end())
      out.emplace(name, tape_.grad(var));
    else
      it->second += tape_.grad(var);
  }
}

void Adam::step(ParamStore& params, const GradMap& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (auto& [name, p] : params.values()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Mat& g = git->second;
    Mat& m = m_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    Mat& v = v_.try_emplace(name, Mat::Zero(p.rows(), p.cols())).first->second;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Mat mhat = m / bc1;
    const Mat vhat = v / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

double lr_at_step(int step, int total_steps, double base_lr, int warmup) {
  if (warmup > 0 && step < warmup) return base_lr * double(step + 1) / warmup;
  if (total_steps <= warmup) return base_lr;
  const double u = double(step - warmup) / double(total_steps - warmup);
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * std::min(1.0, u)));
}

void quantize_f32(Mat& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = round_f32(m(i, j));
}

void quantize_f32(std::map<std::string, Mat>& maps) {
  for (auto& [_, m] : maps) quantize_f32(m);
}

}  // namespace hapfuse
