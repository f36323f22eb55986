#pragma once

#include <functional>
#include <string>

#include "hapfuse/params.hpp"

namespace hapfuse::testing {

/// Central finite differences against analytic gradients.
///
/// `forward` evaluates the scalar under the current parameter values;
/// `analytic` is the gradient map produced by one tape backward pass. Only
/// `probes` randomly chosen entries per array are checked to keep runtime
/// bounded; every array is covered.
struct FdReport {
  double max_rel_err = 0.0;
  std::string worst;  // "name[i,j]"
  int checked = 0;
};

// Relative where the gradient is meaningful; the 1e-3 floor turns the
// comparison absolute for near-zero entries, where central differences are
// dominated by cancellation noise (~1e-11 at h = 1e-6).
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

inline FdReport fd_check_params(ParamStore& params, const GradMap& analytic,
                                const std::function<double()>& forward,
                                Rng& rng, int probes = 4, double h = 1e-6) {
  FdReport rep;
  for (auto& [name, p] : params.values()) {
    auto git = analytic.find(name);
    for (int probe = 0; probe < probes; ++probe) {
      const int i = int(rng.below(std::uint64_t(p.rows())));
      const int j = int(rng.below(std::uint64_t(p.cols())));
      const double saved = p(i, j);
      p(i, j) = saved + h;
      const double up = forward();
      p(i, j) = saved - h;
      const double dn = forward();
      p(i, j) = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double an = git == analytic.end() ? 0.0 : git->second(i, j);
      const double err = rel_err(an, fd);
      ++rep.checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst = name + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
      }
    }
  }
  return rep;
}

/// Same probe scheme for gradients with respect to an input matrix.
inline FdReport fd_check_input(Mat& x, const Mat& analytic,
                               const std::function<double()>& forward,
                               Rng& rng, int probes = 6, double h = 1e-6) {
  FdReport rep;
  for (int probe = 0; probe < probes; ++probe) {
    const int i = int(rng.below(std::uint64_t(x.rows())));
    const int j = int(rng.below(std::uint64_t(x.cols())));
    const double saved = x(i, j);
    x(i, j) = saved + h;
    const double up = forward();
    x(i, j) = saved - h;
    const double dn = forward();
    x(i, j) = saved;
    const double fd = (up - dn) / (2.0 * h);
    const double err = rel_err(analytic(i, j), fd);
    ++rep.checked;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst = "input[" + std::to_string(i) + "," + std::to_string(j) + "]";
    }
  }
  return rep;
}

inline Mat random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace hapfuse::testing
