#include "hapfuse/autodiff.hpp"

#include <cmath>

namespace hapfuse::ad {

Var Tape::input(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

const Mat& Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (n.grad.size() == 0)
    throw std::logic_error("gradient not computed for this node");
  return n.grad;
}

Mat& Tape::grad_ref(int idx) {
  Node& n = nodes_[idx];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::emit(Mat value, std::vector<int> parents, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  for (int p : parents)
    if (nodes_[p].requires_grad) n.requires_grad = true;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{int(nodes_.size()) - 1};
}

Var Tape::add(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  return emit(nodes_[ia].value + nodes_[ib].value, {ia, ib},
              [ia, ib, out = size()](Tape& t) {
                const Mat& g = t.nodes_[out].grad;
                if (t.wants_grad(ia)) t.grad_ref(ia) += g;
                if (t.wants_grad(ib)) t.grad_ref(ib) += g;
              });
}

Var Tape::sub(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  return emit(nodes_[ia].value - nodes_[ib].value, {ia, ib},
              [ia, ib, out = size()](Tape& t) {
                const Mat& g = t.nodes_[out].grad;
                if (t.wants_grad(ia)) t.grad_ref(ia) += g;
                if (t.wants_grad(ib)) t.grad_ref(ib) -= g;
              });
}

Var Tape::hadamard(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  return emit(nodes_[ia].value.cwiseProduct(nodes_[ib].value), {ia, ib},
              [ia, ib, out = size()](Tape& t) {
                const Mat& g = t.nodes_[out].grad;
                if (t.wants_grad(ia))
                  t.grad_ref(ia) += g.cwiseProduct(t.nodes_[ib].value);
                if (t.wants_grad(ib))
                  t.grad_ref(ib) += g.cwiseProduct(t.nodes_[ia].value);
              });
}

Var Tape::scale(Var a, double s) {
  const int ia = check(a);
  return emit(nodes_[ia].value * s, {ia}, [ia, s, out = size()](Tape& t) {
    if (t.wants_grad(ia)) t.grad_ref(ia) += t.nodes_[out].grad * s;
  });
}

Var Tape::add_rowvec(Var a, Var row) {
  const int ia = check(a), ir = check(row);
  if (nodes_[ir].value.rows() != 1 ||
      nodes_[ir].value.cols() != nodes_[ia].value.cols())
    throw std::logic_error("add_rowvec: shape mismatch");
  Mat v = nodes_[ia].value;
  v.rowwise() += nodes_[ir].value.row(0);
  return emit(std::move(v), {ia, ir}, [ia, ir, out = size()](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    if (t.wants_grad(ia)) t.grad_ref(ia) += g;
    if (t.wants_grad(ir)) t.grad_ref(ir) += g.colwise().sum();
  });
}

Var Tape::mul_rowvec(Var a, Var row) {
  const int ia = check(a), ir = check(row);
  if (nodes_[ir].value.rows() != 1 ||
      nodes_[ir].value.cols() != nodes_[ia].value.cols())
    throw std::logic_error("mul_rowvec: shape mismatch");
  Mat v = nodes_[ia].value;
  v.array().rowwise() *= nodes_[ir].value.row(0).array();
  return emit(std::move(v), {ia, ir}, [ia, ir, out = size()](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    if (t.wants_grad(ia)) {
      Mat ga = g;
      ga.array().rowwise() *= t.nodes_[ir].value.row(0).array();
      t.grad_ref(ia) += ga;
    }
    if (t.wants_grad(ir))
      t.grad_ref(ir) += g.cwiseProduct(t.nodes_[ia].value).colwise().sum();
  });
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  if (trans_a && trans_b) throw std::logic_error("matmul: double transpose unsupported");
  const int ia = check(a), ib = check(b);
  const Mat& A = nodes_[ia].value;
  const Mat& B = nodes_[ib].value;
  Mat v;
  if (!trans_a && !trans_b) v = A * B;
  else if (trans_a) v = A.transpose() * B;
  else v = A * B.transpose();
  return emit(std::move(v), {ia, ib},
              [ia, ib, trans_a, trans_b, out = size()](Tape& t) {
                const Mat& g = t.nodes_[out].grad;
                const Mat& A = t.nodes_[ia].value;
                const Mat& B = t.nodes_[ib].value;
                if (!trans_a && !trans_b) {
                  if (t.wants_grad(ia)) t.grad_ref(ia) += g * B.transpose();
                  if (t.wants_grad(ib)) t.grad_ref(ib) += A.transpose() * g;
                } else if (trans_a) {  // v = A^T B
                  if (t.wants_grad(ia)) t.grad_ref(ia) += B * g.transpose();
                  if (t.wants_grad(ib)) t.grad_ref(ib) += A * g;
                } else {  // v = A B^T
                  if (t.wants_grad(ia)) t.grad_ref(ia) += g * B;
                  if (t.wants_grad(ib)) t.grad_ref(ib) += g.transpose() * A;
                }
              });
}

Var Tape::relu(Var a) {
  const int ia = check(a);
  return emit(nodes_[ia].value.cwiseMax(0.0), {ia}, [ia, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const Mat& g = t.nodes_[out].grad;
    const Mat& x = t.nodes_[ia].value;
    t.grad_ref(ia) += (x.array() > 0.0).cast<double>().matrix().cwiseProduct(g);
  });
}

Var Tape::sigmoid(Var a) {
  const int ia = check(a);
  Mat v = (1.0 / (1.0 + (-nodes_[ia].value.array()).exp())).matrix();
  return emit(std::move(v), {ia}, [ia, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const Mat& g = t.nodes_[out].grad;
    const Mat& y = t.nodes_[out].value;
    t.grad_ref(ia) +=
        g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  });
}

Var Tape::softmax_rows(Var a) {
  const int ia = check(a);
  const Mat& x = nodes_[ia].value;
  Mat v(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - m).exp();
    v.row(i) = (e / e.sum()).matrix();
  }
  return emit(std::move(v), {ia}, [ia, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const Mat& g = t.nodes_[out].grad;
    const Mat& y = t.nodes_[out].value;
    Mat& ga = t.grad_ref(ia);
    for (int i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      ga.row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
    }
  });
}

Var Tape::layernorm_rows(Var a, double eps) {
  const int ia = check(a);
  const Mat& x = nodes_[ia].value;
  const int C = int(x.cols());
  Mat v(x.rows(), C);
  Eigen::VectorXd inv_std(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    v.row(i) = ((x.row(i).array() - mu) * inv_std[i]).matrix();
  }
  return emit(std::move(v), {ia},
              [ia, inv_std = std::move(inv_std), C, out = size()](Tape& t) {
                if (!t.wants_grad(ia)) return;
                const Mat& g = t.nodes_[out].grad;
                const Mat& y = t.nodes_[out].value;
                Mat& ga = t.grad_ref(ia);
                for (int i = 0; i < y.rows(); ++i) {
                  const double mean_g = g.row(i).mean();
                  const double mean_gy = g.row(i).dot(y.row(i)) / C;
                  ga.row(i) += (inv_std[i] *
                                (g.row(i).array() - mean_g - y.row(i).array() * mean_gy))
                                   .matrix();
                }
              });
}

Var Tape::mean_rows(Var a) {
  const int ia = check(a);
  const Mat& x = nodes_[ia].value;
  Mat v = x.colwise().mean();
  return emit(std::move(v), {ia}, [ia, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const Mat& g = t.nodes_[out].grad;
    Mat& ga = t.grad_ref(ia);
    ga.array().rowwise() += g.row(0).array() / double(ga.rows());
  });
}

Var Tape::max_rows(Var a) {
  const int ia = check(a);
  const Mat& x = nodes_[ia].value;
  Mat v(1, x.cols());
  std::vector<int> arg(x.cols());
  for (int j = 0; j < x.cols(); ++j) {
    int best = 0;
    for (int i = 1; i < x.rows(); ++i)
      if (x(i, j) > x(best, j)) best = i;
    arg[j] = best;
    v(0, j) = x(best, j);
  }
  return emit(std::move(v), {ia},
              [ia, arg = std::move(arg), out = size()](Tape& t) {
                if (!t.wants_grad(ia)) return;
                const Mat& g = t.nodes_[out].grad;
                Mat& ga = t.grad_ref(ia);
                for (int j = 0; j < g.cols(); ++j) ga(arg[j], j) += g(0, j);
              });
}

Var Tape::mean_all(Var a) {
  const int ia = check(a);
  Mat v(1, 1);
  v(0, 0) = nodes_[ia].value.mean();
  return emit(std::move(v), {ia}, [ia, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const double g = t.nodes_[out].grad(0, 0);
    Mat& ga = t.grad_ref(ia);
    ga.array() += g / double(ga.size());
  });
}

Var Tape::sum_squares(Var a) {
  const int ia = check(a);
  Mat v(1, 1);
  v(0, 0) = nodes_[ia].value.squaredNorm();
  return emit(std::move(v), {ia}, [ia, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const double g = t.nodes_[out].grad(0, 0);
    t.grad_ref(ia) += 2.0 * g * t.nodes_[ia].value;
  });
}

Var Tape::mse(Var a, const Mat& target) {
  const int ia = check(a);
  const Mat& x = nodes_[ia].value;
  if (x.rows() != target.rows() || x.cols() != target.cols())
    throw std::logic_error("mse: shape mismatch");
  Mat v(1, 1);
  v(0, 0) = (x - target).squaredNorm() / double(x.size());
  return emit(std::move(v), {ia}, [ia, target, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const double g = t.nodes_[out].grad(0, 0);
    t.grad_ref(ia) +=
        (2.0 * g / double(target.size())) * (t.nodes_[ia].value - target);
  });
}

Var Tape::transpose(Var a) {
  const int ia = check(a);
  return emit(nodes_[ia].value.transpose(), {ia}, [ia, out = size()](Tape& t) {
    if (t.wants_grad(ia)) t.grad_ref(ia) += t.nodes_[out].grad.transpose();
  });
}

Var Tape::concat_rows(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Mat& A = nodes_[ia].value;
  const Mat& B = nodes_[ib].value;
  if (A.cols() != B.cols()) throw std::logic_error("concat_rows: shape mismatch");
  Mat v(A.rows() + B.rows(), A.cols());
  v.topRows(A.rows()) = A;
  v.bottomRows(B.rows()) = B;
  const int ra = int(A.rows());
  return emit(std::move(v), {ia, ib}, [ia, ib, ra, out = size()](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    if (t.wants_grad(ia)) t.grad_ref(ia) += g.topRows(ra);
    if (t.wants_grad(ib)) t.grad_ref(ib) += g.bottomRows(g.rows() - ra);
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  const Mat& A = nodes_[ia].value;
  const Mat& B = nodes_[ib].value;
  if (A.rows() != B.rows()) throw std::logic_error("concat_cols: shape mismatch");
  Mat v(A.rows(), A.cols() + B.cols());
  v.leftCols(A.cols()) = A;
  v.rightCols(B.cols()) = B;
  const int ca = int(A.cols());
  return emit(std::move(v), {ia, ib}, [ia, ib, ca, out = size()](Tape& t) {
    const Mat& g = t.nodes_[out].grad;
    if (t.wants_grad(ia)) t.grad_ref(ia) += g.leftCols(ca);
    if (t.wants_grad(ib)) t.grad_ref(ib) += g.rightCols(g.cols() - ca);
  });
}

Var Tape::slice_cols(Var a, int c0, int n) {
  const int ia = check(a);
  const Mat& A = nodes_[ia].value;
  if (c0 < 0 || c0 + n > A.cols()) throw std::logic_error("slice_cols: out of range");
  return emit(A.middleCols(c0, n), {ia}, [ia, c0, n, out = size()](Tape& t) {
    if (t.wants_grad(ia))
      t.grad_ref(ia).middleCols(c0, n) += t.nodes_[out].grad;
  });
}

Var Tape::slice_rows(Var a, int r0, int n) {
  const int ia = check(a);
  const Mat& A = nodes_[ia].value;
  if (r0 < 0 || r0 + n > A.rows()) throw std::logic_error("slice_rows: out of range");
  return emit(A.middleRows(r0, n), {ia}, [ia, r0, n, out = size()](Tape& t) {
    if (t.wants_grad(ia))
      t.grad_ref(ia).middleRows(r0, n) += t.nodes_[out].grad;
  });
}

Var Tape::reshape_row(Var a) {
  const int ia = check(a);
  const Mat& A = nodes_[ia].value;
  const int R = int(A.rows()), C = int(A.cols());
  Mat v(1, R * C);
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) v(0, i * C + j) = A(i, j);
  return emit(std::move(v), {ia}, [ia, R, C, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const Mat& g = t.nodes_[out].grad;
    Mat& ga = t.grad_ref(ia);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j) ga(i, j) += g(0, i * C + j);
  });
}

Var Tape::unfold_rows(Var a, int k) {
  const int ia = check(a);
  const Mat& A = nodes_[ia].value;
  const int L = int(A.rows()), C = int(A.cols());
  if (k < 1 || k > L) throw std::logic_error("unfold_rows: bad kernel size");
  Mat v(L - k + 1, k * C);
  for (int i = 0; i < L - k + 1; ++i)
    for (int a_off = 0; a_off < k; ++a_off)
      v.block(i, a_off * C, 1, C) = A.row(i + a_off);
  return emit(std::move(v), {ia}, [ia, k, C, out = size()](Tape& t) {
    if (!t.wants_grad(ia)) return;
    const Mat& g = t.nodes_[out].grad;
    Mat& ga = t.grad_ref(ia);
    for (int i = 0; i < g.rows(); ++i)
      for (int a_off = 0; a_off < k; ++a_off)
        ga.row(i + a_off) += g.block(i, a_off * C, 1, C);
  });
}

void Tape::backward(Var root) {
  const int ir = check(root);
  if (nodes_[ir].value.size() != 1)
    throw std::logic_error("backward: root must be a scalar");
  grad_ref(ir)(0, 0) = 1.0;
  for (int i = ir; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() > 0 && n.back) n.back(*this);
  }
}

Var linear(Tape& t, Var x, Var w, Var b) {
  return t.add_rowvec(t.matmul(x, w), b);
}

}  // namespace hapfuse::ad
