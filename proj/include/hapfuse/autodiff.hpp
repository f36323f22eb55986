#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <vector>

namespace hapfuse::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Dynamically built reverse-mode tape over double-precision matrices.
/// Nodes are appended in topological order; backward() walks them in
/// reverse. Tapes are single-use per forward pass and not thread-safe; run
/// one tape per thread.
class Tape {
 public:
  Var input(Mat value, bool requires_grad = true);
  Var constant(Mat value) { return input(std::move(value), false); }

  const Mat& value(Var v) const { return nodes_[check(v)].value; }
  const Mat& grad(Var v) const;
  bool has_grad(Var v) const { return nodes_[check(v)].grad.size() > 0; }

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var row);  // row 1xC broadcast over rows of a
  Var mul_rowvec(Var a, Var row);
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);

  // ---- nonlinearities ----
  Var relu(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);
  Var layernorm_rows(Var a, double eps = 1e-5);

  // ---- reductions ----
  Var mean_rows(Var a);   // RxC -> 1xC
  Var max_rows(Var a);    // RxC -> 1xC, subgradient to the first argmax
  Var mean_all(Var a);    // -> 1x1
  Var sum_squares(Var a); // -> 1x1
  Var mse(Var a, const Mat& target);  // mean squared error -> 1x1

  // ---- shape ----
  Var transpose(Var a);
  Var concat_rows(Var a, Var b);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, int c0, int n);
  Var slice_rows(Var a, int r0, int n);
  Var reshape_row(Var a);  // row-major flatten to 1 x (R*C)
  /// Sliding-window unfold for 1-d convolution over rows: (L x C) ->
  /// (L-k+1) x (k*C); row i holds rows i..i+k-1 concatenated.
  Var unfold_rows(Var a, int k);

  /// Accumulates d(root)/d(node) into grads for every node that requires
  /// them. root must be 1x1.
  void backward(Var root);

  int size() const { return int(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;  // empty until needed
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };

  int check(Var v) const {
    if (!v.valid() || v.idx >= int(nodes_.size()))
      throw std::logic_error("invalid tape handle");
    return v.idx;
  }

  Mat& grad_ref(int idx);
  bool wants_grad(int idx) const { return nodes_[idx].requires_grad; }
  Var emit(Mat value, std::vector<int> parents, std::function<void(Tape&)> back);

  std::vector<Node> nodes_;
};

/// y = x W + b  (b is 1 x cols(W))
Var linear(Tape& t, Var x, Var w, Var b);

}  // namespace hapfuse::ad
