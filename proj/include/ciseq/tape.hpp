#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace ciseq::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle to a tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

/// Reverse-mode autodiff over dense double matrices. Nodes are created in
/// topological order, so the backward pass is a single reverse sweep.
/// Activations are row-major by convention: one row per sequence position
/// or batch element.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const Mat& value);
  Var leaf(Mat&& value);
  /// Alias for leaf; named for readability when the value is not a parameter.
  Var constant(const Mat& value) { return leaf(value); }

  const Mat& val(Var v) const;
  /// Gradient of the last backward() target w.r.t. v. Zero matrix when the
  /// node is unreachable from the target.
  Mat grad(Var v) const;

  /// Backpropagates from a 1x1 node.
  void backward(Var scalar);

  size_t size() const { return nodes_.size(); }

  // --- internal: used by op implementations -------------------------------
  struct Node {
    Mat val;
    Mat grad;  // lazily sized on first accumulation
    std::function<void(Tape&)> back;  // null for leaves
  };
  Var emit(Mat value, std::function<void(Tape&)> back);
  Mat& grad_ref(int idx);
  void accumulate(int idx, const Mat& g);
  const Mat& val_at(int idx) const { return nodes_[static_cast<size_t>(idx)].val; }
  bool has_grad(int idx) const;

 private:
  std::vector<Node> nodes_;
};

// --- elementwise / structural ops ------------------------------------------
Var add(Var a, Var b);                 // same shape
Var sub(Var a, Var b);                 // same shape
Var mul(Var a, Var b);                 // elementwise, same shape
Var add_rowvec(Var a, Var r);          // r is 1xC, broadcast over rows
Var mul_rowvec(Var a, Var r);
Var add_colvec(Var a, Var c);          // c is Rx1, broadcast over cols
Var mul_colvec(Var a, Var c);
Var scale(Var a, double s);
Var add_const(Var a, const Mat& c);    // same shape constant
Var matmul(Var a, Var b);
Var transpose(Var a);
Var concat_cols(Var a, Var b);
Var concat_rows(Var a, Var b);
Var slice_cols(Var a, int offset, int n);
Var slice_rows(Var a, int offset, int n);
Var gather_rows(Var table, const std::vector<int>& ids);
Var pick_per_row(Var a, const std::vector<int>& cols);  // Rx1

// --- nonlinearities ----------------------------------------------------------
Var tanh_(Var a);
Var gelu(Var a);       // exact erf formulation (smooth everywhere)
Var exp_(Var a);
Var log_(Var a);       // caller guarantees positive input
Var square(Var a);
/// (a + eps)^p elementwise; derivative clamped to 0 where a + eps <= 0.
Var powc(Var a, double p, double eps);

// --- reductions / softmax ----------------------------------------------------
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var rowwise_sum(Var a);   // Rx1
Var colwise_sum(Var a);   // 1xC
Var sum_all(Var a);       // 1x1
Var mean_all(Var a);      // 1x1

// --- composites ----------------------------------------------------------------
/// Rowwise layer norm with learned 1xC gain/bias, built from primitives.
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
/// Mean over rows of -log softmax(a)[row, target[row]].
Var cross_entropy_mean(Var logits, const std::vector<int>& targets);
/// Euclidean norm of (a - b) flattened; subgradient 0 at coincidence.
Var l2_distance(Var a, Var b);
/// Squared Frobenius norm as 1x1.
Var sum_squares(Var a);

inline double scalar(const Tape& t, Var v) { return t.val(v)(0, 0); }

}  // namespace ciseq::ad
