#pragma once

#include <Eigen/Core>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace difftraj::ad {

using Mat = Eigen::MatrixXd;

// A learnable tensor. Owned by a ParamRegistry; gradients accumulate
// into `grad` when a Tape that referenced the parameter runs backward.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
};

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over Eigen matrices. Operations are recorded at
// matrix granularity so the tape stays short and the heavy lifting runs
// inside Eigen kernels. Values live for the lifetime of the tape.
class Tape {
 public:
  // Leaves. `constant` is never differentiated; `input` is tracked so
  // tests can query d(loss)/d(input); `param` additionally accumulates
  // into the bound Parameter on backward().
  Var constant(Mat value);
  Var input(Mat value);
  Var param(Parameter& p);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  int rows(Var v) const { return static_cast<int>(nodes_[v.id].value.rows()); }
  int cols(Var v) const { return static_cast<int>(nodes_[v.id].value.cols()); }

  // Elementwise and linear algebra.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // Hadamard
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var scale(Var a, double s);
  Var add_rowvec(Var a, Var row);  // broadcast a (1,d) row over all rows of a

  // Activations.
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var silu(Var a);
  Var leaky_relu(Var a, double slope);

  // Row-wise softmax (used by attention blocks).
  Var softmax_rows(Var a);

  // Structure ops.
  Var gather_rows(Var a, std::vector<int> idx);
  // Copy of `base` with rows idx[i] overwritten by row i of `rows`.
  Var rows_update(Var base, Var rows, std::vector<int> idx);
  // Row-wise select: mask[i] ? a.row(i) : b.row(i).
  Var select_rows(std::vector<bool> mask, Var a, Var b);
  Var scale_rows(Var a, Var col);  // multiply row i of a by col(i, 0)
  Var concat_cols(Var a, Var b);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int n);

  // Segment ops over row groups defined by `seg` (e.g. message passing
  // keyed by destination node). Scores are a column vector (E, 1).
  Var segment_softmax(Var scores, std::vector<int> seg, int num_segments);
  Var segment_sum(Var a, std::vector<int> seg, int num_segments);

  // Reductions to a (1,1) scalar.
  Var sum_all(Var a);
  Var mean_all(Var a);

  // Row-wise magnitude clamp of (M,2) inputs onto the disc |u| <= bound;
  // direction is preserved exactly.
  Var friction_clamp_rows(Var u, double bound);

  // Runs reverse accumulation from a (1,1) scalar. `seed` scales the
  // whole gradient (used for mean-over-batch accumulation).
  void backward(Var scalar_out, double seed = 1.0);

  // Gradient of the last backward() w.r.t. a tracked node (zeros if it
  // never received one).
  Mat grad_of(Var v) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    Parameter* bound = nullptr;
    std::function<void(Tape&)> backprop;
  };

  Var make(Mat value, bool requires_grad, std::function<void(Tape&)> backprop);
  Mat& grad_ref(int id);
  void accumulate(int id, const Mat& g);
  bool tracked(Var v) const { return nodes_[v.id].requires_grad; }

  std::vector<Node> nodes_;
};

// Convenience: parameter store with stable addresses and deterministic
// iteration order.
class ParamRegistry {
 public:
  Parameter* add(const std::string& name, int rows, int cols);
  Parameter* find(const std::string& name);
  const std::vector<Parameter*>& all() const { return order_; }
  void zero_grads();
  int64_t scalar_count() const;

 private:
  std::deque<Parameter> storage_;
  std::vector<Parameter*> order_;
};

}  // namespace difftraj::ad
