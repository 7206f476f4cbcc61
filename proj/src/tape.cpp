#include "difftraj/tape.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "difftraj/common.hpp"

namespace difftraj::ad {

Var Tape::make(Mat value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Mat& g) {
  if (!nodes_[id].requires_grad) return;
  grad_ref(id) += g;
}

Var Tape::constant(Mat value) { return make(std::move(value), false, {}); }

Var Tape::input(Mat value) { return make(std::move(value), true, {}); }

Var Tape::param(Parameter& p) {
  Var v = make(p.value, true, {});
  nodes_[v.id].bound = &p;
  return v;
}

Var Tape::add(Var a, Var b) {
  bool rg = tracked(a) || tracked(b);
  Var out = make(value(a) + value(b), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, b, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g);
      t.accumulate(b.id, g);
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) {
  bool rg = tracked(a) || tracked(b);
  Var out = make(value(a) - value(b), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, b, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g);
      t.accumulate(b.id, -g);
    };
  }
  return out;
}

Var Tape::mul(Var a, Var b) {
  bool rg = tracked(a) || tracked(b);
  Var out = make(value(a).cwiseProduct(value(b)), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, b, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g.cwiseProduct(t.value(b)));
      t.accumulate(b.id, g.cwiseProduct(t.value(a)));
    };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  bool rg = tracked(a) || tracked(b);
  Var out = make(value(a) * value(b), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, b, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g * t.value(b).transpose());
      t.accumulate(b.id, t.value(a).transpose() * g);
    };
  }
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  bool rg = tracked(a) || tracked(b);
  Var out = make(value(a) * value(b).transpose(), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, b, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g * t.value(b));
      t.accumulate(b.id, g.transpose() * t.value(a));
    };
  }
  return out;
}

Var Tape::scale(Var a, double s) {
  bool rg = tracked(a);
  Var out = make(value(a) * s, rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, s, out](Tape& t) {
      t.accumulate(a.id, t.grad_ref(out.id) * s);
    };
  }
  return out;
}

Var Tape::add_rowvec(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw ContractViolation("add_rowvec: row must be (1, cols(a))");
  Mat v = value(a);
  v.rowwise() += value(row).row(0);
  bool rg = tracked(a) || tracked(row);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, row, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g);
      t.accumulate(row.id, g.colwise().sum());
    };
  }
  return out;
}

Var Tape::sigmoid(Var a) {
  Mat v = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, out](Tape& t) {
      const Mat& y = t.value(out);
      t.accumulate(a.id, t.grad_ref(out.id).cwiseProduct(
                             (y.array() * (1.0 - y.array())).matrix()));
    };
  }
  return out;
}

Var Tape::tanh(Var a) {
  Mat v = value(a).array().tanh().matrix();
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, out](Tape& t) {
      const Mat& y = t.value(out);
      t.accumulate(a.id, t.grad_ref(out.id).cwiseProduct(
                             (1.0 - y.array().square()).matrix()));
    };
  }
  return out;
}

Var Tape::silu(Var a) {
  Eigen::ArrayXXd x = value(a).array();
  Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x).exp());
  bool rg = tracked(a);
  Var out = make((x * sig).matrix(), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, out](Tape& t) {
      Eigen::ArrayXXd x2 = t.value(a).array();
      Eigen::ArrayXXd s = 1.0 / (1.0 + (-x2).exp());
      Eigen::ArrayXXd d = s * (1.0 + x2 * (1.0 - s));
      t.accumulate(a.id, t.grad_ref(out.id).cwiseProduct(d.matrix()));
    };
  }
  return out;
}

Var Tape::leaky_relu(Var a, double slope) {
  Eigen::ArrayXXd x = value(a).array();
  Mat v = (x >= 0.0).select(x, x * slope).matrix();
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, slope, out](Tape& t) {
      Eigen::ArrayXXd x2 = t.value(a).array();
      Eigen::ArrayXXd d = (x2 >= 0.0).select(Eigen::ArrayXXd::Ones(x2.rows(), x2.cols()),
                                             Eigen::ArrayXXd::Constant(x2.rows(), x2.cols(), slope));
      t.accumulate(a.id, t.grad_ref(out.id).cwiseProduct(d.matrix()));
    };
  }
  return out;
}

Var Tape::softmax_rows(Var a) {
  Mat v = value(a);
  for (int i = 0; i < v.rows(); ++i) {
    Eigen::ArrayXd r = v.row(i).array();
    r -= r.maxCoeff();
    Eigen::ArrayXd e = r.exp();
    v.row(i) = (e / e.sum()).matrix().transpose();
  }
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, out](Tape& t) {
      const Mat& y = t.value(out);
      const Mat& g = t.grad_ref(out.id);
      Mat ga(y.rows(), y.cols());
      for (int i = 0; i < y.rows(); ++i) {
        double dot = y.row(i).dot(g.row(i));
        ga.row(i) = y.row(i).cwiseProduct(g.row(i).array().matrix()) - dot * y.row(i);
      }
      t.accumulate(a.id, ga);
    };
  }
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  Mat v(static_cast<int>(idx.size()), value(a).cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(static_cast<int>(i)) = value(a).row(idx[i]);
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, idx = std::move(idx), out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
      for (size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<int>(i));
      t.accumulate(a.id, ga);
    };
  }
  return out;
}

Var Tape::rows_update(Var base, Var rows, std::vector<int> idx) {
  Mat v = value(base);
  for (size_t i = 0; i < idx.size(); ++i) v.row(idx[i]) = value(rows).row(static_cast<int>(i));
  bool rg = tracked(base) || tracked(rows);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [base, rows, idx = std::move(idx), out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      Mat gb = g;
      Mat gr(static_cast<int>(idx.size()), g.cols());
      for (size_t i = 0; i < idx.size(); ++i) {
        gr.row(static_cast<int>(i)) = g.row(idx[i]);
        gb.row(idx[i]).setZero();
      }
      t.accumulate(base.id, gb);
      t.accumulate(rows.id, gr);
    };
  }
  return out;
}

Var Tape::select_rows(std::vector<bool> mask, Var a, Var b) {
  if (value(a).rows() != static_cast<long>(mask.size()) ||
      value(b).rows() != static_cast<long>(mask.size()))
    throw ContractViolation("select_rows: mask/row count mismatch");
  Mat v(value(a).rows(), value(a).cols());
  for (size_t i = 0; i < mask.size(); ++i)
    v.row(static_cast<int>(i)) = mask[i] ? value(a).row(static_cast<int>(i))
                                         : value(b).row(static_cast<int>(i));
  bool rg = tracked(a) || tracked(b);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, b, mask = std::move(mask), out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      Mat ga = Mat::Zero(g.rows(), g.cols());
      Mat gb = Mat::Zero(g.rows(), g.cols());
      for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) ga.row(static_cast<int>(i)) = g.row(static_cast<int>(i));
        else gb.row(static_cast<int>(i)) = g.row(static_cast<int>(i));
      }
      t.accumulate(a.id, ga);
      t.accumulate(b.id, gb);
    };
  }
  return out;
}

Var Tape::scale_rows(Var a, Var col) {
  if (value(col).cols() != 1 || value(col).rows() != value(a).rows())
    throw ContractViolation("scale_rows: col must be (rows(a), 1)");
  Mat v = value(a).array().colwise() * value(col).col(0).array();
  bool rg = tracked(a) || tracked(col);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, col, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, (g.array().colwise() * t.value(col).col(0).array()).matrix());
      t.accumulate(col.id, g.cwiseProduct(t.value(a)).rowwise().sum());
    };
  }
  return out;
}

Var Tape::concat_cols(Var a, Var b) {
  if (value(a).rows() != value(b).rows())
    throw ContractViolation("concat_cols: row count mismatch");
  Mat v(value(a).rows(), value(a).cols() + value(b).cols());
  v << value(a), value(b);
  bool rg = tracked(a) || tracked(b);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    int ca = static_cast<int>(value(a).cols());
    nodes_[out.id].backprop = [a, b, ca, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      t.accumulate(a.id, g.leftCols(ca));
      t.accumulate(b.id, g.rightCols(g.cols() - ca));
    };
  }
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractViolation("concat_rows: empty part list");
  int total = 0;
  bool rg = false;
  for (Var p : parts) {
    total += rows(p);
    rg = rg || tracked(p);
  }
  Mat v(total, value(parts[0]).cols());
  int at = 0;
  for (Var p : parts) {
    v.middleRows(at, rows(p)) = value(p);
    at += rows(p);
  }
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [parts, out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      int at2 = 0;
      for (Var p : parts) {
        int r = t.rows(p);
        t.accumulate(p.id, g.middleRows(at2, r));
        at2 += r;
      }
    };
  }
  return out;
}

Var Tape::slice_cols(Var a, int start, int n) {
  bool rg = tracked(a);
  Var out = make(value(a).middleCols(start, n), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, start, n, out](Tape& t) {
      Mat ga = Mat::Zero(t.value(a).rows(), t.value(a).cols());
      ga.middleCols(start, n) = t.grad_ref(out.id);
      t.accumulate(a.id, ga);
    };
  }
  return out;
}

Var Tape::segment_softmax(Var scores, std::vector<int> seg, int num_segments) {
  if (value(scores).cols() != 1)
    throw ContractViolation("segment_softmax: scores must be a column");
  const Eigen::VectorXd s = value(scores).col(0);
  Eigen::VectorXd mx = Eigen::VectorXd::Constant(num_segments, -std::numeric_limits<double>::infinity());
  for (size_t e = 0; e < seg.size(); ++e) mx[seg[e]] = std::max(mx[seg[e]], s[static_cast<int>(e)]);
  Eigen::VectorXd ex(s.size()), denom = Eigen::VectorXd::Zero(num_segments);
  for (size_t e = 0; e < seg.size(); ++e) {
    ex[static_cast<int>(e)] = std::exp(s[static_cast<int>(e)] - mx[seg[e]]);
    denom[seg[e]] += ex[static_cast<int>(e)];
  }
  Mat v(s.size(), 1);
  for (size_t e = 0; e < seg.size(); ++e) v(static_cast<int>(e), 0) = ex[static_cast<int>(e)] / denom[seg[e]];
  bool rg = tracked(scores);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [scores, seg = std::move(seg), num_segments, out](Tape& t) {
      const Mat& y = t.value(out);
      const Mat& g = t.grad_ref(out.id);
      Eigen::VectorXd dots = Eigen::VectorXd::Zero(num_segments);
      for (size_t e = 0; e < seg.size(); ++e)
        dots[seg[e]] += y(static_cast<int>(e), 0) * g(static_cast<int>(e), 0);
      Mat gs(y.rows(), 1);
      for (size_t e = 0; e < seg.size(); ++e)
        gs(static_cast<int>(e), 0) =
            y(static_cast<int>(e), 0) * (g(static_cast<int>(e), 0) - dots[seg[e]]);
      t.accumulate(scores.id, gs);
    };
  }
  return out;
}

Var Tape::segment_sum(Var a, std::vector<int> seg, int num_segments) {
  if (value(a).rows() != static_cast<long>(seg.size()))
    throw ContractViolation("segment_sum: seg/row count mismatch");
  Mat v = Mat::Zero(num_segments, value(a).cols());
  for (size_t e = 0; e < seg.size(); ++e) v.row(seg[e]) += value(a).row(static_cast<int>(e));
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, seg = std::move(seg), out](Tape& t) {
      const Mat& g = t.grad_ref(out.id);
      Mat ga(static_cast<int>(seg.size()), g.cols());
      for (size_t e = 0; e < seg.size(); ++e) ga.row(static_cast<int>(e)) = g.row(seg[e]);
      t.accumulate(a.id, ga);
    };
  }
  return out;
}

Var Tape::sum_all(Var a) {
  Mat v(1, 1);
  v(0, 0) = value(a).sum();
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, out](Tape& t) {
      t.accumulate(a.id, Mat::Constant(t.value(a).rows(), t.value(a).cols(),
                                       t.grad_ref(out.id)(0, 0)));
    };
  }
  return out;
}

Var Tape::mean_all(Var a) {
  double n = static_cast<double>(value(a).size());
  Mat v(1, 1);
  v(0, 0) = value(a).sum() / n;
  bool rg = tracked(a);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [a, n, out](Tape& t) {
      t.accumulate(a.id, Mat::Constant(t.value(a).rows(), t.value(a).cols(),
                                       t.grad_ref(out.id)(0, 0) / n));
    };
  }
  return out;
}

Var Tape::friction_clamp_rows(Var u, double bound) {
  if (value(u).cols() != 2) throw ContractViolation("friction_clamp_rows: expect (M,2)");
  const Mat& x = value(u);
  Mat v = x;
  std::vector<bool> over(x.rows(), false);
  for (int i = 0; i < x.rows(); ++i) {
    double r = x.row(i).norm();
    if (r > bound) {
      over[static_cast<size_t>(i)] = true;
      v.row(i) = x.row(i) * (bound / r);
      while (v.row(i).norm() > bound) v.row(i) *= bound / v.row(i).norm();
    }
  }
  bool rg = tracked(u);
  Var out = make(std::move(v), rg, {});
  if (rg) {
    nodes_[out.id].backprop = [u, bound, over = std::move(over), out](Tape& t) {
      const Mat& x2 = t.value(u);
      const Mat& g = t.grad_ref(out.id);
      Mat gu(x2.rows(), 2);
      for (int i = 0; i < x2.rows(); ++i) {
        if (!over[static_cast<size_t>(i)]) {
          gu.row(i) = g.row(i);
        } else {
          // y = bound * x / |x|: dy/dx = bound/|x| * (I - x x^T / |x|^2)
          double r = x2.row(i).norm();
          Eigen::Vector2d xv = x2.row(i).transpose();
          Eigen::Vector2d gv = g.row(i).transpose();
          Eigen::Vector2d res = (bound / r) * (gv - xv * (xv.dot(gv) / (r * r)));
          gu.row(i) = res.transpose();
        }
      }
      t.accumulate(u.id, gu);
    };
  }
  return out;
}

void Tape::backward(Var scalar_out, double seed) {
  if (value(scalar_out).rows() != 1 || value(scalar_out).cols() != 1)
    throw ContractViolation("backward: output must be scalar (1,1)");
  grad_ref(scalar_out.id)(0, 0) += seed;
  for (int i = scalar_out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || !n.grad_alloc) continue;
    if (n.backprop) n.backprop(*this);
    if (n.bound != nullptr) n.bound->grad += n.grad;
  }
}

Mat Tape::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.grad_alloc) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Parameter* ParamRegistry::add(const std::string& name, int rows, int cols) {
  storage_.push_back(Parameter{name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
  order_.push_back(&storage_.back());
  return order_.back();
}

Parameter* ParamRegistry::find(const std::string& name) {
  for (Parameter* p : order_)
    if (p->name == name) return p;
  return nullptr;
}

void ParamRegistry::zero_grads() {
  for (Parameter* p : order_) p->grad.setZero();
}

int64_t ParamRegistry::scalar_count() const {
  int64_t n = 0;
  for (const Parameter* p : order_) n += p->value.size();
  return n;
}

}  // namespace difftraj::ad
