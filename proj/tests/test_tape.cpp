#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Core>
#include <cmath>
#include <functional>

#include "difftraj/common.hpp"
#include "difftraj/tape.hpp"

using difftraj::Rng;
using difftraj::ad::Mat;
using difftraj::ad::Tape;
using difftraj::ad::Var;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Central finite differences of a scalar function of one matrix input,
// compared against the tape gradient in vector-norm relative error.
double grad_check(const Mat& x0, const std::function<double(const Mat&)>& f,
                  const Mat& analytic, double h = 1e-6) {
  Mat fd(x0.rows(), x0.cols());
  for (int i = 0; i < x0.rows(); ++i) {
    for (int j = 0; j < x0.cols(); ++j) {
      Mat xp = x0, xm = x0;
      xp(i, j) += h;
      xm(i, j) -= h;
      fd(i, j) = (f(xp) - f(xm)) / (2.0 * h);
    }
  }
  double denom = std::max({fd.norm(), analytic.norm(), 1e-12});
  return (fd - analytic).norm() / denom;
}

}  // namespace

TEST_CASE("elementwise ops and matmul gradients match finite differences") {
  Rng rng(1);
  Mat a0 = random_mat(rng, 3, 4);
  Mat b0 = random_mat(rng, 4, 2);

  auto loss = [&](const Mat& a, const Mat& b) {
    Tape t;
    Var va = t.input(a), vb = t.input(b);
    Var y = t.matmul(t.silu(va), vb);
    Var l = t.mean_all(t.mul(y, y));
    return t.value(l)(0, 0);
  };

  Tape t;
  Var va = t.input(a0), vb = t.input(b0);
  Var y = t.matmul(t.silu(va), vb);
  Var l = t.mean_all(t.mul(y, y));
  t.backward(l);

  CHECK(grad_check(a0, [&](const Mat& a) { return loss(a, b0); }, t.grad_of(va)) < 1e-7);
  CHECK(grad_check(b0, [&](const Mat& b) { return loss(a0, b); }, t.grad_of(vb)) < 1e-7);
}

TEST_CASE("activation gradients") {
  Rng rng(2);
  Mat x0 = random_mat(rng, 5, 3);

  auto run = [&](auto op) {
    auto loss = [&](const Mat& x) {
      Tape t;
      Var v = t.input(x);
      return t.value(t.sum_all(op(t, v)))(0, 0);
    };
    Tape t;
    Var v = t.input(x0);
    Var l = t.sum_all(op(t, v));
    t.backward(l);
    return grad_check(x0, loss, t.grad_of(v));
  };

  CHECK(run([](Tape& t, Var v) { return t.sigmoid(v); }) < 1e-7);
  CHECK(run([](Tape& t, Var v) { return t.tanh(v); }) < 1e-7);
  CHECK(run([](Tape& t, Var v) { return t.leaky_relu(v, 0.2); }) < 1e-5);

  // Plain sums of softmax rows are constant, so weight the entries.
  Mat mix = random_mat(rng, 5, 3);
  CHECK(run([&](Tape& t, Var v) { return t.mul(t.softmax_rows(v), t.constant(mix)); }) < 1e-6);
}

TEST_CASE("gather, update, select and segment ops") {
  Rng rng(3);
  Mat x0 = random_mat(rng, 4, 3);
  std::vector<int> idx{2, 0, 2, 3, 1};
  std::vector<int> seg{0, 0, 1, 1, 1};

  auto loss = [&](const Mat& x) {
    Tape t;
    Var v = t.input(x);
    Var g = t.gather_rows(v, idx);
    Var s = t.segment_sum(t.mul(g, g), seg, 2);
    return t.value(t.sum_all(s))(0, 0);
  };
  Tape t;
  Var v = t.input(x0);
  Var g = t.gather_rows(v, idx);
  Var s = t.segment_sum(t.mul(g, g), seg, 2);
  Var l = t.sum_all(s);
  t.backward(l);
  CHECK(grad_check(x0, loss, t.grad_of(v)) < 1e-7);
}

TEST_CASE("segment softmax is a per-segment distribution and differentiable") {
  Rng rng(4);
  Mat s0 = random_mat(rng, 6, 1);
  std::vector<int> seg{0, 0, 0, 1, 1, 2};

  Tape t;
  Var v = t.input(s0);
  Var w = t.segment_softmax(v, seg, 3);
  Eigen::Vector3d sums = Eigen::Vector3d::Zero();
  for (int e = 0; e < 6; ++e) {
    CHECK(t.value(w)(e, 0) >= 0.0);
    sums[seg[static_cast<size_t>(e)]] += t.value(w)(e, 0);
  }
  for (int k = 0; k < 3; ++k) CHECK(sums[k] == doctest::Approx(1.0).epsilon(1e-12));

  Mat mix = random_mat(rng, 6, 1);
  auto loss = [&](const Mat& s) {
    Tape t2;
    Var v2 = t2.input(s);
    Var w2 = t2.segment_softmax(v2, seg, 3);
    return t2.value(t2.sum_all(t2.mul(w2, t2.constant(mix))))(0, 0);
  };
  Tape t3;
  Var v3 = t3.input(s0);
  Var w3 = t3.segment_softmax(v3, seg, 3);
  Var l3 = t3.sum_all(t3.mul(w3, t3.constant(mix)));
  t3.backward(l3);
  CHECK(grad_check(s0, loss, t3.grad_of(v3)) < 1e-7);
}

TEST_CASE("friction clamp rows: value and gradient") {
  Mat u(3, 2);
  u << 1.0, 1.0, 6.0, 6.0, 10.0, 0.0;
  double bound = 0.7 * 9.81;

  Tape t;
  Var v = t.input(u);
  Var c = t.friction_clamp_rows(v, bound);
  CHECK(t.value(c).row(0).isApprox(u.row(0)));
  CHECK(t.value(c).row(1).norm() == doctest::Approx(bound).epsilon(1e-12));
  CHECK(t.value(c)(2, 0) == doctest::Approx(bound).epsilon(1e-12));
  CHECK(t.value(c)(2, 1) == 0.0);

  Mat mix(3, 2);
  mix << 0.3, -1.2, 0.7, 0.1, -0.4, 0.9;
  auto loss = [&](const Mat& x) {
    Tape t2;
    Var v2 = t2.input(x);
    Var c2 = t2.friction_clamp_rows(v2, bound);
    return t2.value(t2.sum_all(t2.mul(c2, t2.constant(mix))))(0, 0);
  };
  Var l = t.sum_all(t.mul(c, t.constant(mix)));
  t.backward(l);
  CHECK(grad_check(u, loss, t.grad_of(v)) < 1e-6);
}

TEST_CASE("rows_update and concat paths") {
  Rng rng(5);
  Mat base0 = random_mat(rng, 5, 2);
  Mat rows0 = random_mat(rng, 2, 2);
  std::vector<int> idx{1, 3};

  auto loss = [&](const Mat& base, const Mat& rows) {
    Tape t;
    Var vb = t.input(base), vr = t.input(rows);
    Var u = t.rows_update(vb, vr, idx);
    Var cc = t.concat_cols(u, t.scale(u, 2.0));
    return t.value(t.mean_all(t.mul(cc, cc)))(0, 0);
  };
  Tape t;
  Var vb = t.input(base0), vr = t.input(rows0);
  Var u = t.rows_update(vb, vr, idx);
  Var cc = t.concat_cols(u, t.scale(u, 2.0));
  Var l = t.mean_all(t.mul(cc, cc));
  t.backward(l);
  CHECK(grad_check(base0, [&](const Mat& b) { return loss(b, rows0); }, t.grad_of(vb)) < 1e-7);
  CHECK(grad_check(rows0, [&](const Mat& r) { return loss(base0, r); }, t.grad_of(vr)) < 1e-7);
  // updated rows of base receive no gradient
  CHECK(t.grad_of(vb).row(1).norm() == 0.0);
  CHECK(t.grad_of(vb).row(3).norm() == 0.0);
}

TEST_CASE("parameter binding accumulates into registry grads") {
  difftraj::ad::ParamRegistry reg;
  difftraj::ad::Parameter* w = reg.add("w", 2, 2);
  w->value << 1.0, 2.0, 3.0, 4.0;

  Tape t;
  Var vw = t.param(*w);
  Var l = t.sum_all(t.mul(vw, vw));
  t.backward(l);
  CHECK(w->grad.isApprox(2.0 * w->value));

  // second backward accumulates again
  Tape t2;
  Var vw2 = t2.param(*w);
  t2.backward(t2.sum_all(vw2), 0.5);
  CHECK(w->grad(0, 0) == doctest::Approx(2.0 + 0.5));
  reg.zero_grads();
  CHECK(w->grad.norm() == 0.0);
}
