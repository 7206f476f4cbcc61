#include "difftraj/refinement.hpp"

#include <cmath>

#include "difftraj/motion.hpp"

namespace difftraj::refine {

double lookahead(double v, const PursuitConfig& cfg) {
  if (cfg.lookahead_base <= 0.0 || cfg.speed_gain < 0.0)
    throw ContractViolation("lookahead: invalid pursuit config");
  return cfg.lookahead_base + cfg.speed_gain * std::abs(v);
}

double pursuit_curvature(const UnicycleState& state, const Vector2d& ref_point,
                         const PursuitConfig& cfg) {
  Vector2d diff = ref_point - Vector2d(state.x, state.y);
  if (diff.norm() < 1e-12)
    throw TrackingError("pursuit_curvature: reference point coincides with the vehicle");
  // Lateral offset of the pursuit point in the body frame, left
  // positive; equivariant under rigid transforms.
  double p = diff.y() * std::cos(state.psi) - diff.x() * std::sin(state.psi);
  double l_v = lookahead(state.v_cmd, cfg);
  double denom = cfg.curvature_exponent == 2 ? l_v * l_v : l_v;
  return 2.0 * p / denom;
}

namespace {

// First reference index at cumulative arc length >= l_v ahead of
// `progress`; the last point when the reference is too short.
int pursuit_index(const Mat& reference, int progress, double l_v) {
  double arc = 0.0;
  for (int j = progress; j + 1 < reference.rows(); ++j) {
    arc += (reference.row(j + 1) - reference.row(j)).norm();
    if (arc >= l_v) return j + 1;
  }
  return static_cast<int>(reference.rows()) - 1;
}

}  // namespace

Mat refine_trajectory(const Mat& reference, const scene::AgentState& init,
                      const PursuitConfig& cfg, double dt) {
  if (reference.rows() < 2) throw ContractViolation("refine_trajectory: reference too short");
  if (reference.cols() != 2) throw ContractViolation("refine_trajectory: reference must be (N, 2)");

  const int n = static_cast<int>(reference.rows());
  UnicycleState state{init.x, init.y, init.psi, 0.0};
  Mat out(n, 2);
  int progress = 0;

  for (int k = 0; k < n; ++k) {
    Vector2d prev = k == 0 ? init.position() : reference.row(k - 1).transpose();
    state.v_cmd = (reference.row(k).transpose() - prev).norm() / dt;
    if (state.v_cmd < 1e-12) {
      out.row(k) << state.x, state.y;
      continue;
    }

    // advance the progress index to the nearest reference point
    Vector2d pos(state.x, state.y);
    double best = (reference.row(progress).transpose() - pos).norm();
    for (int j = progress + 1; j < n; ++j) {
      double d = (reference.row(j).transpose() - pos).norm();
      if (d <= best) {
        best = d;
        progress = j;
      } else {
        break;
      }
    }

    double l_v = lookahead(state.v_cmd, cfg);
    Vector2d target = reference.row(pursuit_index(reference, progress, l_v)).transpose();
    double c = pursuit_curvature(state, target, cfg);

    motion::Dynamics unicycle = [](const Eigen::VectorXd& s, const Vector2d& u) {
      Eigen::VectorXd d(3);
      d << u[0] * std::cos(s[2]), u[0] * std::sin(s[2]), u[0] * u[1];
      return d;
    };
    Eigen::VectorXd s(3);
    s << state.x, state.y, state.psi;
    Mat control(1, 2);
    control << state.v_cmd, c;
    Eigen::VectorXd next = motion::heun_rollout(unicycle, s, control, dt).back();
    state.x = next[0];
    state.y = next[1];
    state.psi = wrap_angle(next[2]);
    out.row(k) << state.x, state.y;
  }
  return out;
}

}  // namespace difftraj::refine
