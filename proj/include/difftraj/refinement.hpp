#pragma once

#include <Eigen/Core>

#include "difftraj/common.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::refine {

using Eigen::Vector2d;
using Mat = Eigen::MatrixXd;

struct PursuitConfig {
  double lookahead_base = 1.5;  // l (m)
  double speed_gain = 0.5;      // a (s)
  // Denominator exponent of the curvature law: 1 divides by l_v, 2 by
  // l_v^2 (the classical gain). Both are available; 1 is the default.
  int curvature_exponent = 1;
};

struct UnicycleState {
  double x = 0, y = 0;
  double psi = 0;    // yaw in (-pi, pi]
  double v_cmd = 0;  // commanded speed from the reference
};

// l_v = l + a |v|.
double lookahead(double v, const PursuitConfig& cfg = {});

// Curvature of the arc from the state to the pursuit point:
// c = 2 p / l_v^exp with p the lateral offset of the point in the body
// frame. Throws TrackingError on a zero-distance reference point.
double pursuit_curvature(const UnicycleState& state, const Vector2d& ref_point,
                         const PursuitConfig& cfg = {});

// Closed-loop refinement: tracks the (N, 2) reference with a
// curvature-input unicycle, speed per step implied by consecutive
// reference points, pursuit point chosen by cumulative arc length.
Mat refine_trajectory(const Mat& reference, const scene::AgentState& init,
                      const PursuitConfig& cfg = {}, double dt = kDt);

}  // namespace difftraj::refine
