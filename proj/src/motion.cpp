#include "difftraj/motion.hpp"

#include <cmath>

namespace difftraj::motion {

Vector2d friction_clamp(const Vector2d& u, const VehicleModelConfig& cfg) {
  double rho = u.norm();
  double bound = cfg.bound();
  if (rho <= bound) return u;
  Vector2d out = u * (bound / rho);
  // Land on or inside the disc despite rounding, so a second clamp is a
  // no-op and the bound holds exactly.
  while (out.norm() > bound) out *= bound / out.norm();
  return out;
}

Eigen::Vector4d vehicle_dynamics(const Eigen::Vector4d& state, const Vector2d& u) {
  return {state[2], state[3], u[0], u[1]};
}

PedestrianField::PedestrianField(nn::ParamRegistry& reg, const std::string& prefix, int hidden,
                                 int depth, Rng& rng)
    : hidden_(hidden), depth_(depth) {
  auto build = [&](const std::string& axis, std::vector<nn::Linear>& layers) {
    int in = 3;  // (x, y, u_axis)
    for (int d = 0; d < depth; ++d) {
      layers.emplace_back(reg, prefix + "." + axis + ".l" + std::to_string(d), in, hidden, rng);
      in = hidden;
    }
    layers.emplace_back(reg, prefix + "." + axis + ".out", in, 1, rng);
  };
  build("fx", fx_);
  build("fy", fy_);
}

ad::Var PedestrianField::axis_field(ad::Tape& t, ad::Var input,
                                    const std::vector<nn::Linear>& layers) const {
  ad::Var h = input;
  for (size_t i = 0; i + 1 < layers.size(); ++i) h = t.tanh(layers[i].forward(t, h));
  return layers.back().forward(t, h);
}

ad::Var PedestrianField::derivative(ad::Tape& t, ad::Var states, ad::Var controls) const {
  if (fx_.empty()) throw ContractViolation("PedestrianField: uninitialized");
  ad::Var ux = t.slice_cols(controls, 0, 1);
  ad::Var uy = t.slice_cols(controls, 1, 1);
  ad::Var dx = axis_field(t, t.concat_cols(states, ux), fx_);
  ad::Var dy = axis_field(t, t.concat_cols(states, uy), fy_);
  return t.concat_cols(dx, dy);
}

Vector2d PedestrianField::derivative(const Vector2d& state, const Vector2d& u) const {
  ad::Tape t;
  Mat s(1, 2), c(1, 2);
  s << state.x(), state.y();
  c << u.x(), u.y();
  ad::Var out = derivative(t, t.constant(s), t.constant(c));
  return t.value(out).row(0).transpose();
}

Vector2d pedestrian_dynamics(const Vector2d& state, const Vector2d& u,
                             const PedestrianField& params) {
  return params.derivative(state, u);
}

std::vector<VectorXd> heun_rollout(const Dynamics& f, const VectorXd& x_init, const Mat& controls,
                                   double dt) {
  if (dt <= 0.0) throw ContractViolation("heun: dt must be > 0");
  if (controls.cols() != 2) throw ContractViolation("heun: controls must be (N, 2)");
  std::vector<VectorXd> states;
  states.reserve(static_cast<size_t>(controls.rows()));
  VectorXd x = x_init;
  for (long k = 0; k < controls.rows(); ++k) {
    Vector2d u = controls.row(k).transpose();
    VectorXd k1 = f(x, u);
    VectorXd predictor = x + dt * k1;
    VectorXd k2 = f(predictor, u);
    if (!k1.allFinite() || !k2.allFinite())
      throw IntegrationError("heun: non-finite derivative at step " + std::to_string(k));
    x = x + 0.5 * dt * (k1 + k2);
    states.push_back(x);
  }
  return states;
}

Mat heun_integrate(const Dynamics& f, const VectorXd& x_init, const Mat& controls, double dt) {
  auto states = heun_rollout(f, x_init, controls, dt);
  Mat positions(static_cast<long>(states.size()), 2);
  for (size_t k = 0; k < states.size(); ++k) positions.row(static_cast<long>(k)) = states[k].head(2).transpose();
  return positions;
}

std::vector<ad::Var> heun_rollout_vehicle(ad::Tape& t, const Mat& init_states,
                                          const std::vector<ad::Var>& controls, double dt) {
  if (init_states.cols() != 4) throw ContractViolation("vehicle rollout: init must be (n, 4)");
  ad::Var pos = t.constant(init_states.leftCols(2));
  ad::Var vel = t.constant(init_states.rightCols(2));
  std::vector<ad::Var> positions;
  positions.reserve(controls.size());
  for (const ad::Var& u : controls) {
    // Heun on the point mass: k1 = (v, u), k2 = (v + dt u, u).
    ad::Var vel_next = t.add(vel, t.scale(u, dt));
    pos = t.add(pos, t.scale(t.add(vel, vel_next), 0.5 * dt));
    vel = vel_next;
    positions.push_back(pos);
  }
  return positions;
}

std::vector<ad::Var> heun_rollout_pedestrian(ad::Tape& t, const PedestrianField& field,
                                             const Mat& init_positions,
                                             const std::vector<ad::Var>& controls, double dt) {
  if (init_positions.cols() != 2) throw ContractViolation("pedestrian rollout: init must be (n, 2)");
  ad::Var pos = t.constant(init_positions);
  std::vector<ad::Var> positions;
  positions.reserve(controls.size());
  for (const ad::Var& u : controls) {
    ad::Var k1 = field.derivative(t, pos, u);
    ad::Var predictor = t.add(pos, t.scale(k1, dt));
    ad::Var k2 = field.derivative(t, predictor, u);
    pos = t.add(pos, t.scale(t.add(k1, k2), 0.5 * dt));
    positions.push_back(pos);
  }
  return positions;
}

}  // namespace difftraj::motion
