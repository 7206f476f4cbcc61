#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "difftraj/common.hpp"
#include "difftraj/nn.hpp"

namespace difftraj::motion {

using Eigen::Vector2d;
using Eigen::VectorXd;
using ad::Mat;

struct VehicleModelConfig {
  double mu = 0.7;   // road adhesion
  double g = 9.81;   // m/s^2

  double bound() const { return mu * g; }
};

// Saturating magnitude clamp onto the friction disc |u| <= mu*g.
// Idempotent; the input direction is preserved exactly.
Vector2d friction_clamp(const Vector2d& u, const VehicleModelConfig& cfg = {});

// Point-mass vehicle: state (x, y, vx, vy), inputs are accelerations.
Eigen::Vector4d vehicle_dynamics(const Eigen::Vector4d& state, const Vector2d& u);

// Decoupled pedestrian vector fields xdot = f_x(state, u_x),
// ydot = f_y(state, u_y). Each field is a small feed-forward map with
// bounded (tanh) hidden activations; state is (x, y).
class PedestrianField {
 public:
  PedestrianField() = default;
  PedestrianField(nn::ParamRegistry& reg, const std::string& prefix, int hidden, int depth,
                  Rng& rng);

  // Tape path over a batch of agents: states (n, 2), controls (n, 2).
  ad::Var derivative(ad::Tape& t, ad::Var states, ad::Var controls) const;
  // Value path for a single agent.
  Vector2d derivative(const Vector2d& state, const Vector2d& u) const;

  int hidden_dim() const { return hidden_; }
  int depth() const { return depth_; }

 private:
  ad::Var axis_field(ad::Tape& t, ad::Var input, const std::vector<nn::Linear>& layers) const;
  std::vector<nn::Linear> fx_, fy_;
  int hidden_ = 0, depth_ = 0;
};

Vector2d pedestrian_dynamics(const Vector2d& state, const Vector2d& u,
                             const PedestrianField& params);

// Generic explicit trapezoidal (Heun) rollout with zero-order-held
// controls: both slope evaluations of step k use controls.row(k).
// Returns all post-step states. Throws IntegrationError (naming the
// step) if a derivative goes non-finite.
using Dynamics = std::function<VectorXd(const VectorXd& state, const Vector2d& u)>;

std::vector<VectorXd> heun_rollout(const Dynamics& f, const VectorXd& x_init, const Mat& controls,
                                   double dt);

// Position components (first two state entries) of the rollout: the
// (N, 2) trajectory the decoders output.
Mat heun_integrate(const Dynamics& f, const VectorXd& x_init, const Mat& controls, double dt = kDt);

// Tape-side Heun rollouts used inside the learnable decoder. Controls
// are a list of per-step (n_agents, 2) vars; the result is the list of
// per-step positions in the same layout.
std::vector<ad::Var> heun_rollout_vehicle(ad::Tape& t, const Mat& init_states,
                                          const std::vector<ad::Var>& controls, double dt);
std::vector<ad::Var> heun_rollout_pedestrian(ad::Tape& t, const PedestrianField& field,
                                             const Mat& init_positions,
                                             const std::vector<ad::Var>& controls, double dt);

}  // namespace difftraj::motion
