#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "difftraj/common.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::diffusion {

using Mat = Eigen::MatrixXd;

// Per-agent sequence of horizon positions, stored agent-major:
// row(a * horizon + k) is agent a at future step k+1. Represents the
// latent x_t at any diffusion time (t = 0 is clean data).
struct TrajectoryArray {
  int num_agents = 0;
  int horizon = 0;
  Mat xy;  // (num_agents * horizon, 2)

  TrajectoryArray() = default;
  TrajectoryArray(int agents, int horizon_);

  Eigen::Vector2d at(int agent, int step) const { return xy.row(agent * horizon + step); }
  Mat agent_block(int agent) const { return xy.middleRows(agent * horizon, horizon); }
  void set_agent_block(int agent, const Mat& block) {
    xy.middleRows(agent * horizon, horizon) = block;
  }
  bool same_shape(const TrajectoryArray& o) const {
    return num_agents == o.num_agents && horizon == o.horizon;
  }
};

// Anchor built from the agent states at the prediction instant,
// constant along the horizon axis.
TrajectoryArray make_anchor(const std::vector<scene::AgentState>& init_states, int horizon);
TrajectoryArray ground_truth_array(const scene::Sample& sample);

enum class SamplerKind { kDdpm, kDdim, kEdm };

SamplerKind sampler_from_string(const std::string& s);
std::string to_string(SamplerKind s);

// Noise schedule and reverse-grid configuration. The schedule function
// is the linear gamma(t) = 1 - t; the reverse grid warps [gamma_max,
// gamma_min] with exponent rho and always ends at exactly 0.
struct DiffusionSchedule {
  double gamma_max = 1.0;
  double gamma_min = 1e-3;
  int num_steps = 2;  // T
  double rho = 3.0;
  SamplerKind sampler = SamplerKind::kEdm;
  double eta = 1.0;  // DDIM stochasticity; 1 recovers DDPM

  double gamma(double t) const;
};

// alpha-bar / alpha / beta bookkeeping for one reverse transition.
struct TransitionQuantities {
  double alpha_bar_t;     // gamma(t)
  double alpha_bar_prev;  // gamma(t_next)
  double alpha_t;         // ratio
  double beta_t;          // 1 - alpha_t
};

TransitionQuantities transition_quantities(const DiffusionSchedule& sched, double t,
                                           double t_next);

// Times t_0 > t_1 > ... > t_T = 0.
std::vector<double> reverse_grid(const DiffusionSchedule& sched);

// x_t = sqrt(g) x0 + (1 - sqrt(g)) anchor + sqrt(1 - g) noise.
TrajectoryArray forward_diffuse(const TrajectoryArray& x0, const TrajectoryArray& anchor,
                                double t, const Mat& noise, const DiffusionSchedule& sched = {});

// Shift that reduces the anchored process to the standard one:
// y_t = x_t - (1 - sqrt(gamma(t))) anchor, and its inverse.
TrajectoryArray center(const TrajectoryArray& x_t, const TrajectoryArray& anchor, double t,
                       const DiffusionSchedule& sched = {});
TrajectoryArray uncenter(const TrajectoryArray& y_t, const TrajectoryArray& anchor, double t,
                         const DiffusionSchedule& sched = {});

// Posterior/transition moments in centered coordinates. Mean has the
// latent shape; the variance is isotropic.
struct TransitionMoments {
  Mat mean;
  double variance = 0.0;
};

TransitionMoments ddpm_moments(const Mat& y_t, const Mat& y0_hat, const DiffusionSchedule& sched,
                               double t, double t_next);
TransitionMoments ddim_moments(const Mat& y_t, const Mat& y0_hat, const DiffusionSchedule& sched,
                               double t, double t_next, double eta);

TrajectoryArray ddpm_step(const TrajectoryArray& x_t, const TrajectoryArray& x0_hat,
                          const TrajectoryArray& anchor, double t, double t_next,
                          const DiffusionSchedule& sched, Rng& rng);
TrajectoryArray ddim_step(const TrajectoryArray& x_t, const TrajectoryArray& x0_hat,
                          const TrajectoryArray& anchor, double t, double t_next, double eta,
                          const DiffusionSchedule& sched, Rng& rng);
// Deterministic 1st-order probability-flow step; identical to DDIM with
// eta = 0 in this parameterization and exposed as its own sampler name.
TrajectoryArray edm_step(const TrajectoryArray& x_t, const TrajectoryArray& x0_hat,
                         const TrajectoryArray& anchor, double t, double t_next,
                         const DiffusionSchedule& sched);

// Clean-signal denoiser interface. `condition` is either the sample's
// own condition or a connectivity-stripped copy of it.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual TrajectoryArray predict_clean(const TrajectoryArray& x_t, double t,
                                        const scene::Sample& sample,
                                        const scene::Condition& condition) const = 0;
};

// x0_hat = (1 - w) M(x_t, t, c') + w M(x_t, t, c); the unused branch is
// skipped at the endpoints.
TrajectoryArray guided_denoise(const Denoiser& model, const TrajectoryArray& x_t, double t,
                               const scene::Sample& sample, const scene::Condition& full,
                               const scene::Condition& stripped, double w);

struct SampleOptions {
  int n_samples = 1;
  uint64_t seed = 0;
  double guidance_w = 1.0;
};

// Reverse-process sampling: initialize from N(anchor, I) at the first
// grid time, then alternate denoising and the configured transition
// rule down the grid. Each sample index owns a derived random stream.
std::vector<TrajectoryArray> sample_trajectories(const Denoiser& model,
                                                 const scene::Sample& sample,
                                                 const TrajectoryArray& anchor,
                                                 const DiffusionSchedule& sched,
                                                 const SampleOptions& opts);

// Reference training objective evaluated through the public denoiser
// interface: per sample draw t ~ U(0,1) and unit noise, corrupt the
// ground truth, optionally swap in the stripped condition, and average
// squared clean-signal error. Used as an independent oracle for the
// differentiable loss path.
double training_loss_reference(const Denoiser& model, const std::vector<scene::Sample>& batch,
                               double p_drop, const DiffusionSchedule& sched, Rng& rng);

Mat standard_normal(Rng& rng, long rows, long cols);

}  // namespace difftraj::diffusion
