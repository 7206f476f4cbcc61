#include "difftraj/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace difftraj::diffusion {

TrajectoryArray::TrajectoryArray(int agents, int horizon_)
    : num_agents(agents), horizon(horizon_), xy(Mat::Zero(agents * horizon_, 2)) {}

TrajectoryArray make_anchor(const std::vector<scene::AgentState>& init_states, int horizon) {
  TrajectoryArray a(static_cast<int>(init_states.size()), horizon);
  for (size_t i = 0; i < init_states.size(); ++i)
    for (int k = 0; k < horizon; ++k)
      a.xy.row(static_cast<long>(i) * horizon + k) = init_states[i].position().transpose();
  return a;
}

TrajectoryArray ground_truth_array(const scene::Sample& sample) {
  int horizon = static_cast<int>(sample.future.empty() ? 0 : sample.future[0].rows());
  TrajectoryArray x0(sample.num_targets(), horizon);
  for (int a = 0; a < sample.num_targets(); ++a) x0.set_agent_block(a, sample.future[static_cast<size_t>(a)]);
  return x0;
}

SamplerKind sampler_from_string(const std::string& s) {
  if (s == "ddpm") return SamplerKind::kDdpm;
  if (s == "ddim") return SamplerKind::kDdim;
  if (s == "edm") return SamplerKind::kEdm;
  throw ConfigError("unknown sampler '" + s + "' (expected ddpm|ddim|edm)");
}

std::string to_string(SamplerKind s) {
  switch (s) {
    case SamplerKind::kDdpm: return "ddpm";
    case SamplerKind::kDdim: return "ddim";
    case SamplerKind::kEdm: return "edm";
  }
  return "?";
}

double DiffusionSchedule::gamma(double t) const {
  if (t < 0.0 || t > 1.0) throw ContractViolation("gamma: t outside [0, 1]");
  return 1.0 - t;
}

TransitionQuantities transition_quantities(const DiffusionSchedule& sched, double t,
                                           double t_next) {
  if (!(t > t_next)) throw ContractViolation("transition: requires t > t_next");
  TransitionQuantities q;
  q.alpha_bar_t = sched.gamma(t);
  q.alpha_bar_prev = sched.gamma(t_next);
  if (q.alpha_bar_t >= 1.0)
    throw ContractViolation("transition: alpha_bar(t) = 1, nothing to denoise");
  q.alpha_t = q.alpha_bar_t / q.alpha_bar_prev;
  q.beta_t = 1.0 - q.alpha_t;
  return q;
}

std::vector<double> reverse_grid(const DiffusionSchedule& sched) {
  if (sched.num_steps < 1) throw ContractViolation("reverse_grid: T must be >= 1");
  if (sched.gamma_min >= sched.gamma_max)
    throw ConfigError("reverse_grid: gamma_min must be < gamma_max");
  if (sched.gamma_min <= 0.0) throw ConfigError("reverse_grid: gamma_min must be > 0");

  const int T = sched.num_steps;
  std::vector<double> grid(static_cast<size_t>(T) + 1);
  double lo = std::pow(sched.gamma_min, 1.0 / sched.rho);
  double hi = std::pow(sched.gamma_max, 1.0 / sched.rho);
  for (int i = 0; i < T; ++i) {
    // Endpoints are pinned so the grid starts and turns exactly at the
    // configured values.
    if (i == 0) grid[0] = sched.gamma_max;
    else if (i == T - 1) grid[static_cast<size_t>(i)] = sched.gamma_min;
    else {
      double u = static_cast<double>(i) / (T - 1);
      grid[static_cast<size_t>(i)] = std::pow(hi + u * (lo - hi), sched.rho);
    }
  }
  grid[static_cast<size_t>(T)] = 0.0;
  for (size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] < grid[i - 1])) throw ConfigError("reverse_grid: grid not strictly decreasing");
  return grid;
}

Mat standard_normal(Rng& rng, long rows, long cols) {
  Mat m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

TrajectoryArray forward_diffuse(const TrajectoryArray& x0, const TrajectoryArray& anchor,
                                double t, const Mat& noise, const DiffusionSchedule& sched) {
  if (!x0.same_shape(anchor)) throw ContractViolation("forward_diffuse: shape mismatch");
  if (noise.rows() != x0.xy.rows() || noise.cols() != x0.xy.cols())
    throw ContractViolation("forward_diffuse: noise shape mismatch");
  double g = sched.gamma(t);
  double sg = std::sqrt(g);
  TrajectoryArray out = x0;
  out.xy = sg * x0.xy + (1.0 - sg) * anchor.xy + std::sqrt(1.0 - g) * noise;
  return out;
}

TrajectoryArray center(const TrajectoryArray& x_t, const TrajectoryArray& anchor, double t,
                       const DiffusionSchedule& sched) {
  if (!x_t.same_shape(anchor)) throw ContractViolation("center: shape mismatch");
  double shift = 1.0 - std::sqrt(sched.gamma(t));
  TrajectoryArray out = x_t;
  out.xy = x_t.xy - shift * anchor.xy;
  return out;
}

TrajectoryArray uncenter(const TrajectoryArray& y_t, const TrajectoryArray& anchor, double t,
                         const DiffusionSchedule& sched) {
  if (!y_t.same_shape(anchor)) throw ContractViolation("uncenter: shape mismatch");
  double shift = 1.0 - std::sqrt(sched.gamma(t));
  TrajectoryArray out = y_t;
  out.xy = y_t.xy + shift * anchor.xy;
  return out;
}

TransitionMoments ddpm_moments(const Mat& y_t, const Mat& y0_hat, const DiffusionSchedule& sched,
                               double t, double t_next) {
  TransitionQuantities q = transition_quantities(sched, t, t_next);
  TransitionMoments m;
  m.mean = (std::sqrt(q.alpha_bar_prev) * q.beta_t / (1.0 - q.alpha_bar_t)) * y0_hat +
           (std::sqrt(q.alpha_t) * (1.0 - q.alpha_bar_prev) / (1.0 - q.alpha_bar_t)) * y_t;
  m.variance = (1.0 - q.alpha_bar_prev) / (1.0 - q.alpha_bar_t) * q.beta_t;
  return m;
}

TransitionMoments ddim_moments(const Mat& y_t, const Mat& y0_hat, const DiffusionSchedule& sched,
                               double t, double t_next, double eta) {
  if (eta < 0.0 || eta > 1.0) throw ContractViolation("ddim: eta outside [0, 1]");
  TransitionQuantities q = transition_quantities(sched, t, t_next);
  TransitionMoments m;
  m.variance = eta * eta * (1.0 - q.alpha_bar_prev) / (1.0 - q.alpha_bar_t) *
               (1.0 - q.alpha_bar_t / q.alpha_bar_prev);
  double dir = std::sqrt(std::max(0.0, 1.0 - q.alpha_bar_prev - m.variance));
  m.mean = std::sqrt(q.alpha_bar_prev) * y0_hat +
           dir * (y_t - std::sqrt(q.alpha_bar_t) * y0_hat) / std::sqrt(1.0 - q.alpha_bar_t);
  return m;
}

namespace {

TrajectoryArray apply_moments(const TransitionMoments& m, const TrajectoryArray& shape_like,
                              const TrajectoryArray& anchor, double t_next,
                              const DiffusionSchedule& sched, Rng* rng) {
  TrajectoryArray y_next = shape_like;
  y_next.xy = m.mean;
  if (m.variance > 0.0) {
    if (rng == nullptr) throw ContractViolation("stochastic transition needs an rng");
    y_next.xy += std::sqrt(m.variance) * standard_normal(*rng, m.mean.rows(), m.mean.cols());
  }
  return uncenter(y_next, anchor, t_next, sched);
}

}  // namespace

TrajectoryArray ddpm_step(const TrajectoryArray& x_t, const TrajectoryArray& x0_hat,
                          const TrajectoryArray& anchor, double t, double t_next,
                          const DiffusionSchedule& sched, Rng& rng) {
  TrajectoryArray y_t = center(x_t, anchor, t, sched);
  TransitionMoments m = ddpm_moments(y_t.xy, x0_hat.xy, sched, t, t_next);
  return apply_moments(m, x_t, anchor, t_next, sched, &rng);
}

TrajectoryArray ddim_step(const TrajectoryArray& x_t, const TrajectoryArray& x0_hat,
                          const TrajectoryArray& anchor, double t, double t_next, double eta,
                          const DiffusionSchedule& sched, Rng& rng) {
  TrajectoryArray y_t = center(x_t, anchor, t, sched);
  TransitionMoments m = ddim_moments(y_t.xy, x0_hat.xy, sched, t, t_next, eta);
  return apply_moments(m, x_t, anchor, t_next, sched, &rng);
}

TrajectoryArray edm_step(const TrajectoryArray& x_t, const TrajectoryArray& x0_hat,
                         const TrajectoryArray& anchor, double t, double t_next,
                         const DiffusionSchedule& sched) {
  TrajectoryArray y_t = center(x_t, anchor, t, sched);
  TransitionMoments m = ddim_moments(y_t.xy, x0_hat.xy, sched, t, t_next, 0.0);
  return apply_moments(m, x_t, anchor, t_next, sched, nullptr);
}

TrajectoryArray guided_denoise(const Denoiser& model, const TrajectoryArray& x_t, double t,
                               const scene::Sample& sample, const scene::Condition& full,
                               const scene::Condition& stripped, double w) {
  if (w < 0.0 || w > 1.0) throw ContractViolation("guided_denoise: w outside [0, 1]");
  if (w == 1.0) return model.predict_clean(x_t, t, sample, full);
  if (w == 0.0) return model.predict_clean(x_t, t, sample, stripped);
  TrajectoryArray cond = model.predict_clean(x_t, t, sample, full);
  TrajectoryArray uncond = model.predict_clean(x_t, t, sample, stripped);
  TrajectoryArray out = cond;
  out.xy = (1.0 - w) * uncond.xy + w * cond.xy;
  return out;
}

std::vector<TrajectoryArray> sample_trajectories(const Denoiser& model,
                                                 const scene::Sample& sample,
                                                 const TrajectoryArray& anchor,
                                                 const DiffusionSchedule& sched,
                                                 const SampleOptions& opts) {
  if (opts.n_samples < 1) throw ContractViolation("sample_trajectories: n_samples must be >= 1");
  std::vector<double> grid = reverse_grid(sched);
  scene::Condition stripped;
  bool need_stripped = opts.guidance_w < 1.0;
  if (need_stripped) stripped = scene::strip_to_self_loops(sample.condition);

  std::vector<TrajectoryArray> out;
  out.reserve(static_cast<size_t>(opts.n_samples));
  for (int s = 0; s < opts.n_samples; ++s) {
    Rng rng = Rng::derive(opts.seed, static_cast<uint64_t>(s));
    TrajectoryArray x = anchor;
    x.xy = anchor.xy + standard_normal(rng, anchor.xy.rows(), anchor.xy.cols());
    for (size_t i = 0; i + 1 < grid.size(); ++i) {
      double t = grid[i], t_next = grid[i + 1];
      TrajectoryArray x0_hat =
          guided_denoise(model, x, t, sample, sample.condition,
                         need_stripped ? stripped : sample.condition, opts.guidance_w);
      switch (sched.sampler) {
        case SamplerKind::kDdpm:
          x = ddpm_step(x, x0_hat, anchor, t, t_next, sched, rng);
          break;
        case SamplerKind::kDdim:
          x = ddim_step(x, x0_hat, anchor, t, t_next, sched.eta, sched, rng);
          break;
        case SamplerKind::kEdm:
          x = edm_step(x, x0_hat, anchor, t, t_next, sched);
          break;
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

double training_loss_reference(const Denoiser& model, const std::vector<scene::Sample>& batch,
                               double p_drop, const DiffusionSchedule& sched, Rng& rng) {
  if (batch.empty()) throw ContractViolation("training loss: empty batch");
  double total = 0.0;
  for (const scene::Sample& sample : batch) {
    TrajectoryArray x0 = ground_truth_array(sample);
    TrajectoryArray anchor = make_anchor(sample.init_states, x0.horizon);
    double t = rng.uniform();
    Mat noise = standard_normal(rng, x0.xy.rows(), x0.xy.cols());
    bool drop = rng.bernoulli(p_drop);
    TrajectoryArray x_t = forward_diffuse(x0, anchor, t, noise, sched);
    scene::Condition stripped;
    const scene::Condition& cond =
        drop ? (stripped = scene::strip_to_self_loops(sample.condition)) : sample.condition;
    TrajectoryArray x0_hat = model.predict_clean(x_t, t, sample, cond);
    total += (x0_hat.xy - x0.xy).squaredNorm() / static_cast<double>(x0.xy.size());
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace difftraj::diffusion
