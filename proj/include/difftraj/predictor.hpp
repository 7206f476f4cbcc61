#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "difftraj/diffusion.hpp"
#include "difftraj/graph_nets.hpp"
#include "difftraj/motion.hpp"
#include "difftraj/nn.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::model {

using diffusion::TrajectoryArray;

struct ModelConfig {
  int hidden = 32;
  int gat_heads = 1;        // heads inside the recurrent cells
  int attention_heads = 4;  // latent/context attention
  bool use_lane_encoder = false;
  int lane_layers = 3;
  int lane_heads = 4;
  int ped_hidden = 32;
  int ped_depth = 2;
  int agent_feature_dim = 9;
  int lane_feature_dim = 3;
  int horizon = kHorizon;
  double dt = kDt;
  // With the motion model the decoder emits control inputs that are
  // clamped and integrated; without it the decoder output is added to
  // the anchor and used as the trajectory directly.
  bool use_motion_model = true;
  double control_init_scale = 0.0;  // 0 zero-initializes the control head
  motion::VehicleModelConfig vehicle;

  static ModelConfig desk();        // width-32 profile for CPU-scale runs
  static ModelConfig highway();     // 512-wide, no lane encoder
  static ModelConfig roundabout();  // 128-wide with the lane encoder
};

// Fourier feature bank for the diffusion time embedding; the
// frequencies are drawn once from a fixed stream and never trained.
Eigen::VectorXd fourier_frequency_bank(int n_frequencies);
// Row vector [sin(2 pi f_k t) | cos(2 pi f_k t)].
ad::Mat fourier_features(const Eigen::VectorXd& freqs, double t);

class Predictor : public diffusion::Denoiser {
 public:
  Predictor(const ModelConfig& cfg, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamRegistry& params() { return reg_; }
  const ad::ParamRegistry& params() const { return reg_; }
  uint64_t init_seed() const { return init_seed_; }

  // diffusion::Denoiser
  TrajectoryArray predict_clean(const TrajectoryArray& x_t, double t,
                                const scene::Sample& sample,
                                const scene::Condition& condition) const override;

  // Clean-signal prediction together with the motion-control sequence
  // that produced it (clamped for vehicles).
  struct DenoiseResult {
    TrajectoryArray x0_hat;
    TrajectoryArray controls;
  };
  DenoiseResult denoise(const TrajectoryArray& x_t, double t, const scene::Sample& sample,
                        const scene::Condition& condition) const;

  // Differentiable forward pass on an external tape.
  struct Forward {
    ad::Var x0_hat;    // (A * horizon, 2)
    ad::Var controls;  // (A * horizon, 2)
  };
  Forward forward(ad::Tape& t, const TrajectoryArray& x_t, double time,
                  const scene::Sample& sample, const scene::Condition& condition) const;

  // Mean squared clean-signal loss over a batch, value only. Draws
  // (t, noise, condition-drop) per sample from `rng` in a fixed order.
  double training_loss(const std::vector<scene::Sample>& batch, double p_drop, Rng& rng,
                       const diffusion::DiffusionSchedule& sched = {}) const;

  // Same loss with gradient accumulation into the registry (scaled so
  // a full batch accumulates the gradient of the batch mean).
  struct StepStats {
    double loss = 0.0;
    int full_conditions = 0;
    int stripped_conditions = 0;
  };
  StepStats training_step(const std::vector<const scene::Sample*>& batch, double p_drop, Rng& rng,
                          const diffusion::DiffusionSchedule& sched = {});

  double ped_control_weight = 0.1;  // pull pedestrian inputs toward gt velocities

 private:
  struct TapeLoss {
    ad::Var loss;
    bool used_stripped = false;
  };
  TapeLoss sample_loss(ad::Tape& t, const scene::Sample& sample, double p_drop, Rng& rng,
                       const diffusion::DiffusionSchedule& sched) const;

  ModelConfig cfg_;
  uint64_t init_seed_;
  ad::ParamRegistry reg_;

  gnn::GraphGru encoder_;
  gnn::GraphGru decoder_;
  nn::Linear latent_embed_;
  Eigen::VectorXd time_freqs_;
  nn::Mlp time_mlp_;
  nn::MultiheadAttention history_attention_;
  nn::MultiheadAttention lane_attention_;
  std::vector<gnn::GatLayer> lane_layers_;
  nn::Linear lane_env_embed_;
  nn::Linear lane_agent_embed_;
  nn::Mlp fusion_;
  nn::Linear control_head_;
  motion::PedestrianField ped_field_;
};

struct TrainConfig {
  double learning_rate = 5e-4;
  double lr_min_ratio = 0.01;  // cosine annealing floor
  int batch_size = 16;
  int steps = 2000;
  double weight_decay = 1e-4;
  double p_drop = 0.2;
  int val_interval = 100;
  int val_scenes = 16;
  double early_stop_ade = -1.0;  // stop once validation ADE dips below; <0 disables
  double ped_control_weight = 0.1;
};

struct TrainResult {
  std::unique_ptr<Predictor> model;
  std::vector<double> loss_curve;
  double best_val_ade = std::numeric_limits<double>::infinity();
  int steps_run = 0;
};

// AdamW + cosine annealing over the configured step budget. Throws
// TrainingDiverged on a non-finite loss. Deterministic given the seed.
TrainResult train(const std::vector<scene::Sample>& dataset, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const diffusion::DiffusionSchedule& sched,
                  uint64_t seed);

// Decoupled-weight-decay Adam over a parameter registry.
class AdamW {
 public:
  AdamW(ad::ParamRegistry& reg, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
        double weight_decay = 1e-4);
  void step(double lr);

 private:
  ad::ParamRegistry& reg_;
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<ad::Mat> m_, v_;
};

}  // namespace difftraj::model
