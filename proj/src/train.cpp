#include <algorithm>
#include <cmath>
#include <numeric>

#include "difftraj/evaluation.hpp"
#include "difftraj/predictor.hpp"

namespace difftraj::model {

AdamW::AdamW(ad::ParamRegistry& reg, double beta1, double beta2, double eps, double weight_decay)
    : reg_(reg), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (ad::Parameter* p : reg.all()) {
    m_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ad::Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& params = reg_.all();
  for (size_t i = 0; i < params.size(); ++i) {
    ad::Parameter* p = params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    ad::Mat mhat = m_[i] / bc1;
    ad::Mat vhat = v_[i] / bc2;
    p->value -=
        lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix() + lr * weight_decay_ * p->value;
  }
}

namespace {

// Mean single-draw ADE over a validation subset with the deterministic
// sampler, used for best-checkpoint selection and early stopping.
double validation_ade(const Predictor& model, const std::vector<scene::Sample>& dataset,
                      const diffusion::DiffusionSchedule& sched, int max_scenes, uint64_t seed) {
  metrics::EvalOptions opts;
  opts.n_samples = 1;
  opts.seed = seed;
  opts.w = 1.0;
  std::vector<scene::Sample> subset(
      dataset.begin(), dataset.begin() + std::min<size_t>(dataset.size(), static_cast<size_t>(max_scenes)));
  return metrics::evaluate(model, subset, sched, opts).ade;
}

}  // namespace

TrainResult train(const std::vector<scene::Sample>& dataset, const ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const diffusion::DiffusionSchedule& sched,
                  uint64_t seed) {
  if (dataset.empty()) throw ContractViolation("train: empty dataset");

  TrainResult result;
  result.model = std::make_unique<Predictor>(model_cfg, seed);
  result.model->ped_control_weight = train_cfg.ped_control_weight;
  Predictor& model = *result.model;

  AdamW optimizer(model.params(), 0.9, 0.999, 1e-8, train_cfg.weight_decay);
  Rng rng = Rng::derive(seed, 0x7ea1);

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  std::vector<ad::Mat> best_params;
  const double lr0 = train_cfg.learning_rate;
  const double lr_min = lr0 * train_cfg.lr_min_ratio;

  for (int step = 0; step < train_cfg.steps; ++step) {
    std::vector<const scene::Sample*> batch;
    for (int b = 0; b < train_cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      batch.push_back(&dataset[order[cursor++]]);
    }

    model.params().zero_grads();
    Predictor::StepStats stats = model.training_step(batch, train_cfg.p_drop, rng, sched);
    if (!std::isfinite(stats.loss))
      throw TrainingDiverged("train: non-finite loss at step " + std::to_string(step) +
                             " (last finite loss " +
                             std::to_string(result.loss_curve.empty() ? 0.0
                                                                      : result.loss_curve.back()) +
                             ")");
    result.loss_curve.push_back(stats.loss);

    double progress = train_cfg.steps > 1 ? static_cast<double>(step) / (train_cfg.steps - 1) : 0.0;
    double lr = lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(kPi * progress));
    optimizer.step(lr);
    result.steps_run = step + 1;

    bool last = step + 1 == train_cfg.steps;
    if ((step + 1) % train_cfg.val_interval == 0 || last) {
      double val = validation_ade(model, dataset, sched, train_cfg.val_scenes, seed ^ 0x5a1);
      if (val < result.best_val_ade) {
        result.best_val_ade = val;
        best_params.clear();
        for (ad::Parameter* p : model.params().all()) best_params.push_back(p->value);
      }
      if (train_cfg.early_stop_ade >= 0.0 && val <= train_cfg.early_stop_ade) break;
    }
  }

  if (!best_params.empty()) {
    const auto& params = model.params().all();
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
  }
  return result;
}

}  // namespace difftraj::model
