#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "difftraj/diffusion.hpp"
#include "difftraj/refinement.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::metrics {

using Mat = Eigen::MatrixXd;

// Mean / final-step Euclidean distance between (N, 2) trajectories.
double ade(const Mat& pred, const Mat& truth);
double fde(const Mat& pred, const Mat& truth);
// Final point strictly farther than the threshold from ground truth.
bool miss(const Mat& pred, const Mat& truth, double threshold = 2.0);

enum class Variant { kFull, kNoMotionModel, kRefined };
Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ClassBreakdown {
  double ade = 0.0, fde = 0.0, mr = 0.0;
  int count = 0;
};

struct MetricsRecord {
  std::string variant = "full";
  double w = 1.0;
  double ade = 0.0, fde = 0.0, mr = 0.0;
  int n_samples = 6;
  int n_scenes = 0;
  ClassBreakdown vehicles, pedestrians;
};

struct EvalOptions {
  int n_samples = 6;
  double miss_threshold = 2.0;
  double w = 1.0;
  uint64_t seed = 0;
  Variant variant = Variant::kFull;
  refine::PursuitConfig pursuit;  // used by the refined variant
};

// Mean-of-n protocol: per scene draw n trajectories (seeded per scene,
// independent of w so sweeps are noise-paired), average them pointwise
// per agent, score against ground truth; aggregate agent means per
// scene, then scene means.
MetricsRecord evaluate(const diffusion::Denoiser& model,
                       const std::vector<scene::Sample>& dataset,
                       const diffusion::DiffusionSchedule& sched, const EvalOptions& opts);

// One evaluate per weight with shared seeds.
std::vector<MetricsRecord> guidance_sweep(const diffusion::Denoiser& model,
                                          const std::vector<scene::Sample>& dataset,
                                          const diffusion::DiffusionSchedule& sched,
                                          const std::vector<double>& weights,
                                          const EvalOptions& base);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::string format_metrics_table(const std::vector<MetricsRecord>& records);

}  // namespace difftraj::metrics
