#pragma once

#include <string>
#include <vector>

#include "difftraj/diffusion.hpp"
#include "difftraj/evaluation.hpp"
#include "difftraj/predictor.hpp"
#include "difftraj/refinement.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::cli {

// One run configuration file drives every subcommand. Parsed from JSON
// and validated against the schema in docs/config_schema.json; schema
// errors name the offending field path. Environment variables
// DIFFTRAJ_OUTPUT_DIR and DIFFTRAJ_THREADS override only those fields.
struct RunConfig {
  int version = 1;
  uint64_t seed = 0;
  std::string output_dir = "out";
  int threads = 1;

  struct Dataset {
    std::string kind = "synthetic";  // synthetic | csv
    scene::Profile profile = scene::Profile::kHighway;
    std::string path;        // csv kind
    std::string lanes_path;  // optional polylines
    scene::SyntheticKind synthetic_kind = scene::SyntheticKind::kStraightLaneChange;
    int count = 64;
  } dataset;

  model::ModelConfig model;
  model::TrainConfig train;
  diffusion::DiffusionSchedule schedule;

  double guidance_w = 1.0;
  std::vector<double> sweep_weights{0.0, 0.4, 0.8, 1.0};

  int eval_samples = 6;
  double miss_threshold = 2.0;
  metrics::Variant variant = metrics::Variant::kFull;
  refine::PursuitConfig pursuit;
};

RunConfig load_run_config(const std::string& path);
// Validation against the published schema; throws ConfigError naming
// the field path of the first violation.
void validate_run_config_text(const std::string& json_text);

std::vector<scene::Sample> load_dataset(const RunConfig& cfg);

// Copies the configuration verbatim next to the run outputs.
void archive_config(const std::string& config_path, const std::string& output_dir);

}  // namespace difftraj::cli
