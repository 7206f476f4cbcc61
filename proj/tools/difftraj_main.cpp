#include <CLI11.hpp>
#include <Eigen/Core>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "difftraj/checkpoint.hpp"
#include "difftraj/config.hpp"
#include "difftraj/evaluation.hpp"
#include "difftraj/plotting.hpp"
#include "difftraj/predictor.hpp"

namespace fs = std::filesystem;
using namespace difftraj;

namespace {

struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> w;
  std::optional<std::string> sampler;
  std::optional<double> eta;
  std::optional<int> steps;
  std::optional<std::string> variant;
  int threads = 0;
};

cli::RunConfig load_config(const std::string& path, const Overrides& ov) {
  cli::RunConfig cfg = cli::load_run_config(path);
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.out) cfg.output_dir = *ov.out;
  if (ov.w) cfg.guidance_w = *ov.w;
  if (ov.sampler) cfg.schedule.sampler = diffusion::sampler_from_string(*ov.sampler);
  if (ov.eta) cfg.schedule.eta = *ov.eta;
  if (ov.steps) cfg.schedule.num_steps = *ov.steps;
  if (ov.variant) cfg.variant = metrics::variant_from_string(*ov.variant);
  if (ov.threads > 0) cfg.threads = ov.threads;
  Eigen::setNbThreads(cfg.threads);
  return cfg;
}

void write_loss_curve(const std::string& path, const std::vector<double>& curve) {
  std::ofstream out(path);
  out << "step,loss\n";
  out.precision(12);
  for (size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
}

int cmd_gen_synthetic(const std::string& config_path, const Overrides& ov) {
  cli::RunConfig cfg = load_config(config_path, ov);
  fs::create_directories(cfg.output_dir);
  cli::archive_config(config_path, cfg.output_dir);

  scene::RawRecording rec =
      scene::synthetic_recording(cfg.dataset.synthetic_kind, cfg.dataset.count, cfg.seed);
  std::string scenes_path = (fs::path(cfg.output_dir) / "scenes.csv").string();
  scene::write_scene_csv(scenes_path, rec);
  std::string lanes_path = (fs::path(cfg.output_dir) / "lanes.txt").string();
  scene::write_polylines(lanes_path, scene::synthetic_road_polylines(cfg.dataset.synthetic_kind));
  std::cout << "wrote " << scenes_path << " and " << lanes_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov) {
  cli::RunConfig cfg = load_config(config_path, ov);
  fs::create_directories(cfg.output_dir);
  cli::archive_config(config_path, cfg.output_dir);

  auto dataset = cli::load_dataset(cfg);
  std::cout << "training on " << dataset.size() << " scenes, " << cfg.train.steps << " steps\n";
  model::TrainResult result = model::train(dataset, cfg.model, cfg.train, cfg.schedule, cfg.seed);

  std::string ckpt_path = (fs::path(cfg.output_dir) / "checkpoint.bin").string();
  model::CheckpointMeta meta{cfg.seed, result.steps_run, result.best_val_ade};
  model::save_checkpoint(ckpt_path, *result.model, cfg.schedule, meta);
  write_loss_curve((fs::path(cfg.output_dir) / "loss_curve.csv").string(), result.loss_curve);
  std::cout << "checkpoint: " << ckpt_path << " (val ADE " << result.best_val_ade << ", "
            << result.steps_run << " steps)\n";
  return 0;
}

void check_variant(const model::Predictor& model, metrics::Variant variant) {
  bool has_motion = model.config().use_motion_model;
  if (variant == metrics::Variant::kFull && !has_motion)
    throw ConfigError("variant 'full' needs a checkpoint trained with the motion model");
  if (variant == metrics::Variant::kNoMotionModel && has_motion)
    throw ConfigError("variant 'no_motion_model' needs a checkpoint trained without it");
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt_path,
                 const Overrides& ov) {
  cli::RunConfig cfg = load_config(config_path, ov);
  fs::create_directories(cfg.output_dir);
  cli::archive_config(config_path, cfg.output_dir);

  auto loaded = model::load_checkpoint(ckpt_path);
  check_variant(*loaded.model, cfg.variant);
  diffusion::DiffusionSchedule sched = cfg.schedule;
  std::cout << "sampler " << diffusion::to_string(sched.sampler) << ", " << sched.num_steps
            << " reverse steps, w=" << cfg.guidance_w << "\n";

  auto dataset = cli::load_dataset(cfg);
  metrics::EvalOptions opts;
  opts.n_samples = cfg.eval_samples;
  opts.miss_threshold = cfg.miss_threshold;
  opts.w = cfg.guidance_w;
  opts.seed = cfg.seed;
  opts.variant = cfg.variant;
  opts.pursuit = cfg.pursuit;
  metrics::MetricsRecord rec = metrics::evaluate(*loaded.model, dataset, sched, opts);

  std::string csv = (fs::path(cfg.output_dir) / "metrics.csv").string();
  metrics::write_metrics_csv(csv, {rec});
  std::cout << metrics::format_metrics_table({rec}) << "wrote " << csv << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& ckpt_path, const Overrides& ov) {
  cli::RunConfig cfg = load_config(config_path, ov);
  fs::create_directories(cfg.output_dir);
  cli::archive_config(config_path, cfg.output_dir);

  auto loaded = model::load_checkpoint(ckpt_path);
  check_variant(*loaded.model, cfg.variant);
  auto dataset = cli::load_dataset(cfg);
  metrics::EvalOptions opts;
  opts.n_samples = cfg.eval_samples;
  opts.miss_threshold = cfg.miss_threshold;
  opts.seed = cfg.seed;
  opts.variant = cfg.variant;
  opts.pursuit = cfg.pursuit;
  auto records = metrics::guidance_sweep(*loaded.model, dataset, cfg.schedule, cfg.sweep_weights, opts);

  std::string csv = (fs::path(cfg.output_dir) / "guidance_sweep.csv").string();
  metrics::write_metrics_csv(csv, records);
  std::cout << metrics::format_metrics_table(records) << "wrote " << csv << "\n";
  return 0;
}

int cmd_plot(const std::string& config_path, const std::string& ckpt_path,
             std::vector<int> scene_ids, std::vector<double> w_values, const Overrides& ov) {
  cli::RunConfig cfg = load_config(config_path, ov);
  fs::create_directories(cfg.output_dir);
  cli::archive_config(config_path, cfg.output_dir);

  auto loaded = model::load_checkpoint(ckpt_path);
  auto dataset = cli::load_dataset(cfg);
  if (w_values.empty()) w_values = {cfg.guidance_w};

  std::vector<scene::Polyline> lanes;
  if (cfg.dataset.kind == "synthetic")
    lanes = scene::synthetic_road_polylines(cfg.dataset.synthetic_kind);
  else if (!cfg.dataset.lanes_path.empty())
    lanes = scene::load_polylines(cfg.dataset.lanes_path);

  for (int id : scene_ids) {
    if (id < 0 || id >= static_cast<int>(dataset.size()))
      throw DataError("plot: unknown scene id " + std::to_string(id));
    const scene::Sample& sample = dataset[static_cast<size_t>(id)];
    diffusion::TrajectoryArray anchor =
        diffusion::make_anchor(sample.init_states, static_cast<int>(sample.future[0].rows()));

    plot::ScenePanelPlot panel;
    panel.sample = &sample;
    panel.w_values = w_values;
    panel.lanes = lanes.empty() ? nullptr : &lanes;
    for (double w : w_values) {
      diffusion::SampleOptions sopts;
      sopts.n_samples = cfg.eval_samples;
      sopts.seed = cfg.seed * 1000003ull + static_cast<uint64_t>(id);
      sopts.guidance_w = w;
      panel.per_w_samples.push_back(
          diffusion::sample_trajectories(*loaded.model, sample, anchor, cfg.schedule, sopts));
    }
    std::string path =
        (fs::path(cfg.output_dir) / ("scene_" + std::to_string(id) + ".svg")).string();
    plot::write_scene_svg(path, panel);
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion-based multi-agent trajectory prediction"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path;
  std::string scene_list, w_list;
  Overrides ov;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration JSON")->required();
    cmd->add_option("--seed", ov.seed, "override the config seed");
    cmd->add_option("--out", ov.out, "override the output directory");
    cmd->add_option("--threads", ov.threads, "thread count (default 1 for determinism)");
  };
  auto add_sampling = [&](CLI::App* cmd) {
    cmd->add_option("--w", ov.w, "guidance weight in [0, 1]");
    cmd->add_option("--sampler", ov.sampler, "ddpm|ddim|edm");
    cmd->add_option("--eta", ov.eta, "DDIM stochasticity in [0, 1]");
    cmd->add_option("--steps", ov.steps, "reverse diffusion steps T");
  };

  CLI::App* gen = app.add_subcommand("gen-synthetic", "write synthetic scenes + lane files");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model from a config");
  add_common(train);

  CLI::App* evaluate = app.add_subcommand("evaluate", "compute ADE/FDE/MR for a checkpoint");
  add_common(evaluate);
  add_sampling(evaluate);
  evaluate->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  evaluate->add_option("--variant", ov.variant, "full|no_motion_model|refined");

  CLI::App* sweep = app.add_subcommand("sweep-guidance", "evaluate across guidance weights");
  add_common(sweep);
  add_sampling(sweep);
  sweep->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

  CLI::App* plot_cmd = app.add_subcommand("plot", "render scenes with sampled predictions");
  add_common(plot_cmd);
  add_sampling(plot_cmd);
  plot_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  plot_cmd->add_option("--scenes", scene_list, "comma-separated scene ids")->required();
  plot_cmd->add_option("--w-panels", w_list, "comma-separated guidance weights, one panel each");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_synthetic(config_path, ov);
    if (train->parsed()) return cmd_train(config_path, ov);
    if (evaluate->parsed()) return cmd_evaluate(config_path, ckpt_path, ov);
    if (sweep->parsed()) return cmd_sweep(config_path, ckpt_path, ov);
    if (plot_cmd->parsed()) {
      std::vector<int> ids;
      std::stringstream ss(scene_list);
      std::string tok;
      while (std::getline(ss, tok, ',')) ids.push_back(std::stoi(tok));
      std::vector<double> ws;
      if (!w_list.empty()) {
        std::stringstream ws_stream(w_list);
        while (std::getline(ws_stream, tok, ',')) ws.push_back(std::stod(tok));
      }
      return cmd_plot(config_path, ckpt_path, ids, ws, ov);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: format: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
