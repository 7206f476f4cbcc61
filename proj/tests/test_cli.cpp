#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "difftraj/config.hpp"
#include "difftraj/plotting.hpp"

using namespace difftraj;
namespace fs = std::filesystem;

namespace {

std::string temp_dir() {
  fs::path p = fs::temp_directory_path() / "difftraj_cli_test";
  fs::create_directories(p);
  return p.string();
}

std::string write_file(const std::string& name, const std::string& text) {
  std::string path = (fs::path(temp_dir()) / name).string();
  std::ofstream out(path);
  out << text;
  return path;
}

int count_occurrences(const std::string& text, const std::string& needle) {
  int n = 0;
  for (size_t at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

constexpr const char* kMinimalConfig = R"({
  "version": 1,
  "seed": 3,
  "output_dir": "OUTDIR",
  "dataset": { "kind": "synthetic", "synthetic_kind": "straight_lane_change", "count": 4 }
})";

}  // namespace

TEST_CASE("config validation reports field paths") {
  CHECK_THROWS_WITH_AS(cli::validate_run_config_text(R"({"version":1,"seed":0})"),
                       doctest::Contains("output_dir"), ConfigError);
  CHECK_THROWS_WITH_AS(
      cli::validate_run_config_text(R"({"version":1,"seed":0,"output_dir":"o"})"),
      doctest::Contains("$.dataset"), ConfigError);
  CHECK_THROWS_WITH_AS(cli::validate_run_config_text(
                           R"({"version":1,"seed":0,"output_dir":"o","dataset":{"kind":"csv"}})"),
                       doctest::Contains("dataset.path"), ConfigError);
  CHECK_THROWS_WITH_AS(
      cli::validate_run_config_text(
          R"({"version":1,"seed":0,"output_dir":"o","dataset":{"kind":"synthetic"},"train":{"p_drop":1.5}})"),
      doctest::Contains("train.p_drop"), ConfigError);
  CHECK_THROWS_WITH_AS(
      cli::validate_run_config_text(
          R"({"version":2,"seed":0,"output_dir":"o","dataset":{"kind":"synthetic"}})"),
      doctest::Contains("version"), ConfigError);
  CHECK_THROWS_AS(cli::validate_run_config_text("not json"), ConfigError);

  std::string ok = kMinimalConfig;
  cli::validate_run_config_text(ok);  // no throw
}

TEST_CASE("config round trip and dataset loading") {
  std::string text = kMinimalConfig;
  std::string path = write_file("cfg_ok.json", text);
  cli::RunConfig cfg = cli::load_run_config(path);
  CHECK(cfg.seed == 3);
  CHECK(cfg.dataset.count == 4);
  CHECK(cfg.schedule.num_steps == 2);
  CHECK(cfg.guidance_w == 1.0);

  auto scenes = cli::load_dataset(cfg);
  CHECK(scenes.size() == 4);

  cli::archive_config(path, temp_dir() + "/archive");
  CHECK(fs::exists(fs::path(temp_dir()) / "archive" / "config_used.json"));
}

TEST_CASE("environment variables override output dir and threads only") {
  std::string path = write_file("cfg_env.json", kMinimalConfig);
  setenv("DIFFTRAJ_OUTPUT_DIR", "/tmp/env_override", 1);
  setenv("DIFFTRAJ_THREADS", "3", 1);
  cli::RunConfig cfg = cli::load_run_config(path);
  CHECK(cfg.output_dir == "/tmp/env_override");
  CHECK(cfg.threads == 3);
  CHECK(cfg.seed == 3);  // untouched
  unsetenv("DIFFTRAJ_OUTPUT_DIR");
  unsetenv("DIFFTRAJ_THREADS");
}

TEST_CASE("scene svg: one file per scene, scatter counts, w panels") {
  auto scenes = scene::generate_synthetic_scenes(scene::SyntheticKind::kStraightLaneChange, 2, 5);
  const scene::Sample& sample = scenes[1];  // lane-change pair: 2 agents
  const int horizon = static_cast<int>(sample.future[0].rows());

  // six mock draws per panel: ground truth with small offsets
  auto draws = [&](double offset) {
    std::vector<diffusion::TrajectoryArray> out;
    for (int s = 0; s < 6; ++s) {
      diffusion::TrajectoryArray traj(sample.num_targets(), horizon);
      for (int a = 0; a < sample.num_targets(); ++a)
        traj.set_agent_block(a, sample.future[static_cast<size_t>(a)].array() + offset * s);
      out.push_back(traj);
    }
    return out;
  };

  auto lanes = scene::synthetic_road_polylines(scene::SyntheticKind::kStraightLaneChange);
  plot::ScenePanelPlot panel;
  panel.sample = &sample;
  panel.w_values = {0.0, 1.0};
  panel.per_w_samples = {draws(0.02), draws(0.05)};
  panel.lanes = &lanes;

  std::string path = (fs::path(temp_dir()) / "scene.svg").string();
  plot::write_scene_svg(path, panel);

  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string svg = buf.str();

  CHECK(count_occurrences(svg, "w=0") == 1);
  CHECK(count_occurrences(svg, "w=1") == 1);
  // 6 same-colored scatter sequences per target agent per panel,
  // plus that agent's box in each panel
  CHECK(count_occurrences(svg, "fill=\"#1f77b4\"") == 2 * (6 * horizon + 1));
  // ground truth lines: one per target per panel, plus 2 * 3 lane lines
  CHECK(count_occurrences(svg, "stroke=\"black\"") == 2 * sample.num_targets());
  CHECK(count_occurrences(svg, "stroke=\"#999999\"") == 6);
  // agent boxes at the prediction instant
  CHECK(count_occurrences(svg, "<polygon") == 2 * sample.num_targets());
}

TEST_CASE("end-to-end: gen-synthetic, train, evaluate, sweep, plot via the binary") {
  std::string out_dir = temp_dir() + "/e2e";
  fs::remove_all(out_dir);
  std::string cfg_text = R"({
    "version": 1,
    "seed": 11,
    "output_dir": ")" + out_dir + R"(",
    "dataset": { "kind": "synthetic", "synthetic_kind": "straight_lane_change", "count": 6 },
    "model": { "profile": "desk", "hidden": 16, "attention_heads": 2 },
    "train": { "steps": 20, "batch_size": 4, "val_interval": 10, "val_scenes": 2 },
    "diffusion": { "sampler": "edm", "steps": 2 },
    "guidance": { "w": 1.0, "sweep": [0.0, 1.0] },
    "evaluation": { "n_samples": 2 }
  })";
  std::string cfg_path = write_file("e2e.json", cfg_text);

  auto run = [&](const std::string& args) {
    std::string cmd = std::string(DIFFTRAJ_BIN) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  CHECK(run("gen-synthetic --config " + cfg_path) == 0);
  CHECK(fs::exists(fs::path(out_dir) / "scenes.csv"));
  CHECK(fs::exists(fs::path(out_dir) / "lanes.txt"));

  CHECK(run("train --config " + cfg_path) == 0);
  std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(fs::path(out_dir) / "loss_curve.csv"));
  CHECK(fs::exists(fs::path(out_dir) / "config_used.json"));

  CHECK(run("evaluate --config " + cfg_path + " --checkpoint " + ckpt) == 0);
  CHECK(fs::exists(fs::path(out_dir) / "metrics.csv"));

  // overrides surface in the sampler log and the report row
  std::string log_path = (fs::path(temp_dir()) / "eval_log.txt").string();
  std::string cmd = std::string(DIFFTRAJ_BIN) + " evaluate --config " + cfg_path +
                    " --checkpoint " + ckpt + " --steps 3 --w 0 > " + log_path + " 2>&1";
  CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  std::stringstream log_buf;
  log_buf << std::ifstream(log_path).rdbuf();
  CHECK(log_buf.str().find("3 reverse steps") != std::string::npos);
  CHECK(log_buf.str().find("w=0") != std::string::npos);
  std::stringstream csv_buf;
  csv_buf << std::ifstream((fs::path(out_dir) / "metrics.csv").string()).rdbuf();
  CHECK(csv_buf.str().find("full,0,") != std::string::npos);

  CHECK(run("evaluate --config " + cfg_path + " --checkpoint " + ckpt +
            " --variant no_motion_model") == 2);  // variant/config mismatch

  CHECK(run("sweep-guidance --config " + cfg_path + " --checkpoint " + ckpt) == 0);
  CHECK(fs::exists(fs::path(out_dir) / "guidance_sweep.csv"));

  CHECK(run("plot --config " + cfg_path + " --checkpoint " + ckpt +
            " --scenes 0,1 --w-panels 0.0,1.0") == 0);
  CHECK(fs::exists(fs::path(out_dir) / "scene_0.svg"));
  CHECK(fs::exists(fs::path(out_dir) / "scene_1.svg"));

  // bad config exits nonzero with the config code
  std::string bad = write_file("bad.json", R"({"version":1,"seed":0,"output_dir":"x"})");
  CHECK(run("train --config " + bad) == 2);
}
