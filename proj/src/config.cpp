#include "difftraj/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace difftraj::cli {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& why) {
  throw ConfigError(path + ": " + why);
}

const json* maybe(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double require_number(const json& j, const std::string& path, const std::string& key) {
  const json* v = maybe(j, key);
  if (v == nullptr) fail(path + "." + key, "missing required field");
  if (!v->is_number()) fail(path + "." + key, "expected a number");
  return v->get<double>();
}

std::string require_string(const json& j, const std::string& path, const std::string& key) {
  const json* v = maybe(j, key);
  if (v == nullptr) fail(path + "." + key, "missing required field");
  if (!v->is_string()) fail(path + "." + key, "expected a string");
  return v->get<std::string>();
}

double number_or(const json& j, const std::string& path, const std::string& key, double dflt) {
  const json* v = maybe(j, key);
  if (v == nullptr) return dflt;
  if (!v->is_number()) fail(path + "." + key, "expected a number");
  return v->get<double>();
}

bool bool_or(const json& j, const std::string& path, const std::string& key, bool dflt) {
  const json* v = maybe(j, key);
  if (v == nullptr) return dflt;
  if (!v->is_boolean()) fail(path + "." + key, "expected a boolean");
  return v->get<bool>();
}

std::string string_or(const json& j, const std::string& path, const std::string& key,
                      const std::string& dflt) {
  const json* v = maybe(j, key);
  if (v == nullptr) return dflt;
  if (!v->is_string()) fail(path + "." + key, "expected a string");
  return v->get<std::string>();
}

RunConfig parse(const json& j) {
  RunConfig cfg;
  if (!j.is_object()) fail("$", "config root must be an object");
  cfg.version = static_cast<int>(require_number(j, "$", "version"));
  if (cfg.version != 1) fail("$.version", "unsupported config version");
  cfg.seed = static_cast<uint64_t>(require_number(j, "$", "seed"));
  cfg.output_dir = require_string(j, "$", "output_dir");

  const json* ds = maybe(j, "dataset");
  if (ds == nullptr) fail("$.dataset", "missing required field");
  cfg.dataset.kind = require_string(*ds, "dataset", "kind");
  if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "csv")
    fail("dataset.kind", "must be 'synthetic' or 'csv'");
  std::string profile = string_or(*ds, "dataset", "profile", "highway");
  if (profile == "highway") cfg.dataset.profile = scene::Profile::kHighway;
  else if (profile == "roundabout") cfg.dataset.profile = scene::Profile::kRoundabout;
  else fail("dataset.profile", "must be 'highway' or 'roundabout'");
  if (cfg.dataset.kind == "csv") {
    cfg.dataset.path = require_string(*ds, "dataset", "path");
    cfg.dataset.lanes_path = string_or(*ds, "dataset", "lanes_path", "");
  } else {
    std::string kind = string_or(*ds, "dataset", "synthetic_kind", "straight_lane_change");
    if (kind == "straight_lane_change")
      cfg.dataset.synthetic_kind = scene::SyntheticKind::kStraightLaneChange;
    else if (kind == "circular_roundabout")
      cfg.dataset.synthetic_kind = scene::SyntheticKind::kCircularRoundabout;
    else fail("dataset.synthetic_kind", "must be 'straight_lane_change' or 'circular_roundabout'");
    cfg.dataset.count = static_cast<int>(number_or(*ds, "dataset", "count", 64));
    if (cfg.dataset.count < 1) fail("dataset.count", "must be >= 1");
  }

  if (const json* m = maybe(j, "model")) {
    std::string mp = string_or(*m, "model", "profile", "desk");
    if (mp == "desk") cfg.model = model::ModelConfig::desk();
    else if (mp == "highway") cfg.model = model::ModelConfig::highway();
    else if (mp == "roundabout") cfg.model = model::ModelConfig::roundabout();
    else fail("model.profile", "must be 'desk', 'highway' or 'roundabout'");
    cfg.model.hidden = static_cast<int>(number_or(*m, "model", "hidden", cfg.model.hidden));
    cfg.model.attention_heads =
        static_cast<int>(number_or(*m, "model", "attention_heads", cfg.model.attention_heads));
    cfg.model.use_motion_model = bool_or(*m, "model", "use_motion_model", cfg.model.use_motion_model);
    cfg.model.control_init_scale =
        number_or(*m, "model", "control_init_scale", cfg.model.control_init_scale);
    cfg.model.horizon = static_cast<int>(number_or(*m, "model", "horizon", cfg.model.horizon));
    if (cfg.model.hidden < 2) fail("model.hidden", "must be >= 2");
    if (cfg.model.horizon < 1) fail("model.horizon", "must be >= 1");
  }

  if (const json* t = maybe(j, "train")) {
    cfg.train.learning_rate = number_or(*t, "train", "learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = static_cast<int>(number_or(*t, "train", "batch_size", cfg.train.batch_size));
    cfg.train.steps = static_cast<int>(number_or(*t, "train", "steps", cfg.train.steps));
    cfg.train.weight_decay = number_or(*t, "train", "weight_decay", cfg.train.weight_decay);
    cfg.train.p_drop = number_or(*t, "train", "p_drop", cfg.train.p_drop);
    cfg.train.val_interval = static_cast<int>(number_or(*t, "train", "val_interval", cfg.train.val_interval));
    cfg.train.val_scenes = static_cast<int>(number_or(*t, "train", "val_scenes", cfg.train.val_scenes));
    cfg.train.early_stop_ade = number_or(*t, "train", "early_stop_ade", cfg.train.early_stop_ade);
    if (cfg.train.p_drop < 0.0 || cfg.train.p_drop >= 1.0) fail("train.p_drop", "must be in [0, 1)");
    if (cfg.train.batch_size < 1) fail("train.batch_size", "must be >= 1");
    if (cfg.train.steps < 1) fail("train.steps", "must be >= 1");
  }

  if (const json* d = maybe(j, "diffusion")) {
    cfg.schedule.sampler =
        diffusion::sampler_from_string(string_or(*d, "diffusion", "sampler", "edm"));
    cfg.schedule.eta = number_or(*d, "diffusion", "eta", cfg.schedule.eta);
    cfg.schedule.num_steps = static_cast<int>(number_or(*d, "diffusion", "steps", cfg.schedule.num_steps));
    cfg.schedule.rho = number_or(*d, "diffusion", "rho", cfg.schedule.rho);
    cfg.schedule.gamma_min = number_or(*d, "diffusion", "gamma_min", cfg.schedule.gamma_min);
    cfg.schedule.gamma_max = number_or(*d, "diffusion", "gamma_max", cfg.schedule.gamma_max);
    if (cfg.schedule.eta < 0.0 || cfg.schedule.eta > 1.0) fail("diffusion.eta", "must be in [0, 1]");
    if (cfg.schedule.num_steps < 1) fail("diffusion.steps", "must be >= 1");
    if (cfg.schedule.gamma_min >= cfg.schedule.gamma_max)
      fail("diffusion.gamma_min", "must be < gamma_max");
  }

  if (const json* g = maybe(j, "guidance")) {
    cfg.guidance_w = number_or(*g, "guidance", "w", cfg.guidance_w);
    if (cfg.guidance_w < 0.0 || cfg.guidance_w > 1.0) fail("guidance.w", "must be in [0, 1]");
    if (const json* sw = maybe(*g, "sweep")) {
      if (!sw->is_array()) fail("guidance.sweep", "expected an array of numbers");
      cfg.sweep_weights.clear();
      for (size_t i = 0; i < sw->size(); ++i) {
        const json& v = (*sw)[i];
        if (!v.is_number()) fail("guidance.sweep[" + std::to_string(i) + "]", "expected a number");
        double w = v.get<double>();
        if (w < 0.0 || w > 1.0)
          fail("guidance.sweep[" + std::to_string(i) + "]", "must be in [0, 1]");
        cfg.sweep_weights.push_back(w);
      }
    }
  }

  if (const json* e = maybe(j, "evaluation")) {
    cfg.eval_samples = static_cast<int>(number_or(*e, "evaluation", "n_samples", cfg.eval_samples));
    cfg.miss_threshold = number_or(*e, "evaluation", "miss_threshold", cfg.miss_threshold);
    cfg.variant = metrics::variant_from_string(string_or(*e, "evaluation", "variant", "full"));
    if (cfg.eval_samples < 1) fail("evaluation.n_samples", "must be >= 1");
  }

  if (const json* r = maybe(j, "refinement")) {
    cfg.pursuit.lookahead_base =
        number_or(*r, "refinement", "lookahead_base", cfg.pursuit.lookahead_base);
    cfg.pursuit.speed_gain = number_or(*r, "refinement", "speed_gain", cfg.pursuit.speed_gain);
    cfg.pursuit.curvature_exponent = static_cast<int>(
        number_or(*r, "refinement", "curvature_exponent", cfg.pursuit.curvature_exponent));
    if (cfg.pursuit.curvature_exponent != 1 && cfg.pursuit.curvature_exponent != 2)
      fail("refinement.curvature_exponent", "must be 1 or 2");
    if (cfg.pursuit.lookahead_base <= 0.0) fail("refinement.lookahead_base", "must be > 0");
  }

  if (const json* th = maybe(j, "threads")) {
    if (!th->is_number()) fail("$.threads", "expected a number");
    cfg.threads = th->get<int>();
    if (cfg.threads < 1) fail("$.threads", "must be >= 1");
  }

  // environment overrides: output directory and thread count only
  if (const char* out = std::getenv("DIFFTRAJ_OUTPUT_DIR"); out != nullptr && *out != '\0')
    cfg.output_dir = out;
  if (const char* th = std::getenv("DIFFTRAJ_THREADS"); th != nullptr && *th != '\0')
    cfg.threads = std::max(1, std::atoi(th));
  return cfg;
}

}  // namespace

void validate_run_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  parse(j);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse(j);
}

std::vector<scene::Sample> load_dataset(const RunConfig& cfg) {
  if (cfg.dataset.kind == "synthetic")
    return scene::generate_synthetic_scenes(cfg.dataset.synthetic_kind, cfg.dataset.count,
                                            cfg.seed);
  std::vector<scene::Sample> samples = scene::load_scene_csv(cfg.dataset.path, cfg.dataset.profile);
  if (!cfg.dataset.lanes_path.empty())
    scene::attach_lane_graphs(samples, scene::load_polylines(cfg.dataset.lanes_path));
  return samples;
}

void archive_config(const std::string& config_path, const std::string& output_dir) {
  std::filesystem::create_directories(output_dir);
  std::filesystem::copy_file(config_path,
                             std::filesystem::path(output_dir) / "config_used.json",
                             std::filesystem::copy_options::overwrite_existing);
}

}  // namespace difftraj::cli
