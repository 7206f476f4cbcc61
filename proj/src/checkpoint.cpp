#include "difftraj/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace difftraj::model {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'T', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatMajor = 1;

json config_to_json(const ModelConfig& c) {
  return json{{"hidden", c.hidden},
              {"gat_heads", c.gat_heads},
              {"attention_heads", c.attention_heads},
              {"use_lane_encoder", c.use_lane_encoder},
              {"lane_layers", c.lane_layers},
              {"lane_heads", c.lane_heads},
              {"ped_hidden", c.ped_hidden},
              {"ped_depth", c.ped_depth},
              {"agent_feature_dim", c.agent_feature_dim},
              {"lane_feature_dim", c.lane_feature_dim},
              {"horizon", c.horizon},
              {"dt", c.dt},
              {"use_motion_model", c.use_motion_model},
              {"control_init_scale", c.control_init_scale},
              {"mu", c.vehicle.mu},
              {"g", c.vehicle.g}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden");
  c.gat_heads = j.at("gat_heads");
  c.attention_heads = j.at("attention_heads");
  c.use_lane_encoder = j.at("use_lane_encoder");
  c.lane_layers = j.at("lane_layers");
  c.lane_heads = j.at("lane_heads");
  c.ped_hidden = j.at("ped_hidden");
  c.ped_depth = j.at("ped_depth");
  c.agent_feature_dim = j.at("agent_feature_dim");
  c.lane_feature_dim = j.at("lane_feature_dim");
  c.horizon = j.at("horizon");
  c.dt = j.at("dt");
  c.use_motion_model = j.at("use_motion_model");
  c.control_init_scale = j.at("control_init_scale");
  c.vehicle.mu = j.at("mu");
  c.vehicle.g = j.at("g");
  return c;
}

json schedule_to_json(const diffusion::DiffusionSchedule& s) {
  return json{{"gamma_max", s.gamma_max}, {"gamma_min", s.gamma_min},
              {"num_steps", s.num_steps}, {"rho", s.rho},
              {"sampler", diffusion::to_string(s.sampler)}, {"eta", s.eta}};
}

diffusion::DiffusionSchedule schedule_from_json(const json& j) {
  diffusion::DiffusionSchedule s;
  s.gamma_max = j.at("gamma_max");
  s.gamma_min = j.at("gamma_min");
  s.num_steps = j.at("num_steps");
  s.rho = j.at("rho");
  s.sampler = diffusion::sampler_from_string(j.at("sampler"));
  s.eta = j.at("eta");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Predictor& model,
                     const diffusion::DiffusionSchedule& sched, const CheckpointMeta& meta) {
  json header;
  header["format_version"] = kFormatMajor;
  header["model"] = config_to_json(model.config());
  header["init_seed"] = model.init_seed();
  header["schedule"] = schedule_to_json(sched);
  header["meta"] = json{{"seed", meta.seed}, {"steps", meta.steps}, {"val_ade", meta.val_ade}};
  json manifest = json::array();
  for (const ad::Parameter* p : model.params().all())
    manifest.push_back(json{{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["params"] = manifest;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write " + path);
  std::string hs = header.dump();
  uint64_t len = hs.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const ad::Parameter* p : model.params().all())
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p->value.size())));
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint: truncated header in " + path);

  json header = json::parse(hs);
  int version = header.at("format_version");
  if (version != kFormatMajor)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));

  LoadedCheckpoint loaded;
  ModelConfig cfg = config_from_json(header.at("model"));
  loaded.model = std::make_unique<Predictor>(cfg, header.at("init_seed").get<uint64_t>());
  loaded.schedule = schedule_from_json(header.at("schedule"));
  loaded.meta.seed = header.at("meta").at("seed");
  loaded.meta.steps = header.at("meta").at("steps");
  loaded.meta.val_ade = header.at("meta").at("val_ade");

  const auto& manifest = header.at("params");
  const auto& params = loaded.model->params().all();
  if (manifest.size() != params.size())
    throw FormatError("checkpoint: parameter manifest size mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    const json& m = manifest[i];
    ad::Parameter* p = params[i];
    if (m.at("name") != p->name || m.at("rows") != p->value.rows() ||
        m.at("cols") != p->value.cols())
      throw FormatError("checkpoint: parameter layout mismatch at " + p->name);
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(p->value.size())));
  }
  if (!in) throw FormatError("checkpoint: truncated parameter blob in " + path);
  return loaded;
}

}  // namespace difftraj::model
