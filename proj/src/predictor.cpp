#include "difftraj/predictor.hpp"

#include <algorithm>
#include <cmath>

namespace difftraj::model {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::highway() {
  ModelConfig cfg;
  cfg.hidden = 512;
  cfg.use_lane_encoder = false;
  return cfg;
}

ModelConfig ModelConfig::roundabout() {
  ModelConfig cfg;
  cfg.hidden = 128;
  cfg.use_lane_encoder = true;
  cfg.lane_layers = 3;
  cfg.lane_heads = 4;
  return cfg;
}

Eigen::VectorXd fourier_frequency_bank(int n_frequencies) {
  // Frozen bank: drawn once from a fixed stream, never trained.
  Rng rng(0x5eedf00d);
  Eigen::VectorXd f(n_frequencies);
  for (int i = 0; i < n_frequencies; ++i) f[i] = 16.0 * rng.normal();
  return f;
}

ad::Mat fourier_features(const Eigen::VectorXd& freqs, double t) {
  ad::Mat out(1, 2 * freqs.size());
  for (long i = 0; i < freqs.size(); ++i) {
    out(0, i) = std::sin(2.0 * kPi * freqs[i] * t);
    out(0, freqs.size() + i) = std::cos(2.0 * kPi * freqs[i] * t);
  }
  return out;
}

Predictor::Predictor(const ModelConfig& cfg, uint64_t init_seed)
    : cfg_(cfg), init_seed_(init_seed) {
  if (cfg.hidden % 2 != 0) throw ConfigError("model: hidden width must be even");
  if (cfg.hidden % cfg.attention_heads != 0)
    throw ConfigError("model: hidden width must divide attention heads");
  Rng rng = Rng::derive(init_seed, 0xd1f);
  const int d = cfg.hidden;

  encoder_ = gnn::GraphGru(reg_, "encoder", cfg.agent_feature_dim, d, cfg.gat_heads, rng);
  decoder_ = gnn::GraphGru(reg_, "decoder", d, d, cfg.gat_heads, rng);
  latent_embed_ = nn::Linear(reg_, "latent_embed", 2, d, rng);
  time_freqs_ = fourier_frequency_bank(d / 2);
  time_mlp_ = nn::Mlp(reg_, "time_mlp", d, d, d, rng);
  history_attention_ = nn::MultiheadAttention(reg_, "attn_history", d, cfg.attention_heads, rng);
  if (cfg.use_lane_encoder) {
    lane_env_embed_ = nn::Linear(reg_, "lane_env_embed", cfg.lane_feature_dim, d, rng);
    lane_agent_embed_ = nn::Linear(reg_, "lane_agent_embed", cfg.agent_feature_dim, d, rng);
    for (int i = 0; i < cfg.lane_layers; ++i)
      lane_layers_.emplace_back(reg_, "lane_gat" + std::to_string(i), d, d, cfg.lane_heads, rng);
    lane_attention_ = nn::MultiheadAttention(reg_, "attn_lane", d, cfg.attention_heads, rng);
    fusion_ = nn::Mlp(reg_, "fusion", 2 * d, d, d, rng);
  } else {
    fusion_ = nn::Mlp(reg_, "fusion", d, d, d, rng);
  }
  control_head_ = nn::Linear(reg_, "control_head", d, 2, rng, cfg.control_init_scale);
  ped_field_ = motion::PedestrianField(reg_, "ped_field", cfg.ped_hidden, cfg.ped_depth, rng);
}

namespace {

int union_slot(const std::vector<int64_t>& ids, int64_t id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return -1;
  return static_cast<int>(it - ids.begin());
}

}  // namespace

Predictor::Forward Predictor::forward(ad::Tape& t, const TrajectoryArray& x_t, double time,
                                      const scene::Sample& sample,
                                      const scene::Condition& condition) const {
  const int d = cfg_.hidden;
  const int n_targets = sample.num_targets();
  const int horizon = cfg_.horizon;
  if (x_t.num_agents != n_targets || x_t.horizon != horizon)
    throw ContractViolation("denoise: latent shape does not match the sample");
  if (condition.history.graphs.empty()) throw ContractViolation("denoise: empty history");
  const scene::SceneGraph& g0 = condition.history.latest();
  std::vector<int> target_slots;
  for (int64_t id : sample.target_ids) {
    int slot = g0.index_of(id);
    if (slot < 0) throw ContractViolation("denoise: target agent missing from G_0");
    target_slots.push_back(slot);
  }
  if (g0.node_features.cols() != cfg_.agent_feature_dim)
    throw ContractViolation("denoise: node feature width does not match the profile");
  if (cfg_.use_lane_encoder && !condition.lane.has_value())
    throw ContractViolation("denoise: this profile requires a lane graph");

  // --- history encoding: recurrent cell over the graph sequence, with
  // carry-through hidden states for agents absent at a step.
  std::vector<int64_t> union_ids = condition.history.agent_union();
  const int n_union = static_cast<int>(union_ids.size());
  ad::Var hidden = t.constant(ad::Mat::Zero(n_union, d));
  std::vector<ad::Var> hidden_steps;
  hidden_steps.reserve(condition.history.graphs.size());
  for (const scene::SceneGraph& g : condition.history.graphs) {
    std::vector<int> present;
    present.reserve(g.node_ids.size());
    for (int64_t id : g.node_ids) present.push_back(union_slot(union_ids, id));
    ad::Var sub_h = t.gather_rows(hidden, present);
    ad::Var new_h =
        encoder_.step(t, t.constant(g.node_features), sub_h, gnn::topology_of(g));
    hidden = t.rows_update(hidden, new_h, present);
    hidden_steps.push_back(hidden);
  }

  // --- optional lane encoding over env + agent nodes.
  ad::Var lane_nodes;
  const scene::LaneGraph* lane = nullptr;
  int n_env = 0;
  if (cfg_.use_lane_encoder) {
    lane = &condition.lane.value();
    if (lane->agent_ids != g0.node_ids)
      throw ContractViolation("denoise: lane graph agents disagree with G_0");
    n_env = lane->num_env_nodes();
    std::vector<Eigen::Vector2d> agent_pos;
    for (int i = 0; i < g0.num_nodes(); ++i)
      agent_pos.emplace_back(g0.node_features(i, 0), g0.node_features(i, 1));
    gnn::GraphTopology lane_topo = gnn::lane_topology(*lane, agent_pos);
    ad::Var env_emb = lane_env_embed_.forward(t, t.constant(lane->env_features));
    ad::Var agent_emb = lane_agent_embed_.forward(t, t.constant(g0.node_features));
    lane_nodes = t.concat_rows({env_emb, agent_emb});
    for (size_t i = 0; i < lane_layers_.size(); ++i) {
      lane_nodes = lane_layers_[i].forward(t, lane_nodes, lane_topo);
      if (i + 1 < lane_layers_.size()) lane_nodes = t.silu(lane_nodes);
    }
  }

  // --- latent tokens: one per agent per horizon step, shifted by the
  // shared time embedding.
  ad::Var z = latent_embed_.forward(t, t.constant(x_t.xy));
  ad::Var temb = time_mlp_.forward(t, t.constant(fourier_features(time_freqs_, time)));
  ad::Var queries = t.add_rowvec(z, temb);

  // --- per-agent attention over the agent's own encoded history (and
  // its lane neighborhood), fused into the decoder context.
  std::vector<ad::Var> ctx_parts;
  ctx_parts.reserve(static_cast<size_t>(n_targets));
  for (int a = 0; a < n_targets; ++a) {
    int ua = union_slot(union_ids, sample.target_ids[static_cast<size_t>(a)]);
    std::vector<ad::Var> key_rows;
    key_rows.reserve(hidden_steps.size());
    for (const ad::Var& step : hidden_steps)
      key_rows.push_back(t.gather_rows(step, {ua}));
    ad::Var keys = t.concat_rows(key_rows);

    std::vector<int> q_rows(static_cast<size_t>(horizon));
    for (int k = 0; k < horizon; ++k) q_rows[static_cast<size_t>(k)] = a * horizon + k;
    ad::Var qa = t.gather_rows(queries, q_rows);
    ad::Var att = history_attention_.forward(t, qa, keys);

    ad::Var fuse_in = att;
    if (lane != nullptr) {
      int slot = target_slots[static_cast<size_t>(a)];
      std::vector<int> lane_rows{n_env + slot};
      for (auto [env, agent] : lane->edges)
        if (agent == slot) lane_rows.push_back(env);
      ad::Var lane_keys = t.gather_rows(lane_nodes, lane_rows);
      fuse_in = t.concat_cols(att, lane_attention_.forward(t, qa, lane_keys));
    }
    ctx_parts.push_back(fusion_.forward(t, fuse_in));
  }
  ad::Var ctx = t.concat_rows(ctx_parts);  // (A * horizon, d), agent-major

  // --- decoder: recurrent cell unrolled over the proxy graph G_0,
  // initialized from the encoder's final hidden state.
  gnn::GraphTopology topo0 = gnn::topology_of(g0);
  std::vector<int> g0_union_slots;
  for (int64_t id : g0.node_ids) g0_union_slots.push_back(union_slot(union_ids, id));
  ad::Var dec_h = t.gather_rows(hidden, g0_union_slots);
  ad::Var zero_inputs = t.constant(ad::Mat::Zero(g0.num_nodes(), d));
  std::vector<ad::Var> controls_steps;
  controls_steps.reserve(static_cast<size_t>(horizon));
  for (int k = 0; k < horizon; ++k) {
    std::vector<int> ctx_rows(static_cast<size_t>(n_targets));
    for (int a = 0; a < n_targets; ++a) ctx_rows[static_cast<size_t>(a)] = a * horizon + k;
    ad::Var x_k = t.rows_update(zero_inputs, t.gather_rows(ctx, ctx_rows), target_slots);
    dec_h = decoder_.step(t, x_k, dec_h, topo0);
    ad::Var u_all = control_head_.forward(t, dec_h);
    controls_steps.push_back(t.gather_rows(u_all, target_slots));
  }

  // --- decode the control sequence into positions.
  std::vector<int> step_to_agent_major(static_cast<size_t>(n_targets * horizon));
  for (int a = 0; a < n_targets; ++a)
    for (int k = 0; k < horizon; ++k)
      step_to_agent_major[static_cast<size_t>(a * horizon + k)] = k * n_targets + a;

  Forward out;
  if (!cfg_.use_motion_model) {
    ad::Var offsets_sm = t.concat_rows(controls_steps);
    ad::Var offsets = t.gather_rows(offsets_sm, step_to_agent_major);
    TrajectoryArray anchor = diffusion::make_anchor(sample.init_states, horizon);
    out.x0_hat = t.add(t.constant(anchor.xy), offsets);
    out.controls = offsets;
    return out;
  }

  std::vector<int> veh_idx, ped_idx;
  for (int a = 0; a < n_targets; ++a) {
    if (sample.init_states[static_cast<size_t>(a)].agent_class == scene::AgentClass::kVehicle)
      veh_idx.push_back(a);
    else
      ped_idx.push_back(a);
  }

  std::vector<ad::Var> pos_steps(static_cast<size_t>(horizon));
  std::vector<ad::Var> clamped_steps(static_cast<size_t>(horizon));
  ad::Var zero_a2 = t.constant(ad::Mat::Zero(n_targets, 2));
  for (int k = 0; k < horizon; ++k) {
    pos_steps[static_cast<size_t>(k)] = zero_a2;
    clamped_steps[static_cast<size_t>(k)] = zero_a2;
  }

  if (!veh_idx.empty()) {
    ad::Mat init(static_cast<long>(veh_idx.size()), 4);
    for (size_t i = 0; i < veh_idx.size(); ++i) {
      const scene::AgentState& s = sample.init_states[static_cast<size_t>(veh_idx[i])];
      init.row(static_cast<long>(i)) << s.x, s.y, s.vx, s.vy;
    }
    std::vector<ad::Var> u_veh;
    u_veh.reserve(static_cast<size_t>(horizon));
    for (int k = 0; k < horizon; ++k)
      u_veh.push_back(t.friction_clamp_rows(
          t.gather_rows(controls_steps[static_cast<size_t>(k)], veh_idx), cfg_.vehicle.bound()));
    auto veh_pos = motion::heun_rollout_vehicle(t, init, u_veh, cfg_.dt);
    for (int k = 0; k < horizon; ++k) {
      pos_steps[static_cast<size_t>(k)] =
          t.rows_update(pos_steps[static_cast<size_t>(k)], veh_pos[static_cast<size_t>(k)], veh_idx);
      clamped_steps[static_cast<size_t>(k)] = t.rows_update(
          clamped_steps[static_cast<size_t>(k)], u_veh[static_cast<size_t>(k)], veh_idx);
    }
  }
  if (!ped_idx.empty()) {
    ad::Mat init(static_cast<long>(ped_idx.size()), 2);
    for (size_t i = 0; i < ped_idx.size(); ++i) {
      const scene::AgentState& s = sample.init_states[static_cast<size_t>(ped_idx[i])];
      init.row(static_cast<long>(i)) << s.x, s.y;
    }
    std::vector<ad::Var> u_ped;
    u_ped.reserve(static_cast<size_t>(horizon));
    for (int k = 0; k < horizon; ++k)
      u_ped.push_back(t.gather_rows(controls_steps[static_cast<size_t>(k)], ped_idx));
    auto ped_pos = motion::heun_rollout_pedestrian(t, ped_field_, init, u_ped, cfg_.dt);
    for (int k = 0; k < horizon; ++k) {
      pos_steps[static_cast<size_t>(k)] =
          t.rows_update(pos_steps[static_cast<size_t>(k)], ped_pos[static_cast<size_t>(k)], ped_idx);
      clamped_steps[static_cast<size_t>(k)] = t.rows_update(
          clamped_steps[static_cast<size_t>(k)], u_ped[static_cast<size_t>(k)], ped_idx);
    }
  }

  out.x0_hat = t.gather_rows(t.concat_rows(pos_steps), step_to_agent_major);
  out.controls = t.gather_rows(t.concat_rows(clamped_steps), step_to_agent_major);
  return out;
}

diffusion::TrajectoryArray Predictor::predict_clean(const TrajectoryArray& x_t, double t,
                                                    const scene::Sample& sample,
                                                    const scene::Condition& condition) const {
  return denoise(x_t, t, sample, condition).x0_hat;
}

Predictor::DenoiseResult Predictor::denoise(const TrajectoryArray& x_t, double time,
                                            const scene::Sample& sample,
                                            const scene::Condition& condition) const {
  ad::Tape t;
  Forward f = forward(t, x_t, time, sample, condition);
  DenoiseResult res;
  res.x0_hat = x_t;
  res.x0_hat.xy = t.value(f.x0_hat);
  res.controls = x_t;
  res.controls.xy = t.value(f.controls);
  return res;
}

Predictor::TapeLoss Predictor::sample_loss(ad::Tape& t, const scene::Sample& sample,
                                           double p_drop, Rng& rng,
                                           const diffusion::DiffusionSchedule& sched) const {
  TrajectoryArray x0 = diffusion::ground_truth_array(sample);
  TrajectoryArray anchor = diffusion::make_anchor(sample.init_states, x0.horizon);
  double time = rng.uniform();
  ad::Mat noise = diffusion::standard_normal(rng, x0.xy.rows(), x0.xy.cols());
  bool drop = rng.bernoulli(p_drop);
  TrajectoryArray x_t = diffusion::forward_diffuse(x0, anchor, time, noise, sched);

  scene::Condition stripped;
  const scene::Condition& cond =
      drop ? (stripped = scene::strip_to_self_loops(sample.condition)) : sample.condition;
  Forward f = forward(t, x_t, time, sample, cond);

  ad::Var err = t.sub(f.x0_hat, t.constant(x0.xy));
  ad::Var loss = t.mean_all(t.mul(err, err));

  if (cfg_.use_motion_model && ped_control_weight > 0.0) {
    std::vector<int> ped_rows;
    for (int a = 0; a < sample.num_targets(); ++a) {
      if (sample.init_states[static_cast<size_t>(a)].agent_class != scene::AgentClass::kPedestrian)
        continue;
      for (int k = 0; k < x0.horizon; ++k) ped_rows.push_back(a * x0.horizon + k);
    }
    if (!ped_rows.empty()) {
      ad::Mat v_gt(static_cast<long>(ped_rows.size()), 2);
      long r = 0;
      for (int a = 0; a < sample.num_targets(); ++a) {
        if (sample.init_states[static_cast<size_t>(a)].agent_class !=
            scene::AgentClass::kPedestrian)
          continue;
        for (int k = 0; k < x0.horizon; ++k) {
          Eigen::Vector2d prev = k == 0 ? sample.init_states[static_cast<size_t>(a)].position()
                                        : Eigen::Vector2d(x0.at(a, k - 1));
          v_gt.row(r++) = (Eigen::Vector2d(x0.at(a, k)) - prev).transpose() / cfg_.dt;
        }
      }
      ad::Var u_ped = t.gather_rows(f.controls, ped_rows);
      ad::Var verr = t.sub(u_ped, t.constant(v_gt));
      loss = t.add(loss, t.scale(t.mean_all(t.mul(verr, verr)), ped_control_weight));
    }
  }
  return {loss, drop};
}

double Predictor::training_loss(const std::vector<scene::Sample>& batch, double p_drop, Rng& rng,
                                const diffusion::DiffusionSchedule& sched) const {
  if (batch.empty()) throw ContractViolation("training_loss: empty batch");
  double total = 0.0;
  for (const scene::Sample& s : batch) {
    ad::Tape t;
    total += t.value(sample_loss(t, s, p_drop, rng, sched).loss)(0, 0);
  }
  return total / static_cast<double>(batch.size());
}

Predictor::StepStats Predictor::training_step(const std::vector<const scene::Sample*>& batch,
                                              double p_drop, Rng& rng,
                                              const diffusion::DiffusionSchedule& sched) {
  if (batch.empty()) throw ContractViolation("training_step: empty batch");
  StepStats stats;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const scene::Sample* s : batch) {
    ad::Tape t;
    TapeLoss tl = sample_loss(t, *s, p_drop, rng, sched);
    stats.loss += t.value(tl.loss)(0, 0) * scale;
    t.backward(tl.loss, scale);
    if (tl.used_stripped) ++stats.stripped_conditions;
    else ++stats.full_conditions;
  }
  return stats;
}

}  // namespace difftraj::model
