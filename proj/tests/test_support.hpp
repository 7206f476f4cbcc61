#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "difftraj/diffusion.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::testing {

// Small hand-built sample: straight-moving agents, short history and
// horizon, highway profile (no lane graph).
inline scene::Sample make_toy_sample(const std::vector<int64_t>& ids, int history, int horizon,
                                     bool second_is_pedestrian = false) {
  scene::Sample sample;
  sample.profile = scene::Profile::kHighway;

  std::vector<scene::AgentState> base;
  for (size_t i = 0; i < ids.size(); ++i) {
    scene::AgentState s;
    s.agent_id = ids[i];
    s.x = 10.0 * static_cast<double>(i);
    s.y = 1.5 * static_cast<double>(i);
    s.vx = 5.0 + 2.0 * static_cast<double>(i);
    s.vy = 0.3 * static_cast<double>(i);
    s.psi = std::atan2(s.vy, s.vx);
    if (second_is_pedestrian && i == 1) {
      s.agent_class = scene::AgentClass::kPedestrian;
      s.vx = 1.0;
      s.vy = 0.8;
    }
    base.push_back(s);
  }

  for (int h = 0; h < history; ++h) {
    std::vector<scene::AgentState> at;
    double t = (h - (history - 1)) * kDt;
    for (const scene::AgentState& s : base) {
      scene::AgentState m = s;
      m.x += s.vx * t;
      m.y += s.vy * t;
      at.push_back(m);
    }
    sample.condition.history.graphs.push_back(scene::build_interaction_graph(
        at, 100.0, scene::Profile::kHighway, scene::SceneMeta{}, h - (history - 1)));
  }
  sample.decode_graph = sample.condition.history.latest();

  for (const scene::AgentState& s : base) {
    sample.target_ids.push_back(s.agent_id);
    sample.init_states.push_back(s);
    Eigen::MatrixXd fut(horizon, 2);
    for (int k = 0; k < horizon; ++k) {
      double t = (k + 1) * kDt;
      fut(k, 0) = s.x + s.vx * t + 0.05 * t * t;
      fut(k, 1) = s.y + s.vy * t - 0.02 * t * t;
    }
    sample.future.push_back(fut);
  }
  return sample;
}

inline scene::SceneGraph relabel_graph(const scene::SceneGraph& g,
                                       const std::map<int64_t, int64_t>& id_map) {
  scene::SceneGraph out;
  out.timestamp = g.timestamp;
  std::vector<std::pair<int64_t, int>> order;  // (new id, old row)
  for (int i = 0; i < g.num_nodes(); ++i)
    order.emplace_back(id_map.at(g.node_ids[static_cast<size_t>(i)]), i);
  std::sort(order.begin(), order.end());
  std::vector<int> new_row_of_old(static_cast<size_t>(g.num_nodes()));
  out.node_features.resize(g.node_features.rows(), g.node_features.cols());
  for (size_t r = 0; r < order.size(); ++r) {
    out.node_ids.push_back(order[r].first);
    out.node_features.row(static_cast<long>(r)) = g.node_features.row(order[r].second);
    new_row_of_old[static_cast<size_t>(order[r].second)] = static_cast<int>(r);
  }
  struct E {
    int src, dst;
    double f;
  };
  std::vector<E> edges;
  for (size_t e = 0; e < g.edges.size(); ++e)
    edges.push_back({new_row_of_old[static_cast<size_t>(g.edges[e].first)],
                     new_row_of_old[static_cast<size_t>(g.edges[e].second)],
                     g.edge_features[static_cast<long>(e)]});
  std::sort(edges.begin(), edges.end(),
            [](const E& a, const E& b) { return a.dst != b.dst ? a.dst < b.dst : a.src < b.src; });
  out.edge_features.resize(static_cast<long>(edges.size()));
  for (size_t e = 0; e < edges.size(); ++e) {
    out.edges.emplace_back(edges[e].src, edges[e].dst);
    out.edge_features[static_cast<long>(e)] = edges[e].f;
  }
  return out;
}

// Relabels agent ids everywhere and presents the targets in a permuted
// order, for equivariance checks.
inline scene::Sample relabel_sample(const scene::Sample& s,
                                    const std::map<int64_t, int64_t>& id_map,
                                    const std::vector<int>& target_perm) {
  scene::Sample out;
  out.profile = s.profile;
  out.kind = s.kind;
  out.interacting = s.interacting;
  for (const auto& g : s.condition.history.graphs)
    out.condition.history.graphs.push_back(relabel_graph(g, id_map));
  out.decode_graph = out.condition.history.latest();
  if (s.condition.lane.has_value()) {
    scene::LaneGraph lg = *s.condition.lane;
    scene::LaneGraph relabeled;
    relabeled.env_features = lg.env_features;
    std::vector<std::pair<int64_t, int>> order;
    for (size_t i = 0; i < lg.agent_ids.size(); ++i)
      order.emplace_back(id_map.at(lg.agent_ids[i]), static_cast<int>(i));
    std::sort(order.begin(), order.end());
    std::vector<int> new_slot(lg.agent_ids.size());
    for (size_t r = 0; r < order.size(); ++r) {
      relabeled.agent_ids.push_back(order[r].first);
      new_slot[static_cast<size_t>(order[r].second)] = static_cast<int>(r);
    }
    for (auto [env, agent] : lg.edges)
      relabeled.edges.emplace_back(env, new_slot[static_cast<size_t>(agent)]);
    std::sort(relabeled.edges.begin(), relabeled.edges.end(),
              [](auto a, auto b) { return a.second != b.second ? a.second < b.second : a.first < b.first; });
    out.condition.lane = std::move(relabeled);
  }
  for (int idx : target_perm) {
    out.target_ids.push_back(id_map.at(s.target_ids[static_cast<size_t>(idx)]));
    scene::AgentState init = s.init_states[static_cast<size_t>(idx)];
    init.agent_id = id_map.at(init.agent_id);
    out.init_states.push_back(init);
    out.future.push_back(s.future[static_cast<size_t>(idx)]);
  }
  return out;
}

inline diffusion::TrajectoryArray permute_latent(const diffusion::TrajectoryArray& x,
                                                 const std::vector<int>& target_perm) {
  diffusion::TrajectoryArray out(static_cast<int>(target_perm.size()), x.horizon);
  for (size_t a = 0; a < target_perm.size(); ++a)
    out.set_agent_block(static_cast<int>(a), x.agent_block(target_perm[a]));
  return out;
}

}  // namespace difftraj::testing
