#include <algorithm>
#include <cmath>
#include <set>

#include "difftraj/scene.hpp"

namespace difftraj::scene {

bool AgentState::finite() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(vx) && std::isfinite(vy) &&
         std::isfinite(ax) && std::isfinite(ay) && std::isfinite(psi);
}

int agent_feature_dim(Profile) { return 9; }

int SceneGraph::index_of(int64_t id) const {
  auto it = std::lower_bound(node_ids.begin(), node_ids.end(), id);
  if (it == node_ids.end() || *it != id) return -1;
  return static_cast<int>(it - node_ids.begin());
}

const SceneGraph& ObservationWindow::latest() const {
  if (graphs.empty()) throw ContractViolation("ObservationWindow: empty history");
  return graphs.back();
}

std::vector<int64_t> ObservationWindow::agent_union() const {
  std::set<int64_t> ids;
  for (const SceneGraph& g : graphs) ids.insert(g.node_ids.begin(), g.node_ids.end());
  return {ids.begin(), ids.end()};
}

namespace {

double clamp_unit(double v, const char* what) {
  if (v < -1.0 || v > 1.0) {
    log_warning(std::string(what) + " outside [-1, 1], clamping");
    return std::clamp(v, -1.0, 1.0);
  }
  return v;
}

}  // namespace

Eigen::VectorXd node_feature_vector(const AgentState& s, Profile profile, const SceneMeta& meta) {
  Eigen::VectorXd f(agent_feature_dim(profile));
  f << s.x, s.y, s.vx, s.vy, s.ax, s.ay, s.psi, 0.0, 0.0;
  if (profile == Profile::kHighway) {
    if (!meta.lane_centers.empty()) {
      double nearest = meta.lane_centers.front();
      for (double c : meta.lane_centers)
        if (std::abs(s.y - c) < std::abs(s.y - nearest)) nearest = c;
      f[7] = clamp_unit((s.y - nearest) / meta.lane_half_width, "lane deviation dy");
      f[8] = clamp_unit(s.y / meta.road_half_width, "road deviation dr");
    }
  } else {
    Eigen::Vector2d d = s.position() - meta.center;
    f[7] = d.norm();
    f[8] = std::atan2(d.y(), d.x());
  }
  return f;
}

SceneGraph build_interaction_graph(const std::vector<AgentState>& states, double radius,
                                   Profile profile, const SceneMeta& meta, int timestamp) {
  if (radius <= 0.0) throw ContractViolation("build_interaction_graph: radius must be > 0");

  std::vector<AgentState> sorted = states;
  std::sort(sorted.begin(), sorted.end(),
            [](const AgentState& a, const AgentState& b) { return a.agent_id < b.agent_id; });

  SceneGraph g;
  g.timestamp = timestamp;
  const int n = static_cast<int>(sorted.size());
  g.node_ids.reserve(sorted.size());
  g.node_features.resize(n, agent_feature_dim(profile));
  for (int i = 0; i < n; ++i) {
    if (!sorted[static_cast<size_t>(i)].finite())
      throw DataError("build_interaction_graph: non-finite agent state");
    g.node_ids.push_back(sorted[static_cast<size_t>(i)].agent_id);
    g.node_features.row(i) =
        node_feature_vector(sorted[static_cast<size_t>(i)], profile, meta).transpose();
  }

  // Self-loop plus every pair within the radius; edges sorted by (dst, src).
  std::vector<double> feats;
  for (int dst = 0; dst < n; ++dst) {
    for (int src = 0; src < n; ++src) {
      if (src == dst) {
        g.edges.emplace_back(src, dst);
        feats.push_back(0.0);
        continue;
      }
      double d = (sorted[static_cast<size_t>(src)].position() -
                  sorted[static_cast<size_t>(dst)].position())
                     .norm();
      if (d <= radius) {
        g.edges.emplace_back(src, dst);
        feats.push_back(d);
      }
    }
  }
  g.edge_features = Eigen::Map<Eigen::VectorXd>(feats.data(), static_cast<long>(feats.size()));
  return g;
}

SceneGraph build_interaction_graph(const std::vector<AgentState>& states, double radius) {
  return build_interaction_graph(states, radius, Profile::kHighway, SceneMeta{}, 0);
}

namespace {

// Resamples a polyline into ceil(L/spacing)+1 evenly spaced points so
// that both endpoints are kept and the step never exceeds `spacing`.
std::vector<Eigen::Vector2d> resample(const Polyline& line, double spacing) {
  const auto& pts = line.points;
  if (pts.size() < 2) return pts;
  double total = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) total += (pts[i] - pts[i - 1]).norm();
  if (total <= 0.0) return {pts.front()};
  int segments = std::max(1, static_cast<int>(std::ceil(total / spacing - 1e-9)));
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<size_t>(segments) + 1);
  double step = total / segments;
  size_t seg = 1;
  double seg_start = 0.0;
  double seg_len = (pts[1] - pts[0]).norm();
  for (int i = 0; i <= segments; ++i) {
    double s = std::min(i * step, total);
    while (seg + 1 < pts.size() && s > seg_start + seg_len) {
      seg_start += seg_len;
      ++seg;
      seg_len = (pts[seg] - pts[seg - 1]).norm();
    }
    double u = seg_len > 0.0 ? (s - seg_start) / seg_len : 0.0;
    out.push_back(pts[seg - 1] + u * (pts[seg] - pts[seg - 1]));
  }
  return out;
}

}  // namespace

LaneGraph build_lane_graph(const std::vector<AgentState>& states,
                           const std::vector<Polyline>& polylines, double spacing, int k) {
  if (spacing <= 0.0) throw ContractViolation("build_lane_graph: spacing must be > 0");
  if (k < 1) throw ContractViolation("build_lane_graph: k must be >= 1");

  std::vector<AgentState> sorted = states;
  std::sort(sorted.begin(), sorted.end(),
            [](const AgentState& a, const AgentState& b) { return a.agent_id < b.agent_id; });

  LaneGraph lg;
  std::vector<Eigen::Vector3d> env;
  for (const Polyline& line : polylines) {
    double tag = line.type == LineType::kCenterline ? 1.0 : 0.0;
    for (const Eigen::Vector2d& p : resample(line, spacing)) env.emplace_back(p.x(), p.y(), tag);
  }
  lg.env_features.resize(static_cast<long>(env.size()), 3);
  for (size_t i = 0; i < env.size(); ++i) lg.env_features.row(static_cast<long>(i)) = env[i].transpose();

  for (const AgentState& s : sorted) lg.agent_ids.push_back(s.agent_id);

  const int m = lg.num_env_nodes();
  for (size_t a = 0; a < sorted.size(); ++a) {
    std::vector<std::pair<double, int>> dist;
    dist.reserve(static_cast<size_t>(m));
    for (int e = 0; e < m; ++e) {
      Eigen::Vector2d p = lg.env_features.row(e).head<2>().transpose();
      dist.emplace_back((p - sorted[a].position()).norm(), e);
    }
    int take = std::min(k, m);
    std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
    std::vector<int> chosen;
    for (int i = 0; i < take; ++i) chosen.push_back(dist[static_cast<size_t>(i)].second);
    std::sort(chosen.begin(), chosen.end());
    for (int e : chosen) lg.edges.emplace_back(e, static_cast<int>(a));
  }
  return lg;
}

Condition strip_to_self_loops(const Condition& c) {
  Condition out = c;
  for (SceneGraph& g : out.history.graphs) {
    g.edges.clear();
    g.edge_features.resize(g.num_nodes());
    for (int i = 0; i < g.num_nodes(); ++i) {
      g.edges.emplace_back(i, i);
      g.edge_features[i] = 0.0;
    }
  }
  return out;
}

void validate_condition(const Condition& c) {
  if (c.history.graphs.empty()) throw ContractViolation("Condition: empty history");
  if (c.history.graphs.size() > static_cast<size_t>(kHistory))
    throw ContractViolation("Condition: history longer than the observation window");
  if (c.lane.has_value()) {
    const auto& g0 = c.history.latest();
    if (c.lane->agent_ids != g0.node_ids)
      throw ContractViolation("Condition: lane graph agents disagree with G_0");
  }
}

void attach_lane_graphs(std::vector<Sample>& samples, const std::vector<Polyline>& polylines,
                        double spacing, int k) {
  for (Sample& s : samples) {
    const SceneGraph& g0 = s.condition.history.latest();
    std::vector<AgentState> present;
    // Rebuild agent states at the prediction instant from G_0 features.
    for (int i = 0; i < g0.num_nodes(); ++i) {
      AgentState a;
      a.agent_id = g0.node_ids[static_cast<size_t>(i)];
      a.x = g0.node_features(i, 0);
      a.y = g0.node_features(i, 1);
      present.push_back(a);
    }
    s.condition.lane = build_lane_graph(present, polylines, spacing, k);
    validate_condition(s.condition);
  }
}

}  // namespace difftraj::scene
