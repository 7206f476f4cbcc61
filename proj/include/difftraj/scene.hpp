#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "difftraj/common.hpp"

namespace difftraj::scene {

enum class AgentClass { kVehicle, kPedestrian };
enum class Profile { kHighway, kRoundabout };
enum class SyntheticKind { kStraightLaneChange, kCircularRoundabout };
enum class LineType { kBoundary, kCenterline };

// One agent's kinematic snapshot. Yaw is kept in (-pi, pi].
struct AgentState {
  double x = 0, y = 0;
  double vx = 0, vy = 0;
  double ax = 0, ay = 0;
  double psi = 0;
  AgentClass agent_class = AgentClass::kVehicle;
  int64_t agent_id = 0;

  bool finite() const;
  Eigen::Vector2d position() const { return {x, y}; }
  Eigen::Vector2d velocity() const { return {vx, vy}; }
};

// Per-profile node feature layout. Both profiles currently use 9 agent
// features: the 7 base kinematic fields plus two profile-specific ones
// (dy, dr on highways; r, theta on roundabouts).
int agent_feature_dim(Profile profile);

// Extra scene geometry used when computing profile-specific features.
struct SceneMeta {
  double rate_hz = 5.0;
  std::vector<double> lane_centers;   // highway: lane centerline y values
  double lane_half_width = 1.75;
  double road_half_width = 3.5;
  Eigen::Vector2d center{0.0, 0.0};   // roundabout center
};

// Snapshot interaction graph. Nodes are sorted by agent id; the edge
// list is sorted by (dst, src), contains a self-loop for every node and
// carries the Euclidean endpoint distance as its feature.
struct SceneGraph {
  int timestamp = 0;
  std::vector<int64_t> node_ids;
  Eigen::MatrixXd node_features;              // (n, agent_feature_dim)
  std::vector<std::pair<int, int>> edges;     // (src, dst) indices
  Eigen::VectorXd edge_features;

  int num_nodes() const { return static_cast<int>(node_ids.size()); }
  int index_of(int64_t id) const;
};

struct Polyline {
  LineType type = LineType::kBoundary;
  std::vector<Eigen::Vector2d> points;
};

// Road-agent graph: resampled boundary/lane-line points connected to
// agents by directed environment->agent edges (k nearest per agent).
struct LaneGraph {
  Eigen::MatrixXd env_features;               // (m, 3): x, y, line-type tag
  std::vector<int64_t> agent_ids;
  std::vector<std::pair<int, int>> edges;     // (env index, agent slot)

  int num_env_nodes() const { return static_cast<int>(env_features.rows()); }
};

// Ordered history H = {G_{1-h}, ..., G_0}. Agents may enter or leave
// within the window; presence is given by each graph's node set.
struct ObservationWindow {
  std::vector<SceneGraph> graphs;

  const SceneGraph& latest() const;
  std::vector<int64_t> agent_union() const;
};

struct Condition {
  ObservationWindow history;
  std::optional<LaneGraph> lane;  // absent for the highway profile
};

// Copy of the condition with every history edge set reduced to
// self-loops, disabling inter-agent message passing.
Condition strip_to_self_loops(const Condition& c);

void validate_condition(const Condition& c);

// One training/evaluation case: a condition, the agents to predict and
// their ground-truth futures (kHorizon steps each, 0.2 s apart).
struct Sample {
  Condition condition;
  SceneGraph decode_graph;                 // stored copy of G_0
  std::vector<int64_t> target_ids;
  std::vector<AgentState> init_states;     // states at the prediction instant
  std::vector<Eigen::MatrixXd> future;     // per target: (kHorizon, 2)
  Profile profile = Profile::kHighway;

  // Synthetic metadata (empty for recorded data).
  std::string kind;
  bool interacting = false;

  int num_targets() const { return static_cast<int>(target_ids.size()); }
};

// Raw recording used by the loader and the synthetic generator. Rows
// are (frame, state) sorted by frame then agent id; frames may contain
// gaps, in which case sliding windows never span them.
struct RawRecording {
  double rate_hz = 5.0;
  SceneMeta meta;
  struct Row {
    int64_t frame;
    AgentState state;
  };
  std::vector<Row> rows;
};

struct AssemblyOptions {
  double interaction_radius = 50.0;  // inter-agent edge criterion
  int history = kHistory;
  int horizon = kHorizon;
};

// --- operations -----------------------------------------------------------

std::vector<Sample> load_scene_csv(const std::string& path, Profile profile);

SceneGraph build_interaction_graph(const std::vector<AgentState>& states, double radius);
SceneGraph build_interaction_graph(const std::vector<AgentState>& states, double radius,
                                   Profile profile, const SceneMeta& meta, int timestamp);

LaneGraph build_lane_graph(const std::vector<AgentState>& states,
                           const std::vector<Polyline>& polylines, double spacing, int k);

std::vector<Sample> generate_synthetic_scenes(SyntheticKind kind, int n, uint64_t seed);

// Static road geometry matching the synthetic scenes (for lane graphs
// and plotting).
std::vector<Polyline> synthetic_road_polylines(SyntheticKind kind);

// The raw recording backing generate_synthetic_scenes, for writing a
// loadable CSV of the same scenes.
RawRecording synthetic_recording(SyntheticKind kind, int n, uint64_t seed);

// Assembles sliding-window samples from a recording already on the
// 0.2 s grid. Exposed for the synthetic generator and tests.
std::vector<Sample> assemble_samples(const RawRecording& rec, Profile profile,
                                     const AssemblyOptions& opts = {});

// Attaches a lane graph (built from `polylines`) to every sample.
void attach_lane_graphs(std::vector<Sample>& samples, const std::vector<Polyline>& polylines,
                        double spacing = 2.0, int k = 4);

std::vector<Polyline> load_polylines(const std::string& path);
void write_polylines(const std::string& path, const std::vector<Polyline>& lines);
void write_scene_csv(const std::string& path, const RawRecording& rec);

// Feature vector for one agent under the given profile.
Eigen::VectorXd node_feature_vector(const AgentState& s, Profile profile, const SceneMeta& meta);

}  // namespace difftraj::scene
