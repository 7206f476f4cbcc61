#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "difftraj/scene.hpp"

namespace difftraj::scene {

namespace {

constexpr int kSceneFrames = kHistory + kHorizon;  // one window per scene
constexpr int64_t kFrameStride = 1000;             // gap between scenes breaks windows
constexpr double kLaneY0 = -1.75;
constexpr double kLaneY1 = 1.75;
constexpr double kRoundaboutRadius = 25.0;

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

struct Track {
  int64_t agent_id;
  AgentClass cls;
  std::vector<Eigen::Vector2d> pos;  // kSceneFrames points, 0.2 s apart
};

struct SceneTag {
  std::string kind;
  bool interacting;
};

// Velocities and accelerations as central differences of the sampled
// positions, so every emitted feature is consistent with the track.
void emit_track(RawRecording& rec, int64_t frame0, const Track& trk) {
  const int n = static_cast<int>(trk.pos.size());
  auto at = [&](int k) { return trk.pos[static_cast<size_t>(k)]; };
  auto vel = [&](int k) -> Eigen::Vector2d {
    if (k == 0) return (at(1) - at(0)) / kDt;
    if (k == n - 1) return (at(n - 1) - at(n - 2)) / kDt;
    return (at(k + 1) - at(k - 1)) / (2.0 * kDt);
  };
  for (int k = 0; k < n; ++k) {
    Eigen::Vector2d v = vel(k);
    Eigen::Vector2d a;
    if (k == 0) a = (vel(1) - vel(0)) / kDt;
    else if (k == n - 1) a = (vel(n - 1) - vel(n - 2)) / kDt;
    else a = (vel(k + 1) - vel(k - 1)) / (2.0 * kDt);

    AgentState s;
    s.agent_id = trk.agent_id;
    s.agent_class = trk.cls;
    s.x = at(k).x();
    s.y = at(k).y();
    s.vx = v.x();
    s.vy = v.y();
    s.ax = a.x();
    s.ay = a.y();
    s.psi = (v.norm() > 1e-9) ? std::atan2(v.y(), v.x()) : 0.0;
    rec.rows.push_back({frame0 + k, s});
  }
}

Track straight_track(int64_t id, double x0, double y0, double speed, double lane_shift,
                     double t_start, double duration) {
  Track trk{id, AgentClass::kVehicle, {}};
  trk.pos.reserve(kSceneFrames);
  for (int k = 0; k < kSceneFrames; ++k) {
    double t = k * kDt;
    double y = y0 + lane_shift * smoothstep((t - t_start) / duration);
    trk.pos.emplace_back(x0 + speed * t, y);
  }
  return trk;
}

// Scenes come in matched pairs: the even scene keeps lane at constant
// speed; its odd twin reuses the same follower but adds a slower lead
// vehicle ahead, and the follower changes lane after the prediction
// instant. Follower histories are identical within a pair, so with
// inter-agent edges removed the two cases are indistinguishable.
void straight_scenes(RawRecording& rec, std::vector<SceneTag>& tags, int n, Rng& rng) {
  rec.meta.lane_centers = {kLaneY0, kLaneY1};
  rec.meta.lane_half_width = 1.75;
  rec.meta.road_half_width = 3.5;

  const double t_pred = (kHistory - 1) * kDt;
  double x0 = 0, speed = 0, delta = 0, gap = 0;
  for (int i = 0; i < n; ++i) {
    int64_t frame0 = i * kFrameStride;
    int64_t base_id = i * 100;
    bool lead_present = (i % 2) == 1;
    if (!lead_present) {
      x0 = rng.uniform() * 40.0;
      speed = 20.0 + rng.uniform() * 8.0;
      delta = 0.2 + rng.uniform() * 0.8;   // lane change starts after t_pred
      gap = 25.0 + rng.uniform() * 15.0;
    }

    double shift = lead_present ? (kLaneY1 - kLaneY0) : 0.0;
    emit_track(rec, frame0,
               straight_track(base_id + 1, x0, kLaneY0, speed, shift, t_pred + delta, 3.0));
    if (lead_present)
      emit_track(rec, frame0,
                 straight_track(base_id + 2, x0 + gap, kLaneY0, speed - 8.0, 0.0, 0.0, 1.0));

    tags.push_back({lead_present ? "lane_change" : "constant_speed", lead_present});
  }
}

Track circular_track(int64_t id, double theta0, double omega) {
  Track trk{id, AgentClass::kVehicle, {}};
  trk.pos.reserve(kSceneFrames);
  for (int k = 0; k < kSceneFrames; ++k) {
    double th = theta0 + omega * k * kDt;
    trk.pos.emplace_back(kRoundaboutRadius * std::cos(th), kRoundaboutRadius * std::sin(th));
  }
  return trk;
}

void circular_scenes(RawRecording& rec, std::vector<SceneTag>& tags, int n, Rng& rng) {
  rec.meta.center = {0.0, 0.0};
  for (int i = 0; i < n; ++i) {
    int64_t frame0 = i * kFrameStride;
    int64_t base_id = i * 100;

    int vehicles = 1 + static_cast<int>(rng.integer(3));
    for (int a = 0; a < vehicles; ++a) {
      double theta0 = rng.uniform() * 2.0 * kPi;
      double speed = 6.0 + rng.uniform() * 4.0;
      emit_track(rec, frame0, circular_track(base_id + 1 + a, theta0, speed / kRoundaboutRadius));
    }
    if (rng.uniform() < 0.3) {
      Track ped{base_id + 50, AgentClass::kPedestrian, {}};
      double px = kRoundaboutRadius + 4.0 + rng.uniform() * 2.0;
      double py0 = -6.0 + rng.uniform() * 2.0;
      for (int k = 0; k < kSceneFrames; ++k) ped.pos.emplace_back(px, py0 + 1.4 * k * kDt);
      emit_track(rec, frame0, ped);
    }
    tags.push_back({"roundabout", vehicles >= 2});
  }
}

void build_world(SyntheticKind kind, int n, uint64_t seed, RawRecording& rec,
                 std::vector<SceneTag>& tags) {
  if (n < 1) throw ContractViolation("synthetic scenes: n must be >= 1");
  rec.rate_hz = 1.0 / kDt;
  Rng rng(seed);
  if (kind == SyntheticKind::kStraightLaneChange) straight_scenes(rec, tags, n, rng);
  else circular_scenes(rec, tags, n, rng);
  std::stable_sort(rec.rows.begin(), rec.rows.end(),
                   [](const RawRecording::Row& a, const RawRecording::Row& b) {
                     return a.frame != b.frame ? a.frame < b.frame
                                               : a.state.agent_id < b.state.agent_id;
                   });
}

}  // namespace

RawRecording synthetic_recording(SyntheticKind kind, int n, uint64_t seed) {
  RawRecording rec;
  std::vector<SceneTag> tags;
  build_world(kind, n, seed, rec, tags);
  return rec;
}

std::vector<Polyline> synthetic_road_polylines(SyntheticKind kind) {
  std::vector<Polyline> lines;
  if (kind == SyntheticKind::kStraightLaneChange) {
    for (double y : {-3.5, 0.0, 3.5}) {
      Polyline pl;
      pl.type = y == 0.0 ? LineType::kCenterline : LineType::kBoundary;
      for (double x = -60.0; x <= 260.0; x += 20.0) pl.points.emplace_back(x, y);
      lines.push_back(std::move(pl));
    }
  } else {
    for (double r : {kRoundaboutRadius - 2.0, kRoundaboutRadius, kRoundaboutRadius + 2.0}) {
      Polyline pl;
      pl.type = r == kRoundaboutRadius ? LineType::kCenterline : LineType::kBoundary;
      for (int d = 0; d <= 360; d += 5)
        pl.points.emplace_back(r * std::cos(d * kPi / 180.0), r * std::sin(d * kPi / 180.0));
      lines.push_back(std::move(pl));
    }
  }
  return lines;
}

std::vector<Sample> generate_synthetic_scenes(SyntheticKind kind, int n, uint64_t seed) {
  RawRecording rec;
  std::vector<SceneTag> tags;
  build_world(kind, n, seed, rec, tags);

  Profile profile =
      kind == SyntheticKind::kStraightLaneChange ? Profile::kHighway : Profile::kRoundabout;
  std::vector<Sample> samples = assemble_samples(rec, profile);
  if (samples.size() != static_cast<size_t>(n))
    throw DataError("synthetic scenes: window assembly did not yield one sample per scene");
  if (kind == SyntheticKind::kCircularRoundabout)
    attach_lane_graphs(samples, synthetic_road_polylines(kind));

  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].kind = tags[i].kind;
    samples[i].interacting = tags[i].interacting;
  }
  return samples;
}

}  // namespace difftraj::scene
