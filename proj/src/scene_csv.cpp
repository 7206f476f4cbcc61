#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "difftraj/scene.hpp"

namespace difftraj::scene {

namespace {

constexpr const char* kColumns[] = {"frame", "agent_id", "agent_class", "x", "y",
                                    "vx",    "vy",       "ax",          "ay", "psi"};

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Header row: "# rate_hz=25 lane_centers=-1.75,1.75 center=0,0 ...".
SceneMeta parse_header(const std::string& line) {
  SceneMeta meta;
  bool have_rate = false;
  std::istringstream ss(line.substr(1));
  std::string tok;
  while (ss >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    std::string key = tok.substr(0, eq);
    std::string val = tok.substr(eq + 1);
    if (key == "rate_hz") {
      meta.rate_hz = std::stod(val);
      have_rate = true;
    } else if (key == "lane_centers") {
      for (const std::string& v : split(val, ',')) meta.lane_centers.push_back(std::stod(v));
    } else if (key == "lane_half_width") {
      meta.lane_half_width = std::stod(val);
    } else if (key == "road_half_width") {
      meta.road_half_width = std::stod(val);
    } else if (key == "center") {
      auto parts = split(val, ',');
      if (parts.size() != 2) throw FormatError("scene csv: malformed center=");
      meta.center = {std::stod(parts[0]), std::stod(parts[1])};
    }
  }
  if (!have_rate) throw FormatError("scene csv: header row must declare rate_hz");
  return meta;
}

double parse_cell(const std::string& cell) {
  std::string t = trim(cell);
  if (t.empty()) return std::nan("");
  return std::stod(t);
}

// Central differences on the 0.2 s grid; one-sided at the ends.
void reconstruct_missing(RawRecording& rec) {
  std::map<int64_t, std::vector<RawRecording::Row*>> by_agent;
  for (auto& row : rec.rows) by_agent[row.state.agent_id].push_back(&row);

  auto diff = [](double next, double prev, double dt) { return (next - prev) / dt; };
  for (auto& [id, rows] : by_agent) {
    const int n = static_cast<int>(rows.size());
    auto grad = [&](auto get, int i, double dt) {
      if (n == 1) return 0.0;
      if (i == 0) return diff(get(1), get(0), dt);
      if (i == n - 1) return diff(get(n - 1), get(n - 2), dt);
      return diff(get(i + 1), get(i - 1), 2.0 * dt);
    };
    auto x_at = [&](int i) { return rows[static_cast<size_t>(i)]->state.x; };
    auto y_at = [&](int i) { return rows[static_cast<size_t>(i)]->state.y; };
    auto vx_at = [&](int i) { return rows[static_cast<size_t>(i)]->state.vx; };
    auto vy_at = [&](int i) { return rows[static_cast<size_t>(i)]->state.vy; };
    for (int i = 0; i < n; ++i) {
      AgentState& s = rows[static_cast<size_t>(i)]->state;
      if (std::isnan(s.vx)) s.vx = grad(x_at, i, kDt);
      if (std::isnan(s.vy)) s.vy = grad(y_at, i, kDt);
    }
    for (int i = 0; i < n; ++i) {
      AgentState& s = rows[static_cast<size_t>(i)]->state;
      if (std::isnan(s.ax)) s.ax = grad(vx_at, i, kDt);
      if (std::isnan(s.ay)) s.ay = grad(vy_at, i, kDt);
      if (std::isnan(s.psi)) s.psi = std::atan2(s.vy, s.vx);
    }
  }
}

}  // namespace

std::vector<Sample> load_scene_csv(const std::string& path, Profile profile) {
  std::ifstream in(path);
  if (!in) throw FormatError("scene csv: cannot open " + path);

  std::string line;
  // Header row with the recording rate.
  if (!std::getline(in, line)) return {};
  if (line.empty() || line[0] != '#') throw FormatError("scene csv: missing '#' header row");
  SceneMeta meta = parse_header(line);

  if (!std::getline(in, line)) return {};
  std::vector<std::string> cols = split(trim(line), ',');
  std::vector<int> col_of(std::size(kColumns), -1);
  for (size_t c = 0; c < std::size(kColumns); ++c) {
    for (size_t i = 0; i < cols.size(); ++i)
      if (trim(cols[i]) == kColumns[c]) col_of[c] = static_cast<int>(i);
    if (col_of[c] < 0) throw FormatError(std::string("scene csv: missing column ") + kColumns[c]);
  }

  double factor_f = meta.rate_hz * kDt;
  int factor = static_cast<int>(std::llround(factor_f));
  if (factor < 1 || std::abs(factor_f - factor) > 1e-9)
    throw FormatError("scene csv: rate_hz incompatible with 0.2 s sampling");

  RawRecording rec;
  rec.rate_hz = 1.0 / kDt;
  rec.meta = meta;
  std::map<int64_t, int64_t> last_frame;
  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split(line, ',');
    auto cell = [&](int c) -> const std::string& {
      if (col_of[static_cast<size_t>(c)] >= static_cast<int>(cells.size()))
        throw FormatError("scene csv: short row at line " + std::to_string(line_no));
      return cells[static_cast<size_t>(col_of[static_cast<size_t>(c)])];
    };
    int64_t frame = std::stoll(trim(cell(0)));
    int64_t agent_id = std::stoll(trim(cell(1)));
    auto it = last_frame.find(agent_id);
    if (it != last_frame.end() && frame <= it->second)
      throw DataError("scene csv: non-monotone frame index for agent " + std::to_string(agent_id) +
                      " at line " + std::to_string(line_no));
    last_frame[agent_id] = frame;
    if (frame % factor != 0) continue;

    AgentState s;
    s.agent_id = agent_id;
    std::string cls = trim(cell(2));
    if (cls == "vehicle") s.agent_class = AgentClass::kVehicle;
    else if (cls == "pedestrian") s.agent_class = AgentClass::kPedestrian;
    else throw FormatError("scene csv: unknown agent_class '" + cls + "'");
    s.x = parse_cell(cell(3));
    s.y = parse_cell(cell(4));
    s.vx = parse_cell(cell(5));
    s.vy = parse_cell(cell(6));
    s.ax = parse_cell(cell(7));
    s.ay = parse_cell(cell(8));
    s.psi = parse_cell(cell(9));
    if (std::isnan(s.x) || std::isnan(s.y))
      throw DataError("scene csv: missing position at line " + std::to_string(line_no));
    if (!std::isnan(s.psi)) s.psi = wrap_angle(s.psi);
    rec.rows.push_back({frame / factor, s});
  }

  std::stable_sort(rec.rows.begin(), rec.rows.end(),
                   [](const RawRecording::Row& a, const RawRecording::Row& b) {
                     return a.frame != b.frame ? a.frame < b.frame
                                               : a.state.agent_id < b.state.agent_id;
                   });
  reconstruct_missing(rec);
  return assemble_samples(rec, profile);
}

std::vector<Sample> assemble_samples(const RawRecording& rec, Profile profile,
                                     const AssemblyOptions& opts) {
  std::map<int64_t, std::vector<const RawRecording::Row*>> by_frame;
  for (const auto& row : rec.rows) by_frame[row.frame].push_back(&row);

  std::vector<int64_t> frames;
  frames.reserve(by_frame.size());
  for (const auto& [f, _] : by_frame) frames.push_back(f);

  const int window = opts.history + opts.horizon;
  std::vector<Sample> samples;
  for (size_t start = 0; start + static_cast<size_t>(window) <= frames.size(); ++start) {
    // Windows must cover `window` contiguous steps on the 0.2 s grid.
    if (frames[start + static_cast<size_t>(window) - 1] - frames[start] != window - 1) continue;

    Sample sample;
    sample.profile = profile;
    size_t g0_pos = start + static_cast<size_t>(opts.history) - 1;
    for (size_t i = start; i <= g0_pos; ++i) {
      std::vector<AgentState> states;
      for (const auto* row : by_frame[frames[i]]) states.push_back(row->state);
      sample.condition.history.graphs.push_back(build_interaction_graph(
          states, opts.interaction_radius, profile, rec.meta,
          static_cast<int>(i) - static_cast<int>(g0_pos)));
    }
    sample.decode_graph = sample.condition.history.latest();

    // Targets: present at G_0 with a complete future.
    for (const auto* row : by_frame[frames[g0_pos]]) {
      int64_t id = row->state.agent_id;
      Eigen::MatrixXd fut(opts.horizon, 2);
      bool complete = true;
      for (int k = 1; k <= opts.horizon; ++k) {
        const AgentState* found = nullptr;
        for (const auto* r : by_frame[frames[g0_pos + static_cast<size_t>(k)]])
          if (r->state.agent_id == id) found = &r->state;
        if (found == nullptr) {
          complete = false;
          break;
        }
        fut(k - 1, 0) = found->x;
        fut(k - 1, 1) = found->y;
      }
      if (!complete) continue;
      sample.target_ids.push_back(id);
      sample.init_states.push_back(row->state);
      sample.future.push_back(std::move(fut));
    }
    if (sample.target_ids.empty()) continue;
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<Polyline> load_polylines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("polylines: cannot open " + path);
  std::vector<Polyline> lines;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ss(t);
    std::string type;
    ss >> type;
    Polyline pl;
    if (type == "boundary") pl.type = LineType::kBoundary;
    else if (type == "centerline") pl.type = LineType::kCenterline;
    else throw FormatError("polylines: unknown line type '" + type + "' at line " +
                           std::to_string(line_no));
    std::string vertex;
    while (ss >> vertex) {
      auto parts = split(vertex, ',');
      if (parts.size() != 2)
        throw FormatError("polylines: malformed vertex at line " + std::to_string(line_no));
      pl.points.emplace_back(std::stod(parts[0]), std::stod(parts[1]));
    }
    if (pl.points.size() < 2)
      throw FormatError("polylines: need at least 2 vertices at line " + std::to_string(line_no));
    lines.push_back(std::move(pl));
  }
  return lines;
}

void write_polylines(const std::string& path, const std::vector<Polyline>& lines) {
  std::ofstream out(path);
  if (!out) throw FormatError("polylines: cannot write " + path);
  out << "# lane polylines\n";
  out.precision(12);
  for (const Polyline& pl : lines) {
    out << (pl.type == LineType::kCenterline ? "centerline" : "boundary");
    for (const auto& p : pl.points) out << ' ' << p.x() << ',' << p.y();
    out << '\n';
  }
}

void write_scene_csv(const std::string& path, const RawRecording& rec) {
  std::ofstream out(path);
  if (!out) throw FormatError("scene csv: cannot write " + path);
  out << "# rate_hz=" << rec.rate_hz;
  if (!rec.meta.lane_centers.empty()) {
    out << " lane_centers=";
    for (size_t i = 0; i < rec.meta.lane_centers.size(); ++i) {
      if (i) out << ',';
      out << rec.meta.lane_centers[i];
    }
    out << " lane_half_width=" << rec.meta.lane_half_width
        << " road_half_width=" << rec.meta.road_half_width;
  }
  out << " center=" << rec.meta.center.x() << ',' << rec.meta.center.y() << "\n";
  out << "frame,agent_id,agent_class,x,y,vx,vy,ax,ay,psi\n";
  out.precision(17);
  for (const auto& row : rec.rows) {
    const AgentState& s = row.state;
    out << row.frame << ',' << s.agent_id << ','
        << (s.agent_class == AgentClass::kVehicle ? "vehicle" : "pedestrian") << ',' << s.x << ','
        << s.y << ',' << s.vx << ',' << s.vy << ',' << s.ax << ',' << s.ay << ',' << s.psi << '\n';
  }
}

}  // namespace difftraj::scene
