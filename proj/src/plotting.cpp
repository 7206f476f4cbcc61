#include "difftraj/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace difftraj::plot {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

struct Bounds {
  double min_x = 1e18, max_x = -1e18, min_y = 1e18, max_y = -1e18;
  void grow(double x, double y) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
};

class Panel {
 public:
  Panel(const Bounds& b, double px_w, double px_h, double ox) : b_(b), w_(px_w), h_(px_h), ox_(ox) {
    double span_x = std::max(1e-6, b.max_x - b.min_x);
    double span_y = std::max(1e-6, b.max_y - b.min_y);
    scale_ = std::min((w_ - 20.0) / span_x, (h_ - 20.0) / span_y);
  }
  double x(double wx) const { return ox_ + 10.0 + (wx - b_.min_x) * scale_; }
  // svg y grows downward
  double y(double wy) const { return h_ - 10.0 - (wy - b_.min_y) * scale_; }
  double scale() const { return scale_; }

 private:
  Bounds b_;
  double w_, h_, ox_, scale_;
};

void draw_polyline(std::ostream& out, const Panel& p, const Eigen::MatrixXd& pts,
                   const std::string& color, double width, const std::string& dash = "") {
  out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"";
  if (!dash.empty()) out << " stroke-dasharray=\"" << dash << "\"";
  out << " points=\"";
  for (long k = 0; k < pts.rows(); ++k) out << p.x(pts(k, 0)) << ',' << p.y(pts(k, 1)) << ' ';
  out << "\"/>\n";
}

void draw_agent_box(std::ostream& out, const Panel& p, const scene::AgentState& s,
                    const std::string& color) {
  if (s.agent_class == scene::AgentClass::kPedestrian) {
    out << "<circle cx=\"" << p.x(s.x) << "\" cy=\"" << p.y(s.y) << "\" r=\""
        << std::max(2.0, 0.4 * p.scale()) << "\" fill=\"" << color << "\" opacity=\"0.8\"/>\n";
    return;
  }
  double len = 4.5, wid = 2.0;
  double c = std::cos(s.psi), sn = std::sin(s.psi);
  double hx = len / 2.0, hy = wid / 2.0;
  double corners[4][2] = {{hx, hy}, {hx, -hy}, {-hx, -hy}, {-hx, hy}};
  out << "<polygon fill=\"" << color << "\" opacity=\"0.8\" points=\"";
  for (auto& corner : corners) {
    double wx = s.x + corner[0] * c - corner[1] * sn;
    double wy = s.y + corner[0] * sn + corner[1] * c;
    out << p.x(wx) << ',' << p.y(wy) << ' ';
  }
  out << "\"/>\n";
}

}  // namespace

void write_scene_svg(const std::string& path, const ScenePanelPlot& plot) {
  if (plot.sample == nullptr) throw ContractViolation("plot: missing sample");
  if (plot.w_values.size() != plot.per_w_samples.size())
    throw ContractViolation("plot: w/sample panel mismatch");
  const scene::Sample& sample = *plot.sample;

  Bounds b;
  for (const auto& fut : sample.future)
    for (long k = 0; k < fut.rows(); ++k) b.grow(fut(k, 0), fut(k, 1));
  for (const scene::AgentState& s : sample.init_states) b.grow(s.x, s.y);
  for (const auto& per_w : plot.per_w_samples)
    for (const auto& traj : per_w)
      for (long r = 0; r < traj.xy.rows(); ++r) b.grow(traj.xy(r, 0), traj.xy(r, 1));
  if (plot.lanes != nullptr)
    for (const auto& line : *plot.lanes)
      for (const auto& pt : line.points) b.grow(pt.x(), pt.y());

  const double panel_w = 460.0, panel_h = 320.0;
  const int n_panels = static_cast<int>(plot.w_values.size());

  std::ofstream out(path);
  if (!out) throw FormatError("plot: cannot write " + path);
  out << std::fixed << std::setprecision(2);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << panel_w * n_panels
      << "\" height=\"" << panel_h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int w_idx = 0; w_idx < n_panels; ++w_idx) {
    Panel panel(b, panel_w, panel_h, w_idx * panel_w);
    out << "<g>\n";
    if (plot.lanes != nullptr) {
      for (const auto& line : *plot.lanes) {
        Eigen::MatrixXd pts(static_cast<long>(line.points.size()), 2);
        for (size_t k = 0; k < line.points.size(); ++k)
          pts.row(static_cast<long>(k)) = line.points[k].transpose();
        draw_polyline(out, panel, pts, "#999999", 1.0,
                      line.type == scene::LineType::kCenterline ? "6,5" : "");
      }
    }
    // context agents present at the prediction instant but not predicted
    const scene::SceneGraph& g0 = sample.condition.history.latest();
    for (int i = 0; i < g0.num_nodes(); ++i) {
      int64_t id = g0.node_ids[static_cast<size_t>(i)];
      bool is_target =
          std::find(sample.target_ids.begin(), sample.target_ids.end(), id) != sample.target_ids.end();
      if (is_target) continue;
      scene::AgentState ctx;
      ctx.x = g0.node_features(i, 0);
      ctx.y = g0.node_features(i, 1);
      ctx.psi = g0.node_features(i, 6);
      draw_agent_box(out, panel, ctx, "#bbbbbb");
    }
    for (int a = 0; a < sample.num_targets(); ++a) {
      const char* color = kPalette[static_cast<size_t>(a) % std::size(kPalette)];
      draw_agent_box(out, panel, sample.init_states[static_cast<size_t>(a)], color);
      draw_polyline(out, panel, sample.future[static_cast<size_t>(a)], "black", 1.6);
      for (const auto& traj : plot.per_w_samples[static_cast<size_t>(w_idx)]) {
        Eigen::MatrixXd block = traj.agent_block(a);
        for (long k = 0; k < block.rows(); ++k)
          out << "<circle cx=\"" << panel.x(block(k, 0)) << "\" cy=\"" << panel.y(block(k, 1))
              << "\" r=\"1.6\" fill=\"" << color << "\" opacity=\"0.55\"/>\n";
      }
    }
    out << "<text x=\"" << w_idx * panel_w + 14.0 << "\" y=\"20\" font-family=\"sans-serif\" "
        << "font-size=\"14\">w=" << std::setprecision(1) << plot.w_values[static_cast<size_t>(w_idx)]
        << std::setprecision(2) << "</text>\n";
    out << "</g>\n";
  }
  out << "</svg>\n";
  if (!out) throw FormatError("plot: write failed for " + path);
}

}  // namespace difftraj::plot
