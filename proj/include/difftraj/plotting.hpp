#pragma once

#include <string>
#include <vector>

#include "difftraj/diffusion.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::plot {

// One scene rendered as side-by-side panels, one panel per guidance
// weight: lane polylines, agent boxes at the prediction instant,
// ground-truth futures as solid lines, samples as colored scatter.
struct ScenePanelPlot {
  const scene::Sample* sample = nullptr;
  std::vector<double> w_values;
  // per_w_samples[w_index][draw_index]
  std::vector<std::vector<diffusion::TrajectoryArray>> per_w_samples;
  const std::vector<scene::Polyline>* lanes = nullptr;  // optional
};

void write_scene_svg(const std::string& path, const ScenePanelPlot& p);

}  // namespace difftraj::plot
