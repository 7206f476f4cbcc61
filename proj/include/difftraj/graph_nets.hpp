#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "difftraj/nn.hpp"
#include "difftraj/scene.hpp"

namespace difftraj::gnn {

using ad::Mat;
using Eigen::VectorXd;

// Edge structure in the form consumed by the tape layers: parallel
// src/dst index arrays plus a self-loop mask and (E, 1) edge features,
// ordered by (dst, src) for reproducible reductions.
struct GraphTopology {
  int num_nodes = 0;
  std::vector<int> src, dst;
  std::vector<bool> self_mask;
  Mat edge_features;

  int num_edges() const { return static_cast<int>(src.size()); }
};

GraphTopology topology_of(const scene::SceneGraph& g);
// Lane graphs: environment nodes first, agents after; directed
// env->agent edges plus self-loops everywhere. Edge features are the
// env-to-agent distances.
GraphTopology lane_topology(const scene::LaneGraph& lg,
                            const std::vector<Eigen::Vector2d>& agent_positions);

// Value-level parameters for the reference ops (weights stored (in, out)).
struct GatHeadParams {
  Mat w_center;    // W1
  Mat w_neighbor;  // W2
  Mat w_edge;      // W3
  Mat w_bypass;    // W4
  VectorXd attn;   // a
};

struct GatLayerParams {
  std::vector<GatHeadParams> heads;
  VectorXd bias;
  double leaky_slope = 0.2;
};

// Attention weights over the inclusive neighborhood of one node; entry
// 0 is the self weight, the rest follow `neighbors` order. Neighbor
// entries pair the neighbor embedding with the scalar edge feature.
VectorXd gat_attention(const VectorXd& center,
                       const std::vector<std::pair<VectorXd, double>>& neighbors,
                       const GatHeadParams& head, double leaky_slope = 0.2);

// Updated center embedding: b + (alpha_self W1 + W4) h_c + sum alpha_t W2 h_t,
// heads concatenated.
VectorXd gat_update(const VectorXd& center,
                    const std::vector<std::pair<VectorXd, double>>& neighbors,
                    const GatLayerParams& params);

// Whole-graph application of the per-node update (reference path).
Mat gat_apply(const Mat& node_feats, const GraphTopology& topo, const GatLayerParams& params);

struct GgruParams {
  GatLayerParams input_gnn;   // x -> 3*hidden
  GatLayerParams hidden_gnn;  // h -> 3*hidden
  VectorXd b_r, b_z, b_n;
};

// One recurrent step of the graph-gated cell (reference path).
Mat ggru_step(const Mat& x, const Mat& h_prev, const scene::SceneGraph& graph,
              const GgruParams& params);
Mat ggru_step(const Mat& x, const Mat& h_prev, const GraphTopology& topo,
              const GgruParams& params);

// --- tape-backed modules ---------------------------------------------------

class GatLayer {
 public:
  GatLayer() = default;
  GatLayer(nn::ParamRegistry& reg, const std::string& prefix, int in, int out, int heads,
           Rng& rng, double leaky_slope = 0.2);

  ad::Var forward(ad::Tape& t, ad::Var node_feats, const GraphTopology& topo) const;
  GatLayerParams snapshot() const;
  int out_dim() const { return out_; }

 private:
  struct Head {
    ad::Parameter *w_center, *w_neighbor, *w_edge, *w_bypass, *attn;
  };
  std::vector<Head> heads_;
  ad::Parameter* bias_ = nullptr;
  int out_ = 0;
  double leaky_slope_ = 0.2;
};

class GraphGru {
 public:
  GraphGru() = default;
  GraphGru(nn::ParamRegistry& reg, const std::string& prefix, int input_dim, int hidden,
           int heads, Rng& rng);

  ad::Var step(ad::Tape& t, ad::Var x, ad::Var h_prev, const GraphTopology& topo) const;
  GgruParams snapshot() const;
  int hidden_dim() const { return hidden_; }

 private:
  GatLayer input_gnn_, hidden_gnn_;
  ad::Parameter *b_r_ = nullptr, *b_z_ = nullptr, *b_n_ = nullptr;
  int hidden_ = 0;
};

}  // namespace difftraj::gnn
