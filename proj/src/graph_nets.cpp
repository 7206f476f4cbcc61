#include "difftraj/graph_nets.hpp"

#include <algorithm>
#include <cmath>

namespace difftraj::gnn {

GraphTopology topology_of(const scene::SceneGraph& g) {
  GraphTopology topo;
  topo.num_nodes = g.num_nodes();
  const int e = static_cast<int>(g.edges.size());
  topo.src.reserve(g.edges.size());
  topo.dst.reserve(g.edges.size());
  topo.self_mask.reserve(g.edges.size());
  topo.edge_features.resize(e, 1);
  for (int i = 0; i < e; ++i) {
    auto [src, dst] = g.edges[static_cast<size_t>(i)];
    topo.src.push_back(src);
    topo.dst.push_back(dst);
    topo.self_mask.push_back(src == dst);
    topo.edge_features(i, 0) = g.edge_features[i];
  }
  return topo;
}

GraphTopology lane_topology(const scene::LaneGraph& lg,
                            const std::vector<Eigen::Vector2d>& agent_positions) {
  if (agent_positions.size() != lg.agent_ids.size())
    throw ContractViolation("lane_topology: agent position count mismatch");
  const int m = lg.num_env_nodes();
  const int n = m + static_cast<int>(lg.agent_ids.size());

  struct Edge {
    int src, dst;
    double feat;
  };
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) edges.push_back({i, i, 0.0});
  for (auto [env, agent] : lg.edges) {
    Eigen::Vector2d p = lg.env_features.row(env).head<2>().transpose();
    double d = (p - agent_positions[static_cast<size_t>(agent)]).norm();
    edges.push_back({env, m + agent, d});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return a.dst != b.dst ? a.dst < b.dst : a.src < b.src;
  });

  GraphTopology topo;
  topo.num_nodes = n;
  topo.edge_features.resize(static_cast<long>(edges.size()), 1);
  for (size_t i = 0; i < edges.size(); ++i) {
    topo.src.push_back(edges[i].src);
    topo.dst.push_back(edges[i].dst);
    topo.self_mask.push_back(edges[i].src == edges[i].dst);
    topo.edge_features(static_cast<long>(i), 0) = edges[i].feat;
  }
  return topo;
}

VectorXd gat_attention(const VectorXd& center,
                       const std::vector<std::pair<VectorXd, double>>& neighbors,
                       const GatHeadParams& head, double leaky_slope) {
  const int k = static_cast<int>(neighbors.size());
  VectorXd scores(k + 1);
  auto leaky = [&](VectorXd v) {
    for (long i = 0; i < v.size(); ++i)
      if (v[i] < 0.0) v[i] *= leaky_slope;
    return v;
  };
  VectorXd center_term = head.w_center.transpose() * center;
  scores[0] = head.attn.dot(leaky(center_term + head.w_neighbor.transpose() * center));
  for (int i = 0; i < k; ++i) {
    const auto& [h, e] = neighbors[static_cast<size_t>(i)];
    scores[i + 1] = head.attn.dot(
        leaky(center_term + head.w_neighbor.transpose() * h + head.w_edge.transpose() * VectorXd::Constant(1, e)));
  }
  scores.array() -= scores.maxCoeff();
  VectorXd w = scores.array().exp();
  return w / w.sum();
}

VectorXd gat_update(const VectorXd& center,
                    const std::vector<std::pair<VectorXd, double>>& neighbors,
                    const GatLayerParams& params) {
  std::vector<VectorXd> parts;
  parts.reserve(params.heads.size());
  long total = 0;
  for (const GatHeadParams& head : params.heads) {
    VectorXd alpha = gat_attention(center, neighbors, head, params.leaky_slope);
    VectorXd out = alpha[0] * (head.w_center.transpose() * center) +
                   head.w_bypass.transpose() * center;
    for (size_t i = 0; i < neighbors.size(); ++i)
      out += alpha[static_cast<long>(i) + 1] * (head.w_neighbor.transpose() * neighbors[i].first);
    total += out.size();
    parts.push_back(std::move(out));
  }
  VectorXd cat(total);
  long at = 0;
  for (const VectorXd& p : parts) {
    cat.segment(at, p.size()) = p;
    at += p.size();
  }
  return cat + params.bias;
}

Mat gat_apply(const Mat& node_feats, const GraphTopology& topo, const GatLayerParams& params) {
  if (node_feats.rows() != topo.num_nodes)
    throw ContractViolation("gat_apply: node count mismatch");
  long out_dim = params.bias.size();
  Mat out(topo.num_nodes, out_dim);
  for (int v = 0; v < topo.num_nodes; ++v) {
    std::vector<std::pair<VectorXd, double>> neighbors;
    for (int e = 0; e < topo.num_edges(); ++e) {
      if (topo.dst[static_cast<size_t>(e)] != v || topo.self_mask[static_cast<size_t>(e)]) continue;
      neighbors.emplace_back(node_feats.row(topo.src[static_cast<size_t>(e)]).transpose(),
                             topo.edge_features(e, 0));
    }
    out.row(v) = gat_update(node_feats.row(v).transpose(), neighbors, params).transpose();
  }
  return out;
}

namespace {

Eigen::ArrayXXd sigmoid_arr(const Eigen::ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }

}  // namespace

Mat ggru_step(const Mat& x, const Mat& h_prev, const GraphTopology& topo,
              const GgruParams& params) {
  if (x.rows() != topo.num_nodes || h_prev.rows() != topo.num_nodes)
    throw ContractViolation("ggru_step: node set mismatch");
  const long d = h_prev.cols();
  Mat gx = gat_apply(x, topo, params.input_gnn);
  Mat gh = gat_apply(h_prev, topo, params.hidden_gnn);
  if (gx.cols() != 3 * d || gh.cols() != 3 * d)
    throw ContractViolation("ggru_step: gnn output width must be 3x hidden");

  Eigen::ArrayXXd r =
      sigmoid_arr(gx.leftCols(d).array() + gh.leftCols(d).array() +
                  params.b_r.transpose().replicate(x.rows(), 1).array());
  Eigen::ArrayXXd z =
      sigmoid_arr(gx.middleCols(d, d).array() + gh.middleCols(d, d).array() +
                  params.b_z.transpose().replicate(x.rows(), 1).array());
  Eigen::ArrayXXd n =
      (gx.rightCols(d).array() + r * gh.rightCols(d).array() +
       params.b_n.transpose().replicate(x.rows(), 1).array())
          .tanh();
  return ((1.0 - z) * n + z * h_prev.array()).matrix();
}

Mat ggru_step(const Mat& x, const Mat& h_prev, const scene::SceneGraph& graph,
              const GgruParams& params) {
  return ggru_step(x, h_prev, topology_of(graph), params);
}

GatLayer::GatLayer(nn::ParamRegistry& reg, const std::string& prefix, int in, int out, int heads,
                   Rng& rng, double leaky_slope)
    : out_(out), leaky_slope_(leaky_slope) {
  if (out % heads != 0) throw ContractViolation("GatLayer: out must divide heads");
  const int dh = out / heads;
  for (int h = 0; h < heads; ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    Head head;
    head.w_center = reg.add(hp + ".w_center", in, dh);
    head.w_neighbor = reg.add(hp + ".w_neighbor", in, dh);
    head.w_edge = reg.add(hp + ".w_edge", 1, dh);
    head.w_bypass = reg.add(hp + ".w_bypass", in, dh);
    head.attn = reg.add(hp + ".attn", dh, 1);
    for (ad::Parameter* p : {head.w_center, head.w_neighbor, head.w_edge, head.w_bypass, head.attn})
      nn::init_glorot(*p, rng);
    heads_.push_back(head);
  }
  bias_ = reg.add(prefix + ".bias", 1, out);
}

ad::Var GatLayer::forward(ad::Tape& t, ad::Var node_feats, const GraphTopology& topo) const {
  if (t.rows(node_feats) != topo.num_nodes)
    throw ContractViolation("GatLayer: node count mismatch");
  ad::Var edge_feats = t.constant(topo.edge_features);
  ad::Var out;
  for (const Head& head : heads_) {
    ad::Var xw1 = t.matmul(node_feats, t.param(*head.w_center));
    ad::Var xw2 = t.matmul(node_feats, t.param(*head.w_neighbor));
    ad::Var score_in = t.add(t.add(t.gather_rows(xw1, topo.dst), t.gather_rows(xw2, topo.src)),
                             t.matmul(edge_feats, t.param(*head.w_edge)));
    ad::Var scores = t.matmul(t.leaky_relu(score_in, leaky_slope_), t.param(*head.attn));
    ad::Var alpha = t.segment_softmax(scores, topo.dst, topo.num_nodes);
    // Self edges contribute the W1 transform, neighbors the W2 transform.
    ad::Var values =
        t.select_rows(topo.self_mask, t.gather_rows(xw1, topo.src), t.gather_rows(xw2, topo.src));
    ad::Var head_out = t.add(t.segment_sum(t.scale_rows(values, alpha), topo.dst, topo.num_nodes),
                             t.matmul(node_feats, t.param(*head.w_bypass)));
    out = out.valid() ? t.concat_cols(out, head_out) : head_out;
  }
  return t.add_rowvec(out, t.param(*bias_));
}

GatLayerParams GatLayer::snapshot() const {
  GatLayerParams p;
  p.leaky_slope = leaky_slope_;
  for (const Head& h : heads_)
    p.heads.push_back({h.w_center->value, h.w_neighbor->value, h.w_edge->value,
                       h.w_bypass->value, h.attn->value.col(0)});
  p.bias = bias_->value.row(0).transpose();
  return p;
}

GraphGru::GraphGru(nn::ParamRegistry& reg, const std::string& prefix, int input_dim, int hidden,
                   int heads, Rng& rng)
    : input_gnn_(reg, prefix + ".gnn_x", input_dim, 3 * hidden, heads, rng),
      hidden_gnn_(reg, prefix + ".gnn_h", hidden, 3 * hidden, heads, rng),
      hidden_(hidden) {
  b_r_ = reg.add(prefix + ".b_r", 1, hidden);
  b_z_ = reg.add(prefix + ".b_z", 1, hidden);
  b_n_ = reg.add(prefix + ".b_n", 1, hidden);
}

ad::Var GraphGru::step(ad::Tape& t, ad::Var x, ad::Var h_prev, const GraphTopology& topo) const {
  if (t.rows(x) != topo.num_nodes || t.rows(h_prev) != topo.num_nodes)
    throw ContractViolation("GraphGru: node set mismatch");
  ad::Var gx = input_gnn_.forward(t, x, topo);
  ad::Var gh = hidden_gnn_.forward(t, h_prev, topo);
  const int d = hidden_;
  ad::Var r = t.sigmoid(t.add_rowvec(t.add(t.slice_cols(gx, 0, d), t.slice_cols(gh, 0, d)),
                                     t.param(*b_r_)));
  ad::Var z = t.sigmoid(t.add_rowvec(t.add(t.slice_cols(gx, d, d), t.slice_cols(gh, d, d)),
                                     t.param(*b_z_)));
  ad::Var n = t.tanh(t.add_rowvec(
      t.add(t.slice_cols(gx, 2 * d, d), t.mul(r, t.slice_cols(gh, 2 * d, d))), t.param(*b_n_)));
  // h = (1 - z) * n + z * h_prev
  return t.add(t.sub(n, t.mul(z, n)), t.mul(z, h_prev));
}

GgruParams GraphGru::snapshot() const {
  GgruParams p;
  p.input_gnn = input_gnn_.snapshot();
  p.hidden_gnn = hidden_gnn_.snapshot();
  p.b_r = b_r_->value.row(0).transpose();
  p.b_z = b_z_->value.row(0).transpose();
  p.b_n = b_n_->value.row(0).transpose();
  return p;
}

}  // namespace difftraj::gnn
