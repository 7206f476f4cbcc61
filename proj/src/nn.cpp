#include "difftraj/nn.hpp"

#include <cmath>

namespace difftraj::nn {

void init_glorot(Parameter& p, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
  for (long i = 0; i < p.value.rows(); ++i)
    for (long j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
}

void init_uniform(Parameter& p, Rng& rng, double scale) {
  for (long i = 0; i < p.value.rows(); ++i)
    for (long j = 0; j < p.value.cols(); ++j)
      p.value(i, j) = (2.0 * rng.uniform() - 1.0) * scale;
}

Linear::Linear(ParamRegistry& reg, const std::string& prefix, int in, int out, Rng& rng,
               double init_scale) {
  weight = reg.add(prefix + ".weight", in, out);
  bias = reg.add(prefix + ".bias", 1, out);
  if (init_scale < 0.0) init_glorot(*weight, rng);
  else if (init_scale > 0.0) init_uniform(*weight, rng, init_scale);
}

Var Linear::forward(Tape& t, Var x) const {
  return t.add_rowvec(t.matmul(x, t.param(*weight)), t.param(*bias));
}

Mlp::Mlp(ParamRegistry& reg, const std::string& prefix, int in, int hidden, int out, Rng& rng)
    : l1(reg, prefix + ".l1", in, hidden, rng), l2(reg, prefix + ".l2", hidden, out, rng) {}

Var Mlp::forward(Tape& t, Var x) const { return l2.forward(t, t.silu(l1.forward(t, x))); }

MultiheadAttention::MultiheadAttention(ParamRegistry& reg, const std::string& prefix, int dim_,
                                       int heads_, Rng& rng)
    : heads(heads_),
      dim(dim_),
      wq(reg, prefix + ".wq", dim_, dim_, rng),
      wk(reg, prefix + ".wk", dim_, dim_, rng),
      wv(reg, prefix + ".wv", dim_, dim_, rng),
      wo(reg, prefix + ".wo", dim_, dim_, rng) {
  if (dim_ % heads_ != 0) throw ContractViolation("attention dim must divide heads");
}

Var MultiheadAttention::forward(Tape& t, Var queries, Var tokens) const {
  Var q = wq.forward(t, queries);
  Var k = wk.forward(t, tokens);
  Var v = wv.forward(t, tokens);
  const int dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, dh);
    Var kh = t.slice_cols(k, h * dh, dh);
    Var vh = t.slice_cols(v, h * dh, dh);
    Var att = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale));
    outs.push_back(t.matmul(att, vh));
  }
  Var cat = outs[0];
  for (size_t h = 1; h < outs.size(); ++h) cat = t.concat_cols(cat, outs[h]);
  return wo.forward(t, cat);
}

}  // namespace difftraj::nn
