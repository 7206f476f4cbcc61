#pragma once

#include <string>

#include "difftraj/common.hpp"
#include "difftraj/tape.hpp"

namespace difftraj::nn {

using ad::Mat;
using ad::ParamRegistry;
using ad::Parameter;
using ad::Tape;
using ad::Var;

// Glorot-uniform initialization.
void init_glorot(Parameter& p, Rng& rng);
void init_uniform(Parameter& p, Rng& rng, double scale);

// y = x W + b with W stored (in, out).
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& prefix, int in, int out, Rng& rng,
         double init_scale = -1.0);  // init_scale >= 0 overrides glorot (0 => zeros)

  Var forward(Tape& t, Var x) const;
  int out_dim() const { return static_cast<int>(weight->value.cols()); }
};

// Two-layer feed-forward block with SiLU in between.
struct Mlp {
  Linear l1, l2;

  Mlp() = default;
  Mlp(ParamRegistry& reg, const std::string& prefix, int in, int hidden, int out, Rng& rng);

  Var forward(Tape& t, Var x) const;
};

// Scaled dot-product attention; keys and values come from the same
// source sequence. Queries (nq, dim) attend over (nk, dim) tokens.
struct MultiheadAttention {
  int heads = 1;
  int dim = 0;
  Linear wq, wk, wv, wo;

  MultiheadAttention() = default;
  MultiheadAttention(ParamRegistry& reg, const std::string& prefix, int dim, int heads, Rng& rng);

  Var forward(Tape& t, Var queries, Var tokens) const;
};

}  // namespace difftraj::nn
