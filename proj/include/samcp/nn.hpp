#pragma once

#include <random>
#include <string>

#include "samcp/autodiff.hpp"

namespace samcp::nn {

using Rng = std::mt19937_64;

/// Binds a tape to a read-only parameter snapshot for one forward pass.
struct Context {
  ad::Tape& tape;
  const ad::ParameterStore& params;

  ad::Tensor param(const std::string& name) const { return tape.parameter(params, name); }
  ad::Tensor constant(ad::Matrix m) const { return tape.constant(std::move(m)); }
};

// Each layer owns "<name>.*" entries in the store.

void init_linear(ad::ParameterStore& store, const std::string& name, int in, int out, Rng& rng);
ad::Tensor linear(const Context& ctx, const std::string& name, const ad::Tensor& x);

void init_layer_norm(ad::ParameterStore& store, const std::string& name, int dim);
ad::Tensor layer_norm(const Context& ctx, const std::string& name, const ad::Tensor& x);

/// Two-layer perceptron with a ReLU in between.
void init_mlp(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng);
ad::Tensor mlp(const Context& ctx, const std::string& name, const ad::Tensor& x);

/// Multi-head attention with input projections and an output projection.
void init_attention(ad::ParameterStore& store, const std::string& name, int dim, Rng& rng);
ad::Tensor multi_head_attention(const Context& ctx, const std::string& name, const ad::Tensor& query,
                                const ad::Tensor& key, const ad::Tensor& value, const ad::BoolMatrix* blocked,
                                int heads);

}  // namespace samcp::nn
