#include "samcp/nn.hpp"

#include <cmath>

namespace samcp::nn {

void init_linear(ad::ParameterStore& store, const std::string& name, int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  ad::Matrix w(in, out);
  for (ad::Index i = 0; i < w.size(); ++i) w(i) = dist(rng);
  store.add(name + ".weight", std::move(w));
  store.add(name + ".bias", ad::Matrix::Zero(1, out));
}

ad::Tensor linear(const Context& ctx, const std::string& name, const ad::Tensor& x) {
  return ad::matmul(x, ctx.param(name + ".weight")) + ctx.param(name + ".bias");
}

void init_layer_norm(ad::ParameterStore& store, const std::string& name, int dim) {
  store.add(name + ".gain", ad::Matrix::Ones(1, dim));
  store.add(name + ".bias", ad::Matrix::Zero(1, dim));
}

ad::Tensor layer_norm(const Context& ctx, const std::string& name, const ad::Tensor& x) {
  return ad::layer_norm(x, ctx.param(name + ".gain"), ctx.param(name + ".bias"));
}

void init_mlp(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng) {
  init_linear(store, name + ".fc1", in, hidden, rng);
  init_linear(store, name + ".fc2", hidden, out, rng);
}

ad::Tensor mlp(const Context& ctx, const std::string& name, const ad::Tensor& x) {
  return linear(ctx, name + ".fc2", ad::relu(linear(ctx, name + ".fc1", x)));
}

void init_attention(ad::ParameterStore& store, const std::string& name, int dim, Rng& rng) {
  init_linear(store, name + ".q", dim, dim, rng);
  init_linear(store, name + ".k", dim, dim, rng);
  init_linear(store, name + ".v", dim, dim, rng);
  init_linear(store, name + ".out", dim, dim, rng);
}

ad::Tensor multi_head_attention(const Context& ctx, const std::string& name, const ad::Tensor& query,
                                const ad::Tensor& key, const ad::Tensor& value, const ad::BoolMatrix* blocked,
                                int heads) {
  const ad::Tensor q = linear(ctx, name + ".q", query);
  const ad::Tensor k = linear(ctx, name + ".k", key);
  const ad::Tensor v = linear(ctx, name + ".v", value);
  return linear(ctx, name + ".out", ad::attention(q, k, v, blocked, heads));
}

}  // namespace samcp::nn
