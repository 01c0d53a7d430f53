#include "ccaps/layers.hpp"

#include <cmath>

namespace ccaps::nn {

Tensor ParameterStore::add(const std::string& name, ad::Shape shape, std::vector<double> values) {
  for (const auto& n : names_) {
    if (n == name) throw ConfigError("duplicate parameter name '" + name + "'");
  }
  names_.push_back(name);
  params_.push_back(Tensor::parameter(std::move(shape), std::move(values)));
  return params_.back();
}

std::shared_ptr<ad::BatchNormState> ParameterStore::add_batch_norm(const std::string& name, std::size_t channels) {
  auto state = std::make_shared<ad::BatchNormState>(channels);
  norms_.emplace_back(name, state);
  return state;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<double> init_weights(Init init, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  std::vector<double> w(fan_in * fan_out, 0.0);
  if (init == Init::Zero) return w;
  const double bound = init == Init::KaimingUniform
                           ? std::sqrt(6.0 / static_cast<double>(fan_in))
                           : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : w) x = dist(rng);
  return w;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Init init, Rng& rng)
    : in_(in), out_(out) {
  weight_ = store.add(name + ".weight", {in, out}, init_weights(init, in, out, rng));
  bias_ = store.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add_rowvec(ad::matmul(x, weight_), bias_); }

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels) {
  gamma_ = store.add(name + ".gamma", {channels}, std::vector<double>(channels, 1.0));
  beta_ = store.add(name + ".beta", {channels}, std::vector<double>(channels, 0.0));
  state_ = store.add_batch_norm(name, channels);
}

Tensor BatchNorm::operator()(const Tensor& x, bool training) const {
  return ad::batch_norm(x, *state_, gamma_, beta_, training);
}

}  // namespace ccaps::nn
