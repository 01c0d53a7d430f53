#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ccaps/ops.hpp"

namespace ccaps::nn {

using ad::Tensor;
using Rng = std::mt19937_64;

enum class Init { KaimingUniform, XavierUniform, Zero };

/// Named registry of every trainable tensor and batch-norm buffer of a model.
/// Registration order is the checkpoint and optimizer order.
class ParameterStore {
 public:
  Tensor add(const std::string& name, ad::Shape shape, std::vector<double> values);
  std::shared_ptr<ad::BatchNormState> add_batch_norm(const std::string& name, std::size_t channels);

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::pair<std::string, std::shared_ptr<ad::BatchNormState>>>& batch_norms() const {
    return norms_;
  }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  std::vector<std::pair<std::string, std::shared_ptr<ad::BatchNormState>>> norms_;
};

std::vector<double> init_weights(Init init, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Shared per-point fully connected layer: y = x W + b, W is in x out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Init init, Rng& rng);

  Tensor operator()(const Tensor& x) const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor weight_;
  Tensor bias_;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, std::size_t channels);

  Tensor operator()(const Tensor& x, bool training) const;

 private:
  Tensor gamma_;
  Tensor beta_;
  std::shared_ptr<ad::BatchNormState> state_;
};

}  // namespace ccaps::nn
