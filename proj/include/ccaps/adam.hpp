#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ccaps/tensor.hpp"

namespace ccaps::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update using the gradients stored on `params`.
/// A parameter without a gradient is treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

void zero_grads(std::span<Tensor> params);

}  // namespace ccaps::ad
