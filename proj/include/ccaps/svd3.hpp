#pragma once

#include <Eigen/Core>

#include "ccaps/tensor.hpp"

namespace ccaps::ad {

/// Plain 3x3 SVD with a deterministic sign convention: S descending and the
/// largest-magnitude entry of every column of U positive.
struct Svd3Values {
  Eigen::Matrix3d u;
  Eigen::Vector3d s;
  Eigen::Matrix3d v;
};

Svd3Values svd3_decompose(const Eigen::Matrix3d& m);

/// Differentiable SVD of a 3x3 tensor: m = u diag(s) v^T.
///
/// The adjoint uses F_ij = 1 / (s_j^2 - s_i^2), clamped to magnitude
/// `gap_clamp`, so nearly repeated singular values yield an approximate
/// (bounded) gradient instead of an overflow.
struct Svd3 {
  Tensor u;  // 3x3
  Tensor s;  // 3
  Tensor v;  // 3x3
  bool repeated_singular_values = false;
};

Svd3 svd3(const Tensor& m, double gap_clamp = 1e6);

Eigen::Matrix3d to_matrix3(const Tensor& t);
Tensor from_matrix3(const Eigen::Matrix3d& m);

}  // namespace ccaps::ad
