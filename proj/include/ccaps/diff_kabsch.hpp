#pragma once

#include "ccaps/geometry.hpp"
#include "ccaps/tensor.hpp"

namespace ccaps::geo {

/// Rigid transform whose rotation (3x3) and translation ({3}) are graph nodes.
struct DiffRigid {
  ad::Tensor rotation;
  ad::Tensor translation;
  bool degenerate = false;

  RigidTransform value() const;
};

/// Differentiable closed-form shape matching of two K x 3 tensors in
/// one-to-one correspondence. Gradients reach both point sets through the
/// SVD adjoint; the reflection fix-up sign is treated as a constant.
DiffRigid diff_kabsch(const ad::Tensor& source, const ad::Tensor& target);

/// Applies the transform to every row of an N x 3 tensor: P R^T + t.
ad::Tensor apply(const DiffRigid& t, const ad::Tensor& points);

DiffRigid constant_rigid(const RigidTransform& t);

}  // namespace ccaps::geo
