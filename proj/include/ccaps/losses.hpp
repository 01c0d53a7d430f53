#pragma once

#include <span>
#include <string>
#include <vector>

#include "ccaps/diff_kabsch.hpp"
#include "ccaps/geometry.hpp"
#include "ccaps/tensor.hpp"

namespace ccaps::loss {

using ad::Tensor;

struct LossWeights {
  double equivariance = 5.0;
  double invariance = 1.0;
  double equilibrium = 1e-3;
  double localization = 1.0;
  double canonical = 1.0;
  double recon = 1.0;

  static LossWeights unaligned() { return {}; }
  static LossWeights aligned() { return {0.0, 0.0, 1e-6, 1e-3, 1.0, 1.0}; }
  void validate() const;
};

/// Symmetric squared Chamfer distance of two point sets (rows are points).
Tensor chamfer(const Tensor& x, const Tensor& y);

/// Mean over clouds of (1/K) sum_k |theta_a,k - T_a T_b^-1 theta_b,k|^2.
/// Poses are stacked per cloud, (B K) x 3; one transform pair per cloud.
Tensor equivariance(const Tensor& poses_a, const Tensor& poses_b, std::span<const geo::RigidTransform> ta,
                    std::span<const geo::RigidTransform> tb);

/// (1/K) sum_k |beta_a,k - beta_b,k|^2, averaged over clouds.
Tensor invariance(const Tensor& desc_a, const Tensor& desc_b, std::size_t clouds);

/// Variance of the per-capsule attention masses, averaged over clouds.
Tensor equilibrium(const Tensor& attention, std::size_t clouds);

/// (1/K) sum_k (1/a_k) sum_p A_pk |theta_k - P_p|^2, averaged over clouds.
Tensor localization(const Tensor& points, const Tensor& attention, const Tensor& poses, std::size_t clouds);

/// Rigid alignment residual of poses onto canonical keypoints through the
/// optimal (differentiable) transform, averaged over clouds.
Tensor canonical(const Tensor& poses, const Tensor& keypoints, std::size_t clouds);
/// Same residual for already computed per-cloud frames.
Tensor canonical(const Tensor& poses, const Tensor& keypoints, std::span<const geo::DiffRigid> frames);

/// Chamfer between canonicalized inputs and reconstructions, averaged over clouds.
Tensor recon(const Tensor& canonical_points, const Tensor& reconstruction, std::size_t clouds);

struct LossTerms {
  Tensor equivariance;
  Tensor invariance;
  Tensor equilibrium;
  Tensor localization;
  Tensor canonical;
  Tensor recon;
};

struct LossReport {
  double equivariance = 0.0;
  double invariance = 0.0;
  double equilibrium = 0.0;
  double localization = 0.0;
  double canonical = 0.0;
  double recon = 0.0;
  double total = 0.0;

  static const std::vector<std::string>& names();
  std::vector<double> values() const;
};

struct TotalLoss {
  Tensor total;
  LossReport report;
};

/// Averages the per-branch terms (equilibrium, localization, canonical,
/// recon) of two Siamese branches; pair terms are taken from `a`.
LossTerms symmetric(const LossTerms& a, const LossTerms& b);

/// Weighted sum of the terms; missing (empty) terms count as zero.
TotalLoss total_loss(const LossTerms& terms, const LossWeights& w);

}  // namespace ccaps::loss
