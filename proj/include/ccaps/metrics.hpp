#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "ccaps/geometry.hpp"

namespace ccaps::eval {

using geo::Mat3;
using geo::Rng;
using geo::Vec3;

struct CanonStabilityReport {
  std::vector<double> per_object_deg;
  double mstd_deg = 0.0;
  std::size_t objects = 0;
  std::size_t rotations_per_object = 0;
};

/// Mean over objects of the RMS angle (degrees) between each rotation and
/// the object's chordal mean rotation. Every object needs m >= 2 rotations.
CanonStabilityReport mstd(const std::vector<std::vector<Mat3>>& rotations);

/// sqrt(mean_p |T_est(p) - T_true(p)|^2) over the given points.
double registration_rmse(const geo::RigidTransform& estimate, const geo::RigidTransform& truth,
                         std::span<const Vec3> points);

/// Maximum-weight perfect assignment on a square score matrix (Hungarian
/// algorithm); returns the column assigned to each row.
std::vector<std::size_t> hungarian_max(const Eigen::MatrixXd& score);
/// Exhaustive search over permutations, for cross-checking (n <= 8).
std::vector<std::size_t> brute_force_max(const Eigen::MatrixXd& score);

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Eigen::MatrixXd centroids;  // k x d
  double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; the best of `restarts` runs by
/// inertia. An emptied cluster is re-seeded at the point farthest from its
/// centroid.
KMeansResult kmeans(const Eigen::MatrixXd& features, std::size_t k, Rng& rng, std::size_t restarts = 20,
                    std::size_t max_iterations = 300);

struct ClusterReport {
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> cluster_to_class;  // size max(k, classes); padded entries map past the real ids
  double accuracy = 0.0;
};

/// Clusters rows of `features` and scores them against `labels` after
/// optimal one-to-one matching of clusters to classes.
ClusterReport kmeans_hungarian(const Eigen::MatrixXd& features, std::span<const std::size_t> labels, std::size_t k,
                               Rng& rng, std::size_t restarts = 20);

/// Matched accuracy of a given clustering.
ClusterReport score_clustering(std::span<const std::size_t> assignment, std::span<const std::size_t> labels,
                               std::size_t k);

/// Columns scaled to zero mean and unit variance (constant columns left at zero).
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x);

constexpr double kRadToDeg = 57.295779513082320876798154814105;

}  // namespace ccaps::eval
