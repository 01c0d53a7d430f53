#pragma once

#include <Eigen/Core>
#include <array>
#include <random>
#include <span>
#include <vector>

namespace ccaps::geo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rng = std::mt19937_64;

/// Element of SE(3): p -> R p + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  /// (*this) o rhs: applies rhs first.
  RigidTransform compose(const RigidTransform& rhs) const;

  /// Row-major rotation followed by translation.
  std::array<double, 12> to_array() const;
  static RigidTransform from_array(std::span<const double> v);

  /// R^T R = I and det R = +1 within tol.
  bool is_valid(double tol = 1e-9) const;
};

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) { return a.compose(b); }

bool is_rotation(const Mat3& r, double tol = 1e-9);

struct UnitQuaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Mat3 to_matrix() const;
  double norm() const;
};

/// Shoemake's construction from three uniforms; Haar-uniform on SO(3).
UnitQuaternion sample_uniform_quaternion(Rng& rng);
Mat3 sample_uniform_rotation(Rng& rng);

/// Z-Y-Z Euler angles drawn uniformly from their box ([-pi, pi) x [0, pi] x
/// [-pi, pi)). Not uniform on SO(3); kept to reproduce the biased-coverage
/// ablation.
Mat3 sample_euler_biased_rotation(Rng& rng);

enum class RotationSampling { Uniform, EulerBiased };
Mat3 sample_rotation(Rng& rng, RotationSampling mode);

/// Each coordinate i.i.d. uniform in [-range, range].
Vec3 sample_uniform_translation(Rng& rng, double range);

/// Geodesic angle in radians, arccos((tr(r1^T r2) - 1) / 2) with the
/// argument clamped to [-1, 1].
double angular_distance(const Mat3& r1, const Mat3& r2);

Mat3 rotation_about_axis(const Vec3& axis, double angle);

struct MeanRotation {
  Mat3 rotation;
  bool degenerate = false;
};

/// Chordal L2 mean: the SO(3) projection of sum_i R_i.
MeanRotation mean_rotation(std::span<const Mat3> rotations);

struct KabschResult {
  RigidTransform transform;
  Vec3 singular_values = Vec3::Zero();
  /// The two smallest singular values of the cross-covariance coincide
  /// (collinear or coincident source); the rotation is not unique.
  bool degenerate = false;
};

/// Least-squares rigid motion taking `source` onto `target` (one-to-one
/// correspondence), optionally weighted. Always returns a proper rotation.
KabschResult kabsch(std::span<const Vec3> source, std::span<const Vec3> target,
                    std::span<const double> weights = {});

/// (1/K) sum_k |T(source_k) - target_k|^2.
double alignment_residual(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransform& t);

}  // namespace ccaps::geo
