#include "ccaps/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "ccaps/errors.hpp"
#include "ccaps/svd3.hpp"

namespace ccaps::geo {

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

std::array<double, 12> RigidTransform::to_array() const {
  std::array<double, 12> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(r * 3 + c)] = rotation(r, c);
  for (int i = 0; i < 3; ++i) out[static_cast<std::size_t>(9 + i)] = translation(i);
  return out;
}

RigidTransform RigidTransform::from_array(std::span<const double> v) {
  if (v.size() != 12) throw DimensionError("rigid transform needs 12 values, got " + std::to_string(v.size()));
  RigidTransform out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation(r, c) = v[static_cast<std::size_t>(r * 3 + c)];
  for (int i = 0; i < 3; ++i) out.translation(i) = v[static_cast<std::size_t>(9 + i)];
  return out;
}

bool RigidTransform::is_valid(double tol) const { return is_rotation(rotation, tol) && translation.allFinite(); }

bool is_rotation(const Mat3& r, double tol) {
  return r.allFinite() && (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
         std::abs(r.determinant() - 1.0) < tol;
}

Mat3 UnitQuaternion::to_matrix() const {
  return Eigen::Quaterniond(w, x, y, z).normalized().toRotationMatrix();
}

double UnitQuaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

UnitQuaternion sample_uniform_quaternion(Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u1 = u01(rng), u2 = u01(rng), u3 = u01(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2, t3 = 2.0 * std::numbers::pi * u3;
  UnitQuaternion q{b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3)};
  const double n = q.norm();
  q.w /= n;
  q.x /= n;
  q.y /= n;
  q.z /= n;
  return q;
}

Mat3 sample_uniform_rotation(Rng& rng) { return sample_uniform_quaternion(rng).to_matrix(); }

Mat3 sample_euler_biased_rotation(Rng& rng) {
  std::uniform_real_distribution<double> turn(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> tilt(0.0, std::numbers::pi);
  const double alpha = turn(rng), beta = tilt(rng), gamma = turn(rng);
  return (Eigen::AngleAxisd(alpha, Vec3::UnitZ()) * Eigen::AngleAxisd(beta, Vec3::UnitY()) *
          Eigen::AngleAxisd(gamma, Vec3::UnitZ()))
      .toRotationMatrix();
}

Mat3 sample_rotation(Rng& rng, RotationSampling mode) {
  return mode == RotationSampling::Uniform ? sample_uniform_rotation(rng) : sample_euler_biased_rotation(rng);
}

Vec3 sample_uniform_translation(Rng& rng, double range) {
  if (range < 0.0) throw ConfigError("translation range must be non-negative");
  if (range == 0.0) return Vec3::Zero();
  std::uniform_real_distribution<double> d(-range, range);
  const double x = d(rng), y = d(rng), z = d(rng);
  return {x, y, z};
}

// sin(w/2) = |R1 - R2|_F / (2 sqrt 2) and cos(w/2) = sqrt((tr(R1^T R2) + 1) / 4);
// unlike acos of the trace this stays accurate for nearly equal rotations.
double angular_distance(const Mat3& r1, const Mat3& r2) {
  const double s = (r1 - r2).norm() / (2.0 * std::numbers::sqrt2);
  const double c = std::sqrt(std::max(0.0, 0.25 * ((r1.transpose() * r2).trace() + 1.0)));
  return 2.0 * std::atan2(s, c);
}

Mat3 rotation_about_axis(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

namespace {

Mat3 project_to_so3(const Mat3& m) {
  const auto d = ad::svd3_decompose(m);
  const double sign = (d.u * d.v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return d.u * Vec3(1.0, 1.0, sign).asDiagonal() * d.v.transpose();
}

}  // namespace

MeanRotation mean_rotation(std::span<const Mat3> rotations) {
  if (rotations.empty()) throw DimensionError("mean_rotation: empty rotation list");
  Mat3 total = Mat3::Zero();
  for (const auto& r : rotations) total += r;
  MeanRotation out;
  const auto d = ad::svd3_decompose(total);
  if (d.s(1) <= 1e-9 * static_cast<double>(rotations.size())) {
    out.degenerate = true;
    total += 1e-6 * rotations.front();
  }
  out.rotation = project_to_so3(total);
  return out;
}

KabschResult kabsch(std::span<const Vec3> source, std::span<const Vec3> target, std::span<const double> weights) {
  if (source.size() != target.size()) throw DimensionError("kabsch: source and target sizes differ");
  if (source.size() < 3) throw DimensionError("kabsch: needs at least 3 correspondences");
  if (!weights.empty() && weights.size() != source.size()) throw DimensionError("kabsch: weight count mismatch");
  const auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double total = 0.0;
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    total += w(i);
    cs += w(i) * source[i];
    ct += w(i) * target[i];
  }
  if (!(total > 0.0)) throw NumericError("kabsch: weights sum to zero");
  cs /= total;
  ct /= total;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) h += w(i) * (source[i] - cs) * (target[i] - ct).transpose();

  const auto d = ad::svd3_decompose(h);
  const double sign = (d.v * d.u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  KabschResult out;
  out.transform.rotation = d.v * Vec3(1.0, 1.0, sign).asDiagonal() * d.u.transpose();
  out.transform.translation = ct - out.transform.rotation * cs;
  out.singular_values = d.s;
  out.degenerate = (d.s(1) - d.s(2)) < 1e-9 * std::max(1.0, d.s(0));
  return out;
}

double alignment_residual(std::span<const Vec3> source, std::span<const Vec3> target, const RigidTransform& t) {
  if (source.size() != target.size() || source.empty()) throw DimensionError("alignment_residual: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) acc += (t.apply(source[i]) - target[i]).squaredNorm();
  return acc / static_cast<double>(source.size());
}

}  // namespace ccaps::geo
