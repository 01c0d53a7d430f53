#include "ccaps/diff_kabsch.hpp"

#include <Eigen/LU>
#include <algorithm>

#include "ccaps/ops.hpp"
#include "ccaps/svd3.hpp"

namespace ccaps::geo {

using ad::Tensor;

RigidTransform DiffRigid::value() const {
  RigidTransform out;
  out.rotation = ad::to_matrix3(rotation);
  for (int i = 0; i < 3; ++i) out.translation(i) = translation.values()[static_cast<std::size_t>(i)];
  return out;
}

DiffRigid diff_kabsch(const Tensor& source, const Tensor& target) {
  if (source.shape() != target.shape() || source.cols() != 3) {
    throw DimensionError("diff_kabsch: expected matching K x 3 tensors, got " + ad::to_string(source.shape()) +
                         " and " + ad::to_string(target.shape()));
  }
  if (source.rows() < 3) throw DimensionError("diff_kabsch: needs at least 3 correspondences");
  const Tensor cs = ad::mean(source, 0);
  const Tensor ct = ad::mean(target, 0);
  const Tensor xs = ad::add_rowvec(source, ad::neg(cs));
  const Tensor xt = ad::add_rowvec(target, ad::neg(ct));
  const Tensor h = ad::matmul(ad::transpose(xs), xt);
  const auto svd = ad::svd3(h);

  const Eigen::Matrix3d u = ad::to_matrix3(svd.u);
  const Eigen::Matrix3d v = ad::to_matrix3(svd.v);
  const double sign = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Tensor flip = ad::from_matrix3(Eigen::Vector3d(1.0, 1.0, sign).asDiagonal());

  DiffRigid out;
  out.rotation = ad::matmul(ad::matmul(svd.v, flip), ad::transpose(svd.u));
  // t = ct - R cs, computed with row vectors: ct - cs R^T.
  const Tensor cs_rot = ad::matmul(ad::reshape(cs, {1, 3}), ad::transpose(out.rotation));
  out.translation = ad::reshape(ad::sub(ad::reshape(ct, {1, 3}), cs_rot), {3});
  const auto s = svd.s.values();
  out.degenerate = (s[1] - s[2]) < 1e-9 * std::max(1.0, s[0]);
  return out;
}

Tensor apply(const DiffRigid& t, const Tensor& points) {
  return ad::add_rowvec(ad::matmul(points, ad::transpose(t.rotation)), t.translation);
}

DiffRigid constant_rigid(const RigidTransform& t) {
  DiffRigid out;
  out.rotation = ad::from_matrix3(t.rotation);
  out.translation = Tensor::constant({3}, {t.translation(0), t.translation(1), t.translation(2)});
  return out;
}

}  // namespace ccaps::geo
