#include "ccaps/svd3.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "ccaps/ops.hpp"

namespace ccaps::ad {

Svd3Values svd3_decompose(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Svd3Values out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  for (int i = 0; i < 3; ++i) {
    Eigen::Index arg = 0;
    out.u.col(i).cwiseAbs().maxCoeff(&arg);
    if (out.u(arg, i) < 0.0) {
      out.u.col(i) *= -1.0;
      out.v.col(i) *= -1.0;
    }
  }
  return out;
}

Eigen::Matrix3d to_matrix3(const Tensor& t) {
  if (t.size() != 9) throw DimensionError("expected a 3x3 tensor, got " + to_string(t.shape()));
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = t.values()[static_cast<std::size_t>(r * 3 + c)];
  return m;
}

Tensor from_matrix3(const Eigen::Matrix3d& m) {
  Buffer v(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(r * 3 + c)] = m(r, c);
  return Tensor::constant({3, 3}, std::move(v));
}

Svd3 svd3(const Tensor& m, double gap_clamp) {
  const Eigen::Matrix3d mm = to_matrix3(m);
  if (!mm.allFinite()) throw NumericError("svd3: non-finite input");
  const Svd3Values d = svd3_decompose(mm);

  // Packed layout: U (9, row-major) | S (3) | V (9, row-major).
  Buffer packed(21);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      packed[static_cast<std::size_t>(r * 3 + c)] = d.u(r, c);
      packed[static_cast<std::size_t>(12 + r * 3 + c)] = d.v(r, c);
    }
  for (int i = 0; i < 3; ++i) packed[static_cast<std::size_t>(9 + i)] = d.s(i);

  bool repeated = false;
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double gap = d.s(j) * d.s(j) - d.s(i) * d.s(i);
      if (gap == 0.0) {
        repeated = true;
        continue;
      }
      double f = 1.0 / gap;
      if (std::abs(f) > gap_clamp) {
        repeated = true;
        f = std::copysign(gap_clamp, f);
      }
      F(i, j) = f;
    }

  Tensor pack = make_result({21}, std::move(packed), {m}, [d, F](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Eigen::Matrix3d gu, gv;
    Eigen::Vector3d gs;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        gu(r, c) = self.grad[static_cast<std::size_t>(r * 3 + c)];
        gv(r, c) = self.grad[static_cast<std::size_t>(12 + r * 3 + c)];
      }
    for (int i = 0; i < 3; ++i) gs(i) = self.grad[static_cast<std::size_t>(9 + i)];
    const Eigen::Matrix3d S = d.s.asDiagonal();
    const Eigen::Matrix3d J = F.cwiseProduct(d.u.transpose() * gu - gu.transpose() * d.u);
    const Eigen::Matrix3d K = F.cwiseProduct(d.v.transpose() * gv - gv.transpose() * d.v);
    const Eigen::Matrix3d inner = J * S + Eigen::Matrix3d(gs.asDiagonal()) + S * K;
    const Eigen::Matrix3d gm = d.u * inner * d.v.transpose();
    auto& g = self.parents[0]->ensure_grad();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) g[static_cast<std::size_t>(r * 3 + c)] += gm(r, c);
  });

  Svd3 out;
  out.u = reshape(slice_rows(pack, 0, 9), {3, 3});
  out.s = slice_rows(pack, 9, 3);
  out.v = reshape(slice_rows(pack, 12, 9), {3, 3});
  out.repeated_singular_values = repeated;
  return out;
}

}  // namespace ccaps::ad
