#include "ccaps/inference.hpp"

#include <algorithm>

#include "ccaps/errors.hpp"

namespace ccaps::model {

CanonicalFrameResult canonicalize(const data::PointCloud& pc, std::span<const Vec3> poses,
                                  std::span<const Vec3> keypoints) {
  const geo::KabschResult k = geo::kabsch(poses, keypoints);
  CanonicalFrameResult r;
  r.keypoints.assign(keypoints.begin(), keypoints.end());
  r.transform = k.transform;
  r.canonicalized = data::transformed(pc, k.transform);
  r.degenerate = k.degenerate;
  return r;
}

namespace {

Eigen::MatrixXd block(const Tensor& t, std::size_t row0, std::size_t rows) {
  const std::size_t c = t.cols();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(c));
  const auto v = t.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v[(row0 + r) * c + j];
  return m;
}

}  // namespace

std::vector<Inference> infer(const CapsuleModel& model, std::span<const data::PointCloud> clouds, bool decode,
                             std::size_t batch) {
  if (batch == 0) throw ConfigError("infer: batch must be positive");
  const std::size_t K = model.config().encoder.num_capsules;
  const std::size_t M = model.decoder().points_per_capsule();
  ad::NoGradGuard no_grad;
  std::vector<Inference> out;
  out.reserve(clouds.size());
  for (std::size_t start = 0; start < clouds.size(); start += batch) {
    const std::size_t n = std::min(batch, clouds.size() - start);
    std::vector<const data::PointCloud*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&clouds[start + i]);
    const std::size_t P = ptrs.front()->size();
    const ForwardResult f = model.forward(data::stack_points(ptrs), n, false, decode);
    const auto att = f.encoding.attention.values();
    for (std::size_t b = 0; b < n; ++b) {
      Inference inf;
      inf.poses = data::rows_to_points(f.capsules.poses, b * K, K);
      inf.descriptors = block(f.capsules.descriptors, b * K, K);
      inf.capsule_of_point.resize(P);
      for (std::size_t p = 0; p < P; ++p) {
        const double* row = att.data() + (b * P + p) * K;
        inf.capsule_of_point[p] = static_cast<std::size_t>(std::max_element(row, row + K) - row);
      }
      CanonicalFrameResult& c = inf.canonical;
      c.keypoints = data::rows_to_points(f.canonical_keypoints, b * K, K);
      c.transform = f.frames[b].value();
      c.degenerate = f.frames[b].degenerate;
      c.canonicalized = *ptrs[b];
      c.canonicalized.points = data::rows_to_points(f.canonical_points, b * P, P);
      c.descriptors = block(f.canonical_descriptors, b * K, K);
      if (decode) inf.reconstruction = data::rows_to_points(f.reconstruction, b * K * M, K * M);
      out.push_back(std::move(inf));
    }
  }
  return out;
}

}  // namespace ccaps::model
