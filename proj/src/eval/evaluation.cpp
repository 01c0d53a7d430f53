#include "ccaps/evaluation.hpp"

#include <algorithm>
#include <limits>

#include "ccaps/errors.hpp"

namespace ccaps::eval {

namespace {

Rng object_rng(std::uint64_t seed, std::size_t object, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(object), stream};
  return Rng(seq);
}

data::AugmentOptions unaligned(data::AugmentOptions opt) {
  opt.aligned = false;
  return opt;
}

std::vector<std::vector<Mat3>> group(const std::vector<Mat3>& flat, std::size_t objects, std::size_t per_object) {
  std::vector<std::vector<Mat3>> out(objects);
  for (std::size_t i = 0; i < objects; ++i)
    out[i].assign(flat.begin() + static_cast<std::ptrdiff_t>(i * per_object),
                  flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * per_object));
  return out;
}

}  // namespace

AugmentedSet augment_split(const data::Dataset& ds, std::size_t per_object, std::uint64_t seed,
                           const data::AugmentOptions& opt) {
  if (per_object == 0) throw ConfigError("augment_split: need at least one copy per object");
  AugmentedSet s;
  s.objects = ds.clouds.size();
  s.per_object = per_object;
  for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
    Rng rng = object_rng(seed, i, 0);
    for (std::size_t j = 0; j < per_object; ++j) {
      data::Decanonicalized d = data::decanonicalize(ds.clouds[i], rng, opt);
      s.clouds.push_back(std::move(d.cloud));
      s.transforms.push_back(d.transform);
    }
  }
  return s;
}

Mat3 canonical_rotation_of(const model::Inference& inf, const geo::RigidTransform& augmentation) {
  return inf.canonical.transform.rotation * augmentation.rotation;
}

CanonStabilityReport evaluate_canon(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt) {
  const AugmentedSet s = augment_split(ds, opt.rotations_per_object, opt.seed, unaligned(opt.augment));
  const auto inf = c.run(s.clouds, false);
  std::vector<Mat3> flat;
  for (std::size_t i = 0; i < inf.size(); ++i) flat.push_back(canonical_rotation_of(inf[i], s.transforms[i]));
  return mstd(group(flat, s.objects, s.per_object));
}

CanonStabilityReport one_shot_baseline(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt) {
  if (ds.clouds.empty()) throw DimensionError("one_shot_baseline: empty split");
  const auto ref = c.run(std::span<const data::PointCloud>(ds.clouds.data(), 1), false);
  const AugmentedSet s = augment_split(ds, opt.rotations_per_object, opt.seed, unaligned(opt.augment));
  const auto inf = c.run(s.clouds, false);
  std::vector<Mat3> flat;
  for (std::size_t i = 0; i < inf.size(); ++i) {
    const geo::KabschResult k = geo::kabsch(inf[i].poses, ref[0].poses);
    flat.push_back(k.transform.rotation * s.transforms[i].rotation);
  }
  return mstd(group(flat, s.objects, s.per_object));
}

RegistrationReport evaluate_register(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt) {
  const data::AugmentOptions aug = unaligned(opt.augment);
  std::vector<data::PointCloud> clouds;
  std::vector<data::SiamesePair> pairs;
  for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
    Rng rng = object_rng(opt.seed, i, 1);
    pairs.push_back(data::make_pair(ds.clouds[i], rng, aug));
    clouds.push_back(pairs.back().cloud_a);
    clouds.push_back(pairs.back().cloud_b);
  }
  const auto inf = c.run(clouds, false);
  RegistrationReport r;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const geo::RigidTransform est = inf[2 * i].canonical.transform.inverse() * inf[2 * i + 1].canonical.transform;
    r.per_pair.push_back(registration_rmse(est, pairs[i].relative(), pairs[i].cloud_b.points));
  }
  double acc = 0.0;
  for (double v : r.per_pair) acc += v;
  r.mean_rmse = r.per_pair.empty() ? 0.0 : acc / static_cast<double>(r.per_pair.size());
  return r;
}

double chamfer_distance(std::span<const Vec3> x, std::span<const Vec3> y) {
  if (x.empty() || y.empty()) throw DimensionError("chamfer of an empty set");
  auto one_way = [](std::span<const Vec3> a, std::span<const Vec3> b) {
    double acc = 0.0;
    for (const auto& p : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : b) best = std::min(best, (p - q).squaredNorm());
      acc += best;
    }
    return acc / static_cast<double>(a.size());
  };
  return one_way(x, y) + one_way(y, x);
}

ReconstructionReport evaluate_reconstruction(const Canonicalizer& c, const data::Dataset& ds,
                                             const EvalOptions& opt) {
  const AugmentedSet s = augment_split(ds, 1, opt.seed, opt.augment);
  const auto inf = c.run(s.clouds, true);
  ReconstructionReport r;
  r.classes = ds.classes;
  r.per_class_cd.assign(ds.classes.size(), 0.0);
  r.per_class_count.assign(ds.classes.size(), 0);
  double total = 0.0;
  for (std::size_t i = 0; i < inf.size(); ++i) {
    const double cd = 1e3 * chamfer_distance(inf[i].canonical.canonicalized.points, inf[i].reconstruction);
    r.per_class_cd[ds.class_index[i]] += cd;
    ++r.per_class_count[ds.class_index[i]];
    total += cd;
  }
  for (std::size_t k = 0; k < r.classes.size(); ++k)
    if (r.per_class_count[k] > 0) r.per_class_cd[k] /= static_cast<double>(r.per_class_count[k]);
  r.overall_cd = inf.empty() ? 0.0 : total / static_cast<double>(inf.size());
  return r;
}

Eigen::MatrixXd cluster_features(std::span<const model::Inference> inferences) {
  if (inferences.empty()) throw DimensionError("cluster_features: nothing to cluster");
  const auto K = static_cast<Eigen::Index>(inferences.front().poses.size());
  const Eigen::Index C = inferences.front().canonical.descriptors.cols();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(inferences.size()), K * 3 + K * C);
  for (std::size_t i = 0; i < inferences.size(); ++i) {
    const auto& inf = inferences[i];
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Vec3 p = inf.canonical.transform.apply(inf.poses[static_cast<std::size_t>(k)]);
      x.block(row, 3 * k, 1, 3) = p.transpose();
      x.block(row, 3 * K + k * C, 1, C) = inf.canonical.descriptors.row(k);
    }
  }
  return x;
}

ClusterReport evaluate_cluster(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt) {
  const AugmentedSet s = augment_split(ds, 1, opt.seed, opt.augment);
  const auto inf = c.run(s.clouds, false);
  Eigen::MatrixXd x = cluster_features(inf);
  if (opt.standardize_features) x = standardize_columns(x);
  Rng rng = object_rng(opt.seed, 0, 2);
  const std::size_t k = opt.clusters == 0 ? ds.classes.size() : opt.clusters;
  return kmeans_hungarian(x, ds.class_index, k, rng, opt.kmeans_restarts);
}

}  // namespace ccaps::eval
