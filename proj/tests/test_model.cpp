#include <cmath>
#include <numeric>
#include <random>

#include "ccaps/diff_kabsch.hpp"
#include "ccaps/inference.hpp"
#include "ccaps/model.hpp"
#include "ccaps/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace ccaps;
using namespace ccaps::model;
using ccaps::testing::gradient_rel_error;
using ccaps::testing::random_projection;
using ccaps::testing::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t k, std::size_t c, std::size_t m = 4) {
  ModelConfig cfg;
  cfg.encoder.num_capsules = k;
  cfg.encoder.feature_dim = c;
  cfg.encoder.blocks = 1;
  cfg.encoder.hidden_width = 6;
  cfg.regressor_width = 5;
  cfg.decoder.points_per_capsule = m;
  cfg.decoder.grid_dim = 3;
  cfg.decoder.hidden = {8, 6};
  return cfg;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ad::Tensor permute_rows(const ad::Tensor& t, std::span<const std::size_t> perm) { return ad::gather_rows(t, perm); }

// Finite-difference check against a parameter that lives inside a model.
double parameter_rel_error(ad::Tensor& param, const std::function<ad::Tensor()>& f, double step = 1e-5) {
  param.zero_grad();
  f().backward();
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  double diff = 0.0, na = 0.0, nn = 0.0;
  auto v = param.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double saved = v[i];
    double fp, fm;
    {
      ad::NoGradGuard guard;
      v[i] = saved + step;
      fp = f().item();
      v[i] = saved - step;
      fm = f().item();
    }
    v[i] = saved;
    const double num = (fp - fm) / (2.0 * step);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    diff += (a - num) * (a - num);
    na += a * a;
    nn += num * num;
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

ad::Tensor& store_param(CapsuleModel& m, const std::string& name) {
  const auto& names = m.store().names();
  const auto it = std::find(names.begin(), names.end(), name);
  REQUIRE(it != names.end());
  return m.store().parameters()[static_cast<std::size_t>(it - names.begin())];
}

}  // namespace

TEST_CASE("encoder output shapes and row-stochastic attention") {
  ModelConfig cfg;  // K=10, C=128, three blocks of width 128
  CapsuleModel m(cfg, 3);
  std::mt19937_64 rng(1);
  const auto pts = random_tensor(rng, {2048, 3});
  ad::NoGradGuard g;
  const Encoding e = m.encoder()(pts, 2, false);
  CHECK(e.attention.shape() == ad::Shape{2048, 10});
  CHECK(e.features.shape() == ad::Shape{2048, 128});
  for (std::size_t r = 0; r < e.attention.rows(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(e.attention.at(r, k) >= 0.0);
      s += e.attention.at(r, k);
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("encoder is permutation equivariant and aggregation permutation invariant") {
  CapsuleModel m(tiny_config(4, 5), 7);
  std::mt19937_64 rng(2);
  const auto pts = random_tensor(rng, {30, 3});
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  ad::NoGradGuard g;
  for (bool training : {false, true}) {
    const Encoding a = m.encoder()(pts, 1, training);
    const auto permuted = permute_rows(pts, perm);
    const Encoding b = m.encoder()(permuted, 1, training);
    CHECK(max_abs_diff(permute_rows(a.attention, perm).values(), b.attention.values()) < 1e-12);
    CHECK(max_abs_diff(permute_rows(a.features, perm).values(), b.features.values()) < 1e-12);
    const Capsules ca = aggregate(pts, a, 1), cb = aggregate(permuted, b, 1);
    CHECK(max_abs_diff(ca.poses.values(), cb.poses.values()) < 1e-9);
    CHECK(max_abs_diff(ca.descriptors.values(), cb.descriptors.values()) < 1e-9);
  }
}

TEST_CASE("duplicated points get identical attention rows") {
  CapsuleModel m(tiny_config(3, 4), 9);
  std::mt19937_64 rng(3);
  const auto pts = random_tensor(rng, {12, 3});
  const auto doubled = ad::repeat_rows(pts, 2);  // each point twice in a row
  ad::NoGradGuard g;
  const Encoding e = m.encoder()(doubled, 1, false);
  for (std::size_t p = 0; p < 12; ++p)
    for (std::size_t k = 0; k < 3; ++k) CHECK(e.attention.at(2 * p, k) == e.attention.at(2 * p + 1, k));
}

TEST_CASE("poses lie inside the point bounding box") {
  CapsuleModel m(tiny_config(5, 4), 4);
  std::mt19937_64 rng(4);
  const auto pts = random_tensor(rng, {40, 3}, -0.5, 0.8);
  ad::NoGradGuard g;
  const Capsules c = aggregate(pts, m.encoder()(pts, 1, false), 1);
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(c.poses.at(k, d) >= -0.5);
      CHECK(c.poses.at(k, d) <= 0.8);
    }
}

TEST_CASE("aggregate special cases") {
  std::mt19937_64 rng(5);
  const auto pts = random_tensor(rng, {6, 3});
  const auto feats = random_tensor(rng, {6, 2});

  SUBCASE("uniform attention gives the centroid") {
    Encoding e{ad::Tensor::full({6, 3}, 1.0 / 3.0), feats};
    const Capsules c = aggregate(pts, e, 1);
    const auto centroid = ad::mean(pts, 0);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(c.poses.at(k, d) - centroid.values()[d]) < 1e-12);
  }
  SUBCASE("one-hot column selects a point") {
    std::vector<double> a(12, 0.0);
    for (std::size_t p = 0; p < 6; ++p) a[p * 2 + (p == 4 ? 0 : 1)] = 1.0;
    Encoding e{ad::Tensor::constant({6, 2}, std::span<const double>(a)), feats};
    const Capsules c = aggregate(pts, e, 1);
    for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(c.poses.at(0, d) - pts.at(4, d)) < 1e-12);
    for (std::size_t d = 0; d < 2; ++d) CHECK(std::abs(c.descriptors.at(0, d) - feats.at(4, d)) < 1e-12);
  }
  SUBCASE("fixed attention makes poses rigidly equivariant") {
    geo::Rng grng(6);
    const geo::RigidTransform t{geo::sample_uniform_rotation(grng), geo::Vec3(0.3, -0.1, 0.7)};
    const auto logits = random_tensor(rng, {6, 3});
    Encoding e{ad::softmax(logits, 1), feats};
    const Capsules c = aggregate(pts, e, 1);
    const auto moved = geo::apply(geo::constant_rigid(t), pts);
    const Capsules cm = aggregate(moved, e, 1);
    const auto expected = geo::apply(geo::constant_rigid(t), c.poses);
    CHECK(max_abs_diff(cm.poses.values(), expected.values()) < 1e-12);
  }
}

TEST_CASE("encode gradient check") {
  CapsuleModel m(tiny_config(3, 4), 11);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 3; ++trial) {
    const auto pts = random_tensor(rng, {8, 3});
    const auto seed = static_cast<std::uint64_t>(100 + trial);
    const double err = gradient_rel_error(
        [&](const std::vector<ad::Tensor>& in) {
          const Encoding e = m.encoder()(in[0], 1, true);
          const Capsules c = aggregate(in[0], e, 1);
          return random_projection(c.poses, seed) + random_projection(c.descriptors, seed + 1) +
                 random_projection(e.attention, seed + 2);
        },
        {pts});
    CHECK(err < 1e-4);
  }
  const auto pts = random_tensor(rng, {8, 3});
  auto objective = [&] {
    const Encoding e = m.encoder()(pts, 1, true);
    return random_projection(e.features, 5) + random_projection(e.attention, 6);
  };
  CHECK(parameter_rel_error(store_param(m, "encoder.attention.weight"), objective) < 1e-4);
  CHECK(parameter_rel_error(store_param(m, "encoder.block0.1.acn.attention.weight"), objective) < 1e-4);
}

TEST_CASE("regressor outputs zero-mean keypoints and passes a gradient check") {
  CapsuleModel m(tiny_config(3, 4), 13);
  std::mt19937_64 rng(14);
  const auto desc = random_tensor(rng, {6, 4});
  {
    ad::NoGradGuard g;
    const auto kp = m.regressor()(desc, 2);
    CHECK(kp.shape() == ad::Shape{6, 3});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t d = 0; d < 3; ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += kp.at(b * 3 + k, d);
        CHECK(std::abs(s) < 1e-12);
      }
    CHECK(max_abs_diff(kp.values(), m.regressor()(desc, 2).values()) == 0.0);
  }
  for (int trial = 0; trial < 3; ++trial) {
    const auto d = random_tensor(rng, {3, 4});
    const double err =
        gradient_rel_error([&](const std::vector<ad::Tensor>& in) { return random_projection(m.regressor()(in[0], 1), 8); },
                           {d});
    CHECK(err < 1e-5);
  }
  auto objective = [&] { return random_projection(m.regressor()(desc, 2), 9); };
  CHECK(parameter_rel_error(store_param(m, "regressor.hidden.weight"), objective) < 1e-5);
  CHECK(parameter_rel_error(store_param(m, "regressor.out.weight"), objective) < 1e-5);
}

TEST_CASE("canonicalize") {
  geo::Rng rng(15);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<geo::Vec3> theta;
  for (int k = 0; k < 6; ++k) theta.emplace_back(n(rng), n(rng), n(rng));
  data::PointCloud pc;
  for (int i = 0; i < 20; ++i) pc.points.emplace_back(n(rng), n(rng), n(rng));

  SUBCASE("identical keypoints give the identity") {
    const auto r = canonicalize(pc, theta, theta);
    CHECK((r.transform.rotation - geo::Mat3::Identity()).norm() < 1e-9);
    CHECK(r.transform.translation.norm() < 1e-9);
    for (std::size_t i = 0; i < pc.points.size(); ++i) CHECK((r.canonicalized.points[i] - pc.points[i]).norm() < 1e-9);
  }
  SUBCASE("rigidly related keypoints recover the transform") {
    const geo::RigidTransform t0{geo::sample_uniform_rotation(rng), geo::Vec3(0.2, 0.5, -0.3)};
    std::vector<geo::Vec3> target;
    for (const auto& p : theta) target.push_back(t0.apply(p));
    const auto r = canonicalize(pc, theta, target);
    CHECK((r.transform.rotation - t0.rotation).norm() < 1e-9);
    CHECK((r.transform.translation - t0.translation).norm() < 1e-9);
    CHECK(r.transform.is_valid());
  }
  SUBCASE("two poses of one object coincide after canonicalization") {
    const geo::RigidTransform ta{geo::sample_uniform_rotation(rng), geo::Vec3(0.1, 0.0, 0.4)};
    const geo::RigidTransform tb{geo::sample_uniform_rotation(rng), geo::Vec3(-0.3, 0.2, 0.0)};
    std::vector<geo::Vec3> target = theta, pa, pb;
    for (const auto& p : theta) {
      pa.push_back(ta.apply(p));
      pb.push_back(tb.apply(p));
    }
    const auto ra = canonicalize(data::transformed(pc, ta), pa, target);
    const auto rb = canonicalize(data::transformed(pc, tb), pb, target);
    for (std::size_t i = 0; i < pc.points.size(); ++i)
      CHECK((ra.canonicalized.points[i] - rb.canonicalized.points[i]).norm() < 1e-8);
  }
}

TEST_CASE("decoder output layout and range") {
  const ModelConfig cfg = tiny_config(3, 4, 5);
  CapsuleModel m(cfg, 16);
  std::mt19937_64 rng(17);
  const auto desc = random_tensor(rng, {6, 4});
  const auto poses = random_tensor(rng, {6, 3});
  ad::NoGradGuard g;
  const auto out = m.decoder()(poses, desc, 2, false);
  CHECK(out.shape() == ad::Shape{30, 3});
  const auto labels = m.decoder().labels();
  REQUIRE(labels.size() == 15);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::count(labels.begin(), labels.end(), k) == 5);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 15; ++i)
      for (std::size_t d = 0; d < 3; ++d) {
        const double local = out.at(b * 15 + i, d) - poses.at(b * 3 + labels[i], d);
        CHECK(std::abs(local) <= 1.0);
      }
  CHECK(ModelConfig::points_per_capsule_for(1024, 10) == 103);
}

TEST_CASE("decoder with zero output weights collapses onto the poses") {
  CapsuleModel m(tiny_config(2, 3, 4), 18);
  for (int k = 0; k < 2; ++k) {
    for (const char* part : {".out.weight", ".out.bias"}) {
      auto& p = store_param(m, "decoder" + std::to_string(k) + part);
      std::fill(p.mutable_values().begin(), p.mutable_values().end(), 0.0);
    }
  }
  std::mt19937_64 rng(19);
  const auto desc = random_tensor(rng, {2, 3});
  const auto poses = random_tensor(rng, {2, 3});
  ad::NoGradGuard g;
  const auto out = m.decoder()(poses, desc, 1, false);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t d = 0; d < 3; ++d) CHECK(out.at(i, d) == poses.at(i / 4, d));
}

TEST_CASE("decoder gradient check on descriptors and grids") {
  CapsuleModel m(tiny_config(2, 4, 4), 20);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 3; ++trial) {
    const auto desc = random_tensor(rng, {2, 4});
    const auto poses = random_tensor(rng, {2, 3});
    const double err = gradient_rel_error(
        [&](const std::vector<ad::Tensor>& in) { return random_projection(m.decoder()(in[0], in[1], 1, true), 22); },
        {poses, desc});
    CHECK(err < 1e-4);
  }
  const auto desc = random_tensor(rng, {2, 4});
  const auto poses = random_tensor(rng, {2, 3});
  auto objective = [&] { return random_projection(m.decoder()(poses, desc, 1, true), 23); };
  CHECK(parameter_rel_error(store_param(m, "decoder0.grid"), objective) < 1e-4);
  CHECK(parameter_rel_error(store_param(m, "decoder1.grid"), objective) < 1e-4);
}

TEST_CASE("decoding depends on the input only through the capsule summary") {
  CapsuleModel m(tiny_config(3, 4, 4), 24);
  std::mt19937_64 rng(25);
  const auto desc = random_tensor(rng, {3, 4});
  const auto poses = random_tensor(rng, {3, 3});
  ad::NoGradGuard g;
  const auto a = m.decoder()(poses, desc, 1, false);
  const auto b = m.decoder()(ad::Tensor::constant({3, 3}, poses.values()), ad::Tensor::constant({3, 4}, desc.values()), 1,
                             false);
  CHECK(max_abs_diff(a.values(), b.values()) == 0.0);
}

TEST_CASE("reconstruction loss reaches every parameter at initialization") {
  CapsuleModel m(tiny_config(3, 4, 4), 26);
  std::mt19937_64 rng(27);
  const auto pts = random_tensor(rng, {24, 3});
  const ForwardResult f = m.forward(pts, 2, true, true);
  m.store().zero_grad();
  ad::segment_chamfer(f.canonical_points, f.reconstruction, 2).backward();
  const auto& names = m.store().names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto g = m.store().parameters()[i].grad();
    double norm = 0.0;
    for (double v : g) norm += v * v;
    INFO(names[i]);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("inference matches the training graph in evaluation mode") {
  CapsuleModel m(tiny_config(3, 4, 4), 28);
  data::PointCloud pc;
  geo::Rng rng(29);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 16; ++i) pc.points.emplace_back(u(rng), u(rng), u(rng));
  const auto inf = infer(m, std::span<const data::PointCloud>(&pc, 1));
  REQUIRE(inf.size() == 1);
  CHECK(inf[0].poses.size() == 3);
  CHECK(inf[0].capsule_of_point.size() == 16);
  CHECK(inf[0].reconstruction.size() == 12);
  CHECK(inf[0].canonical.transform.is_valid());
  ad::NoGradGuard g;
  const auto f = m.forward(data::to_tensor(pc), 1, false, true);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t d = 0; d < 3; ++d) CHECK(inf[0].poses[k][static_cast<Eigen::Index>(d)] == f.capsules.poses.at(k, d));
  geo::Vec3 mean = geo::Vec3::Zero();
  for (const auto& p : inf[0].canonical.keypoints) mean += p;
  CHECK(mean.norm() < 1e-9);
}
