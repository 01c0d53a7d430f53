#include <cmath>
#include <limits>
#include <random>

#include "ccaps/diff_kabsch.hpp"
#include "ccaps/errors.hpp"
#include "ccaps/losses.hpp"
#include "ccaps/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace ccaps;
using ad::Tensor;
using ccaps::testing::gradient_rel_error;
using ccaps::testing::random_tensor;

namespace {

double brute_chamfer(const Tensor& x, const Tensor& y) {
  auto one_way = [](const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < b.rows(); ++j) {
        double d = 0.0;
        for (std::size_t c = 0; c < 3; ++c) d += (a.at(i, c) - b.at(j, c)) * (a.at(i, c) - b.at(j, c));
        best = std::min(best, d);
      }
      acc += best;
    }
    return acc / static_cast<double>(a.rows());
  };
  return one_way(x, y) + one_way(y, x);
}

Tensor moved(const geo::RigidTransform& t, const Tensor& pts) {
  ad::NoGradGuard g;
  return geo::apply(geo::constant_rigid(t), pts).detach();
}

Tensor row_stochastic(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  ad::NoGradGuard g;
  return ad::softmax(random_tensor(rng, {rows, cols}, -2.0, 2.0), 1).detach();
}

geo::RigidTransform random_rigid(geo::Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  return {geo::sample_uniform_rotation(rng), geo::Vec3(u(rng), u(rng), u(rng))};
}

}  // namespace

TEST_CASE("chamfer") {
  std::mt19937_64 rng(1);
  SUBCASE("zero on identical sets") {
    const auto x = random_tensor(rng, {17, 3});
    CHECK(loss::chamfer(x, x).item() == 0.0);
  }
  SUBCASE("two single points at distance d") {
    const auto x = Tensor::constant({1, 3}, {0.0, 0.0, 0.0});
    const auto y = Tensor::constant({1, 3}, {0.3, 0.4, 0.0});
    CHECK(std::abs(loss::chamfer(x, y).item() - 2.0 * 0.25) < 1e-15);
  }
  SUBCASE("brute-force oracle and symmetry") {
    for (int i = 0; i < 50; ++i) {
      const auto x = random_tensor(rng, {50, 3});
      const auto y = random_tensor(rng, {60, 3});
      const double c = loss::chamfer(x, y).item();
      CHECK(std::abs(c - brute_chamfer(x, y)) < 1e-12);
      CHECK(std::abs(c - loss::chamfer(y, x).item()) < 1e-12);
    }
  }
  SUBCASE("empty set") {
    CHECK_THROWS_AS(loss::chamfer(Tensor::zeros({0, 3}), random_tensor(rng, {4, 3})), DimensionError);
  }
  SUBCASE("gradient") {
    for (int i = 0; i < 5; ++i) {
      const auto x = random_tensor(rng, {7, 3});
      const auto y = random_tensor(rng, {9, 3});
      CHECK(gradient_rel_error([](const std::vector<Tensor>& in) { return loss::chamfer(in[0], in[1]); }, {x, y}) < 1e-4);
    }
  }
}

TEST_CASE("equivariance loss") {
  std::mt19937_64 rng(2);
  geo::Rng grng(3);
  const auto theta = random_tensor(rng, {5, 3});
  const auto ta = random_rigid(grng), tb = random_rigid(grng);
  const std::vector<geo::RigidTransform> vta{ta}, vtb{tb};

  SUBCASE("zero for exactly equivariant poses") {
    CHECK(std::abs(loss::equivariance(moved(ta, theta), moved(tb, theta), vta, vtb).item()) < 1e-12);
  }
  SUBCASE("unit offset under identity transforms") {
    const std::vector<geo::RigidTransform> id{geo::RigidTransform::identity()};
    const auto shifted = ad::add_rowvec(theta, Tensor::constant({3}, {1.0, 0.0, 0.0}));
    CHECK(std::abs(loss::equivariance(shifted, theta, id, id).item() - 1.0) < 1e-12);
  }
  SUBCASE("unchanged by a common rigid motion") {
    const auto a = random_tensor(rng, {5, 3}), b = random_tensor(rng, {5, 3});
    const auto g = random_rigid(grng);
    const std::vector<geo::RigidTransform> gta{g * ta};
    const double base = loss::equivariance(a, b, vta, vtb).item();
    CHECK(std::abs(loss::equivariance(moved(g, a), b, gta, vtb).item() - base) < 1e-10);
  }
  SUBCASE("gradient") {
    for (int i = 0; i < 5; ++i) {
      const auto a = random_tensor(rng, {4, 3}), b = random_tensor(rng, {4, 3});
      CHECK(gradient_rel_error(
                [&](const std::vector<Tensor>& in) { return loss::equivariance(in[0], in[1], vta, vtb); }, {a, b}) <
            1e-4);
    }
  }
}

TEST_CASE("invariance loss") {
  std::mt19937_64 rng(4);
  const auto a = random_tensor(rng, {10, 4});
  CHECK(loss::invariance(a, a, 1).item() == 0.0);
  std::vector<double> v(a.values().begin(), a.values().end());
  v[2 * 4 + 1] += 1.0;
  const auto b = Tensor::constant({10, 4}, std::span<const double>(v));
  CHECK(std::abs(loss::invariance(a, b, 1).item() - 0.1) < 1e-12);
  CHECK(loss::invariance(a, b, 1).item() == loss::invariance(b, a, 1).item());
  CHECK(gradient_rel_error([](const std::vector<Tensor>& in) { return loss::invariance(in[0], in[1], 2); },
                           {random_tensor(rng, {6, 3}), random_tensor(rng, {6, 3})}) < 1e-4);
}

TEST_CASE("equilibrium loss") {
  std::mt19937_64 rng(5);
  CHECK(loss::equilibrium(Tensor::full({12, 4}, 0.25), 1).item() == 0.0);
  std::vector<double> onehot(20, 0.0);
  for (std::size_t p = 0; p < 10; ++p) onehot[2 * p] = 1.0;
  CHECK(std::abs(loss::equilibrium(Tensor::constant({10, 2}, std::span<const double>(onehot)), 1).item() - 25.0) < 1e-12);

  const auto a = row_stochastic(rng, 9, 3);
  const std::vector<std::size_t> cols{2, 0, 1};
  const auto swapped = ad::transpose(ad::gather_rows(ad::transpose(a), cols));
  CHECK(std::abs(loss::equilibrium(a, 1).item() - loss::equilibrium(swapped, 1).item()) < 1e-12);
  CHECK(gradient_rel_error([](const std::vector<Tensor>& in) { return loss::equilibrium(in[0], 2); },
                           {row_stochastic(rng, 10, 3)}) < 1e-4);
}

TEST_CASE("localization loss") {
  std::mt19937_64 rng(6);
  geo::Rng grng(7);
  SUBCASE("one-hot columns at their points") {
    const auto pts = random_tensor(rng, {3, 3});
    const auto eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(std::abs(loss::localization(pts, eye, pts, 1).item()) < 1e-15);
  }
  SUBCASE("two symmetric points around the origin") {
    const auto pts = Tensor::constant({2, 3}, {1.0, 0.0, 0.0, -1.0, 0.0, 0.0});
    const auto a = Tensor::full({2, 1}, 1.0);
    CHECK(std::abs(loss::localization(pts, a, Tensor::zeros({1, 3}), 1).item() - 1.0) < 1e-15);
  }
  SUBCASE("rigid motion of points and poses together") {
    const auto pts = random_tensor(rng, {12, 3});
    const auto a = row_stochastic(rng, 12, 4);
    const auto theta = random_tensor(rng, {4, 3});
    const auto t = random_rigid(grng);
    const double base = loss::localization(pts, a, theta, 1).item();
    CHECK(std::abs(loss::localization(moved(t, pts), a, moved(t, theta), 1).item() - base) < 1e-12);
  }
  SUBCASE("matches the direct double sum") {
    const auto pts = random_tensor(rng, {10, 3});
    const auto a = row_stochastic(rng, 10, 3);
    const auto theta = random_tensor(rng, {3, 3});
    double expected = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      double mass = 0.0, acc = 0.0;
      for (std::size_t p = 0; p < 10; ++p) {
        double d = 0.0;
        for (std::size_t c = 0; c < 3; ++c) d += (theta.at(k, c) - pts.at(p, c)) * (theta.at(k, c) - pts.at(p, c));
        acc += a.at(p, k) * d;
        mass += a.at(p, k);
      }
      expected += acc / mass / 3.0;
    }
    CHECK(std::abs(loss::localization(pts, a, theta, 1).item() - expected) < 1e-12);
  }
  SUBCASE("gradient") {
    for (int i = 0; i < 5; ++i) {
      const auto pts = random_tensor(rng, {8, 3});
      CHECK(gradient_rel_error(
                [&](const std::vector<Tensor>& in) {
                  return loss::localization(pts, ad::softmax(in[0], 1), in[1], 2);
                },
                {random_tensor(rng, {8, 2}), random_tensor(rng, {4, 3})}) < 1e-4);
    }
  }
}

TEST_CASE("canonical loss") {
  std::mt19937_64 rng(8);
  geo::Rng grng(9);
  const auto theta = random_tensor(rng, {6, 3});
  SUBCASE("zero for rigidly related keypoints") {
    CHECK(std::abs(loss::canonical(theta, moved(random_rigid(grng), theta), 1).item()) < 1e-12);
  }
  SUBCASE("optimal transform beats the identity") {
    for (int i = 0; i < 20; ++i) {
      const auto a = random_tensor(rng, {6, 3}), b = random_tensor(rng, {6, 3});
      CHECK(loss::canonical(a, b, 1).item() <= loss::invariance(a, b, 1).item() + 1e-12);
    }
  }
  SUBCASE("invariant to a rigid pre-motion of the poses") {
    const auto target = random_tensor(rng, {6, 3});
    const double base = loss::canonical(theta, target, 1).item();
    CHECK(std::abs(loss::canonical(moved(random_rigid(grng), theta), target, 1).item() - base) < 1e-10);
  }
  SUBCASE("gradient through both arguments") {
    for (int i = 0; i < 5; ++i)
      CHECK(gradient_rel_error([](const std::vector<Tensor>& in) { return loss::canonical(in[0], in[1], 2); },
                               {random_tensor(rng, {8, 3}), random_tensor(rng, {8, 3})}) < 1e-4);
  }
}

TEST_CASE("reconstruction loss") {
  std::mt19937_64 rng(10);
  const auto pts = random_tensor(rng, {16, 3});
  CHECK(loss::recon(pts, pts, 2).item() == 0.0);
  const auto rec = random_tensor(rng, {10, 3});
  const double per_cloud = (brute_chamfer(ad::slice_rows(pts, 0, 8), ad::slice_rows(rec, 0, 5)) +
                            brute_chamfer(ad::slice_rows(pts, 8, 8), ad::slice_rows(rec, 5, 5))) /
                           2.0;
  CHECK(std::abs(loss::recon(pts, rec, 2).item() - per_cloud) < 1e-12);
}

TEST_CASE("weights") {
  const auto u = loss::LossWeights::unaligned();
  CHECK(u.equivariance == 5.0);
  CHECK(u.equilibrium == 1e-3);
  CHECK(u.localization == 1.0);
  const auto a = loss::LossWeights::aligned();
  CHECK(a.equivariance == 0.0);
  CHECK(a.invariance == 0.0);
  CHECK(a.localization == 1e-3);
  CHECK(a.equilibrium == 1e-6);
  loss::LossWeights bad;
  bad.recon = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("total loss") {
  std::mt19937_64 rng(11);
  auto scalar = [&] { return Tensor::scalar(std::uniform_real_distribution<double>(0.0, 2.0)(rng)); };
  loss::LossTerms t{scalar(), scalar(), scalar(), scalar(), scalar(), scalar()};
  const loss::LossWeights w = loss::LossWeights::unaligned();
  const auto r = loss::total_loss(t, w);
  const double expected = 5.0 * t.equivariance.item() + t.invariance.item() + 1e-3 * t.equilibrium.item() +
                          t.localization.item() + t.canonical.item() + t.recon.item();
  CHECK(std::abs(r.total.item() - expected) < 1e-12);
  CHECK(std::abs(r.report.total - expected) < 1e-12);
  CHECK(r.report.equivariance == t.equivariance.item());

  const loss::LossTerms zero{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                             Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)};
  CHECK(loss::total_loss(zero, w).total.item() == 0.0);
  loss::LossTerms partial;
  partial.recon = Tensor::scalar(0.5);
  CHECK(loss::total_loss(partial, w).total.item() == 0.5);
}

TEST_CASE("branch swap leaves the Siamese total unchanged") {
  std::mt19937_64 rng(12);
  geo::Rng grng(13);
  const auto pa = random_tensor(rng, {10, 3}), pb = random_tensor(rng, {10, 3});
  const auto aa = row_stochastic(rng, 10, 3), ab = row_stochastic(rng, 10, 3);
  const auto ta = random_tensor(rng, {3, 3}), tb = random_tensor(rng, {3, 3});
  const auto ba = random_tensor(rng, {3, 4}), bb = random_tensor(rng, {3, 4});
  const auto kpa = random_tensor(rng, {3, 3}), kpb = random_tensor(rng, {3, 3});
  const std::vector<geo::RigidTransform> xa{random_rigid(grng)}, xb{random_rigid(grng)};

  auto branch = [](const Tensor& p, const Tensor& a, const Tensor& th, const Tensor& kp) {
    loss::LossTerms t;
    t.equilibrium = loss::equilibrium(a, 1);
    t.localization = loss::localization(p, a, th, 1);
    t.canonical = loss::canonical(th, kp, 1);
    return t;
  };
  loss::LossTerms a = branch(pa, aa, ta, kpa), b = branch(pb, ab, tb, kpb);
  a.equivariance = loss::equivariance(ta, tb, xa, xb);
  a.invariance = loss::invariance(ba, bb, 1);
  b.equivariance = loss::equivariance(tb, ta, xb, xa);
  b.invariance = loss::invariance(bb, ba, 1);
  const auto w = loss::LossWeights::unaligned();
  const double ab_total = loss::total_loss(loss::symmetric(a, b), w).total.item();
  const double ba_total = loss::total_loss(loss::symmetric(b, a), w).total.item();
  CHECK(std::abs(ab_total - ba_total) < 1e-12);
}
