#include <cmath>
#include <numeric>

#include "ccaps/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace ccaps;
using ad::Tensor;
using testing::gradient_rel_error;
using testing::random_projection;
using testing::random_tensor;

TEST_CASE("matmul") {
  SUBCASE("identity times vector") {
    const Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor v = Tensor::constant({3, 1}, {0.5, -2.0, 7.0});
    const Tensor out = ad::matmul(eye, v);
    CHECK(out.values()[0] == 0.5);
    CHECK(out.values()[1] == -2.0);
    CHECK(out.values()[2] == 7.0);
  }
  SUBCASE("scalar product") {
    CHECK(ad::matmul(Tensor::constant({1, 1}, {2}), Tensor::constant({1, 1}, {3})).item() == 6.0);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  }
  SUBCASE("gradient of sum") {
    std::mt19937_64 rng(11);
    const double err = gradient_rel_error([](const auto& in) { return ad::sum(ad::matmul(in[0], in[1])); },
                                          {random_tensor(rng, {4, 5}), random_tensor(rng, {5, 3})});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("elementwise") {
  const Tensor r = ad::relu(Tensor::constant({2}, {-1.0, 2.0}));
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 2.0);
  CHECK(ad::tanh(Tensor::scalar(0.0)).item() == 0.0);

  std::mt19937_64 rng(3);
  const double err = gradient_rel_error(
      [](const auto& in) { return random_projection(ad::mul(ad::mul(in[0], in[1]), ad::tanh(in[0])), 5); },
      {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})});
  CHECK(err < 1e-6);

  const double err2 = gradient_rel_error(
      [](const auto& in) {
        return random_projection(ad::div(ad::exp(in[0]), ad::sqrt(ad::square(in[1]) + 1.0)) - in[0] * 2.0, 7);
      },
      {random_tensor(rng, {5}), random_tensor(rng, {5})});
  CHECK(err2 < 1e-6);

  SUBCASE("scalar broadcast only") {
    CHECK_NOTHROW(ad::add(Tensor::zeros({2, 2}), Tensor::scalar(1.0)));
    CHECK_THROWS_AS(ad::add(Tensor::zeros({2, 2}), Tensor::zeros({2})), DimensionError);
  }
  SUBCASE("division by zero is flagged by the health check") {
    const Tensor q = ad::div(Tensor::constant({2}, {1.0, 1.0}), Tensor::constant({2}, {1.0, 0.0}));
    CHECK_FALSE(ad::all_finite(q));
  }
}

TEST_CASE("reduce") {
  CHECK(ad::sum(Tensor::constant({3}, {1, 2, 3})).item() == 6.0);
  CHECK(ad::reduce(Tensor::constant({3}, {1, 2, 3}), ad::Reduction::Sum, 0).item() == 6.0);
  const Tensor c = Tensor::full({4, 2}, 2.5);
  CHECK(ad::mean(c).item() == doctest::Approx(2.5).epsilon(1e-15));
  const Tensor col = ad::mean(c, 0);
  CHECK(col.shape() == ad::Shape{2});
  CHECK(col.values()[1] == doctest::Approx(2.5));

  std::mt19937_64 rng(5);
  const double err = gradient_rel_error([](const auto& in) { return random_projection(ad::mean(in[0], 0), 9); },
                                        {random_tensor(rng, {3, 4})});
  CHECK(err < 1e-6);
  CHECK_THROWS_AS(ad::reduce(c, ad::Reduction::Sum, 2), DimensionError);
}

TEST_CASE("softmax") {
  const Tensor u = ad::softmax(Tensor::zeros({3}), 0);
  for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = ad::softmax(Tensor::constant({2}, {1000.0, 0.0}), 0);
  CHECK(ad::all_finite(big));
  CHECK(big.values()[0] == doctest::Approx(1.0));
  CHECK(big.values()[1] == doctest::Approx(0.0));

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor(rng, {5, 3}, -4.0, 4.0);
    const Tensor y = ad::softmax(x, 1);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(y.at(r, c) >= 0.0);
        s += y.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK(gradient_rel_error([](const auto& in) { return random_projection(ad::softmax(in[0], 1), 2); }, {x}) <
          1e-6);
  }
}

TEST_CASE("batch norm") {
  SUBCASE("constant input in training mode normalizes to zero") {
    ad::BatchNormState st(3);
    const Tensor gamma = Tensor::full({3}, 1.0), beta = Tensor::zeros({3});
    const Tensor y = ad::batch_norm(Tensor::full({6, 3}, 4.2), st, gamma, beta, true);
    for (double v : y.values()) CHECK(v == 0.0);
    CHECK(st.running_mean[0] == doctest::Approx(0.42));
  }
  SUBCASE("eval mode with unit statistics is the identity") {
    ad::BatchNormState st(2);
    st.eps = 0.0;
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(rng, {5, 2});
    const Tensor y = ad::batch_norm(x, st, Tensor::full({2}, 1.0), Tensor::zeros({2}), false);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-15));
  }
  SUBCASE("training-mode gradient") {
    std::mt19937_64 rng(21);
    const double err = gradient_rel_error(
        [](const auto& in) {
          ad::BatchNormState st(4);
          return random_projection(ad::batch_norm(in[0], st, in[1], in[2], true), 4);
        },
        {random_tensor(rng, {8, 4}), random_tensor(rng, {4}, 0.5, 1.5), random_tensor(rng, {4})});
    CHECK(err < 1e-5);
  }
  SUBCASE("channel mismatch") {
    ad::BatchNormState st(2);
    CHECK_THROWS_AS(ad::batch_norm(Tensor::zeros({4, 3}), st, Tensor::zeros({3}), Tensor::zeros({3}), true),
                    DimensionError);
  }
}

TEST_CASE("shape plumbing gradients") {
  std::mt19937_64 rng(99);
  const Tensor a = random_tensor(rng, {4, 3});
  const Tensor b = random_tensor(rng, {2, 3});
  const Tensor v = random_tensor(rng, {3});
  const std::vector<std::size_t> idx{3, 0, 0, 2};
  const double err = gradient_rel_error(
      [&](const auto& in) {
        const std::vector<Tensor> rows{in[0], in[1]};
        const Tensor stacked = ad::concat(rows, 0);                          // 6x3
        const Tensor wide = ad::concat(std::vector<Tensor>{in[0], in[0]}, 1);  // 4x6
        Tensor acc = random_projection(ad::add_rowvec(stacked, in[2]), 1);
        acc = acc + random_projection(ad::mul_rowvec(ad::slice_rows(stacked, 1, 3), in[2]), 2);
        acc = acc + random_projection(ad::gather_rows(in[0], idx), 3);
        acc = acc + random_projection(ad::repeat_rows(in[1], 3), 4) + random_projection(ad::tile_rows(in[1], 2), 5);
        acc = acc + random_projection(ad::broadcast_cols(ad::sum(in[0], 1), 2), 6);
        acc = acc + random_projection(ad::segment_mean(stacked, 3), 7) + random_projection(ad::transpose(wide), 8);
        acc = acc + random_projection(ad::reshape(in[0], {2, 6}), 10);
        return acc;
      },
      {a, b, v});
  CHECK(err < 1e-6);
}

TEST_CASE("weighted segment mean") {
  std::mt19937_64 rng(4);
  SUBCASE("uniform weights give the segment centroid") {
    const Tensor x = random_tensor(rng, {6, 3});
    const Tensor m = ad::weighted_segment_mean(Tensor::full({6, 2}, 0.5), x, 2);
    CHECK(m.shape() == ad::Shape{4, 3});
    for (std::size_t c = 0; c < 3; ++c) {
      const double centroid = (x.at(3, c) + x.at(4, c) + x.at(5, c)) / 3.0;
      CHECK(m.at(2, c) == doctest::Approx(centroid).epsilon(1e-14));
      CHECK(m.at(3, c) == doctest::Approx(centroid).epsilon(1e-14));
    }
  }
  SUBCASE("zero mass is a degenerate capsule") {
    CHECK_THROWS_AS(ad::weighted_segment_mean(Tensor::zeros({4, 2}), Tensor::zeros({4, 3}), 1),
                    DegenerateCapsuleError);
  }
  SUBCASE("gradient") {
    const Tensor w = ad::softmax(random_tensor(rng, {10, 3}), 1);
    const double err = gradient_rel_error(
        [](const auto& in) { return random_projection(ad::weighted_segment_mean(in[0], in[1], 2), 3); },
        {w, random_tensor(rng, {10, 4})});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("attentive normalization") {
  std::mt19937_64 rng(17);
  SUBCASE("single head output has zero mean") {
    const Tensor f = random_tensor(rng, {12, 5});
    // a softmax over one head is identically one
    const Tensor a = ad::softmax(random_tensor(rng, {12, 1}), 1);
    const Tensor y = ad::attentive_normalize(f, a, 1, 1e-3);
    for (std::size_t c = 0; c < 5; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 12; ++p) acc += y.at(p, c);
      CHECK(std::abs(acc / 12.0) < 1e-9);
    }
  }
  SUBCASE("constant features normalize to zero") {
    const Tensor y = ad::attentive_normalize(Tensor::full({8, 3}, 1.7), ad::softmax(random_tensor(rng, {8, 4}), 1),
                                             2, 1e-3);
    for (double v : y.values()) CHECK(std::abs(v) < 1e-9);
  }
  SUBCASE("permuting points permutes the output") {
    const Tensor f = random_tensor(rng, {9, 4});
    const Tensor a = ad::softmax(random_tensor(rng, {9, 3}), 1);
    const std::vector<std::size_t> perm{4, 2, 8, 0, 1, 7, 3, 6, 5};
    const Tensor y = ad::attentive_normalize(f, a, 1, 1e-3);
    const Tensor yp = ad::attentive_normalize(ad::gather_rows(f, perm), ad::gather_rows(a, perm), 1, 1e-3);
    for (std::size_t i = 0; i < perm.size(); ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(yp.at(i, c) - y.at(perm[i], c)) < 1e-12);
  }
  SUBCASE("gradient") {
    for (int trial = 0; trial < 3; ++trial) {
      const double err = gradient_rel_error(
          [](const auto& in) {
            return random_projection(ad::attentive_normalize(in[0], ad::softmax(in[1], 1), 2, 1e-3), 12);
          },
          {random_tensor(rng, {10, 4}), random_tensor(rng, {10, 3})});
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("repeated forward passes are bitwise identical") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor(rng, {16, 6});
  const Tensor w = random_tensor(rng, {6, 3});
  auto run = [&] {
    ad::BatchNormState st(3);
    const Tensor h = ad::batch_norm(ad::matmul(x, w), st, Tensor::full({3}, 1.0), Tensor::zeros({3}), true);
    return ad::attentive_normalize(h, ad::softmax(h, 1), 2, 1e-3);
  };
  const Tensor a = run(), b = run();
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}
