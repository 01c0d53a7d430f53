#include "ccaps/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ccaps::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using ConstArr = Eigen::Map<const Eigen::ArrayXd>;
using MutArr = Eigen::Map<Eigen::ArrayXd>;

std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : s[0]; }
std::size_t cols_of(const Shape& s) {
  const auto r = rows_of(s);
  return r == 0 ? 0 : numel(s) / r;
}

ConstMap mat(const Node& n) {
  return {n.value.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
          static_cast<Eigen::Index>(cols_of(n.shape))};
}
ConstMap grad_mat(const Node& n) {
  return {n.grad.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
          static_cast<Eigen::Index>(cols_of(n.shape))};
}
MutMap grad_of(Node& n) {
  auto& g = n.ensure_grad();
  return {g.data(), static_cast<Eigen::Index>(rows_of(n.shape)), static_cast<Eigen::Index>(cols_of(n.shape))};
}
ConstMap mat(const Tensor& t) { return mat(*t.node()); }

ConstArr arr(const Buffer& v) { return {v.data(), static_cast<Eigen::Index>(v.size())}; }
MutArr garr(Node& n) {
  auto& g = n.ensure_grad();
  return {g.data(), static_cast<Eigen::Index>(g.size())};
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

Buffer to_vec(const RowMat& m) { return {m.data(), m.data() + m.size()}; }

void require_2d_rows(const Tensor& t, std::size_t segments, const char* op) {
  if (segments == 0 || t.rows() % segments != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(t.rows()) + " rows do not split into " +
                         std::to_string(segments) + " segments");
  }
}

template <typename Forward, typename Deriv>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Forward f, Deriv d) {
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw DimensionError(std::string(name) + ": cannot broadcast " + to_string(a.shape()) + " with " +
                         to_string(b.shape()));
  }
  const Shape out_shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  Buffer out(n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  return make_result(out_shape, std::move(out), {a, b}, [a_scalar, b_scalar, n, d](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const bool ga = wants(self, 0), gb = wants(self, 1);
    double* pa = ga ? self.parents[0]->ensure_grad().data() : nullptr;
    double* pb = gb ? self.parents[1]->ensure_grad().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = av[a_scalar ? 0 : i], y = bv[b_scalar ? 0 : i];
      const auto [dx, dy] = d(x, y);
      if (ga) pa[a_scalar ? 0 : i] += self.grad[i] * dx;
      if (gb) pb[b_scalar ? 0 : i] += self.grad[i] * dy;
    }
  });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename Forward, typename Deriv>
Tensor unary(const Tensor& a, Forward f, Deriv d) {
  Buffer out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [d](Node& self) {
    if (!wants(self, 0)) return;
    const auto& x = self.parents[0]->value;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         to_string(s));
  }
  AxisSplit out{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  RowMat out = mat(a) * mat(b);
  Shape shape{a.rows(), b.cols()};
  return make_result(shape, to_vec(out), {a, b}, [](Node& self) {
    const auto g = grad_mat(self);
    if (wants(self, 0)) grad_of(*self.parents[0]).noalias() += g * mat(*self.parents[1]).transpose();
    if (wants(self, 1)) grad_of(*self.parents[1]).noalias() += mat(*self.parents[0]).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  RowMat out = mat(a).transpose();
  return make_result({a.cols(), a.rows()}, to_vec(out), {a}, [](Node& self) {
    if (wants(self, 0)) grad_of(*self.parents[0]) += grad_mat(self).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double x, double y) { return std::pair{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(a, b, "div", [](double x, double y) { return x / y; },
                [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor reduce(const Tensor& t, Reduction kind, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(t.shape(), axis, "reduce");
  Shape shape = t.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  const double scale = kind == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
  Buffer out(outer * inner, 0.0);
  const auto v = t.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] += v[(o * n + i) * inner + j];
  for (auto& x : out) x *= scale;
  return make_result(shape, std::move(out), {t}, [outer, n, inner, scale](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < inner; ++j) g[(o * n + i) * inner + j] += scale * self.grad[o * inner + j];
  });
}

Tensor sum(const Tensor& t) {
  const double s = arr(t.node()->value).sum();
  return make_result({1}, {s}, {t}, [](Node& self) {
    if (wants(self, 0)) garr(*self.parents[0]) += self.grad[0];
  });
}

Tensor mean(const Tensor& t) {
  const double n = static_cast<double>(t.size());
  const double s = arr(t.node()->value).sum() / n;
  return make_result({1}, {s}, {t}, [n](Node& self) {
    if (wants(self, 0)) garr(*self.parents[0]) += self.grad[0] / n;
  });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(t.shape(), axis, "softmax");
  Buffer out(t.size());
  const auto v = t.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const auto idx = [&](std::size_t i) { return (o * n + i) * inner + j; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[idx(i)]);
      double z = 0.0;
      for (std::size_t i = 0; i < n; ++i) z += (out[idx(i)] = std::exp(v[idx(i)] - mx));
      for (std::size_t i = 0; i < n; ++i) out[idx(i)] /= z;
    }
  }
  return make_result(t.shape(), std::move(out), {t}, [outer, n, inner](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const auto idx = [&](std::size_t i) { return (o * n + i) * inner + j; };
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += self.grad[idx(i)] * y[idx(i)];
        for (std::size_t i = 0; i < n; ++i) g[idx(i)] += y[idx(i)] * (self.grad[idx(i)] - dot);
      }
    }
  });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (numel(shape) != t.size()) {
    throw DimensionError("reshape: " + to_string(t.shape()) + " -> " + to_string(shape));
  }
  return make_result(std::move(shape), Buffer(t.values().begin(), t.values().end()), {t},
                     [](Node& self) {
                       if (wants(self, 0)) garr(*self.parents[0]) += arr(self.grad);
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (rows && p.cols() != cols) throw DimensionError("concat: column counts differ");
      cols = p.cols();
      rows += p.rows();
    } else {
      if (cols && p.rows() != rows) throw DimensionError("concat: row counts differ");
      rows = p.rows();
      cols += p.cols();
    }
  }
  RowMat out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto m = mat(p);
    if (axis == 0) {
      out.middleRows(static_cast<Eigen::Index>(off), m.rows()) = m;
      off += p.rows();
    } else {
      out.middleCols(static_cast<Eigen::Index>(off), m.cols()) = m;
      off += p.cols();
    }
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_result({rows, cols}, to_vec(out), parents, [axis, offsets](Node& self) {
    const auto g = grad_mat(self);
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (!wants(self, i)) continue;
      auto pg = grad_of(*self.parents[i]);
      const auto o = static_cast<Eigen::Index>(offsets[i]);
      if (axis == 0) pg += g.middleRows(o, pg.rows());
      else pg += g.middleCols(o, pg.cols());
    }
  });
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.rows()) throw DimensionError("slice_rows: range exceeds " + to_string(t.shape()));
  const std::size_t c = t.cols();
  const auto v = t.values();
  Buffer out(v.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          v.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  Shape shape = t.shape();
  if (shape.empty()) shape = {1};
  shape[0] = count;
  return make_result(shape, std::move(out), {t}, [begin, c](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  const std::size_t c = t.cols();
  Buffer out(indices.size() * c);
  const auto v = t.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result({indices.size(), c}, std::move(out), {t}, [idx = std::move(idx), c](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (v.size() != x.cols()) {
    throw DimensionError("add_rowvec: " + to_string(v.shape()) + " vs " + to_string(x.shape()));
  }
  RowMat out = mat(x);
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(v.values().data(), static_cast<Eigen::Index>(v.size()));
  return make_result(x.shape(), to_vec(out), {x, v}, [](Node& self) {
    const auto g = grad_mat(self);
    if (wants(self, 0)) grad_of(*self.parents[0]) += g;
    if (wants(self, 1)) garr(*self.parents[1]) += g.colwise().sum().transpose().array();
  });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  if (v.size() != x.cols()) {
    throw DimensionError("mul_rowvec: " + to_string(v.shape()) + " vs " + to_string(x.shape()));
  }
  const Eigen::Map<const Eigen::RowVectorXd> vv(v.values().data(), static_cast<Eigen::Index>(v.size()));
  RowMat out = mat(x).array().rowwise() * vv.array();
  return make_result(x.shape(), to_vec(out), {x, v}, [](Node& self) {
    const auto g = grad_mat(self);
    const auto& vn = *self.parents[1];
    const Eigen::Map<const Eigen::RowVectorXd> vv(vn.value.data(), static_cast<Eigen::Index>(vn.value.size()));
    if (wants(self, 0)) grad_of(*self.parents[0]).array() += g.array().rowwise() * vv.array();
    if (wants(self, 1))
      garr(*self.parents[1]) += (g.array() * mat(*self.parents[0]).array()).colwise().sum().transpose();
  });
}

Tensor repeat_rows(const Tensor& t, std::size_t times) {
  const std::size_t r = t.rows(), c = t.cols();
  Buffer out(r * times * c);
  const auto v = t.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t k = 0; k < times; ++k)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * c), c, out.begin() + static_cast<std::ptrdiff_t>((i * times + k) * c));
  return make_result({r * times, c}, std::move(out), {t}, [r, c, times](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < times; ++k)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[(i * times + k) * c + j];
  });
}

Tensor tile_rows(const Tensor& t, std::size_t times) {
  const std::size_t n = t.size();
  Buffer out(n * times);
  const auto v = t.values();
  for (std::size_t k = 0; k < times; ++k) std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(k * n));
  return make_result({t.rows() * times, t.cols()}, std::move(out), {t}, [n, times](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t k = 0; k < times; ++k)
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[k * n + i];
  });
}

Tensor broadcast_cols(const Tensor& v, std::size_t c) {
  if (v.cols() != 1) throw DimensionError("broadcast_cols: expected a column vector, got " + to_string(v.shape()));
  const std::size_t r = v.rows();
  Buffer out(r * c);
  for (std::size_t i = 0; i < r; ++i) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * c), c, v.values()[i]);
  return make_result({r, c}, std::move(out), {v}, [r, c](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j];
  });
}

Tensor segment_sum(const Tensor& t, std::size_t segments) {
  require_2d_rows(t, segments, "segment_sum");
  const std::size_t len = t.rows() / segments, c = t.cols();
  Buffer out(segments * c, 0.0);
  const auto v = t.values();
  for (std::size_t s = 0; s < segments; ++s)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < c; ++j) out[s * c + j] += v[(s * len + i) * c + j];
  return make_result({segments, c}, std::move(out), {t}, [segments, len, c](Node& self) {
    if (!wants(self, 0)) return;
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t s = 0; s < segments; ++s)
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < c; ++j) g[(s * len + i) * c + j] += self.grad[s * c + j];
  });
}

Tensor segment_mean(const Tensor& t, std::size_t segments) {
  require_2d_rows(t, segments, "segment_mean");
  return mul_scalar(segment_sum(t, segments), static_cast<double>(segments) / static_cast<double>(t.rows()));
}

Tensor weighted_segment_mean(const Tensor& weights, const Tensor& x, std::size_t segments) {
  if (weights.rows() != x.rows()) {
    throw DimensionError("weighted_segment_mean: " + to_string(weights.shape()) + " vs " + to_string(x.shape()));
  }
  require_2d_rows(x, segments, "weighted_segment_mean");
  const auto len = static_cast<Eigen::Index>(x.rows() / segments);
  const auto k = static_cast<Eigen::Index>(weights.cols());
  const auto d = static_cast<Eigen::Index>(x.cols());
  const auto W = mat(weights);
  const auto X = mat(x);
  RowMat out(static_cast<Eigen::Index>(segments) * k, d);
  Buffer mass(segments * static_cast<std::size_t>(k));
  for (std::size_t s = 0; s < segments; ++s) {
    const auto o = static_cast<Eigen::Index>(s) * len;
    const Eigen::VectorXd a = W.middleRows(o, len).colwise().sum().transpose();
    for (Eigen::Index j = 0; j < k; ++j) {
      if (!(a(j) > 0.0)) {
        throw DegenerateCapsuleError("capsule " + std::to_string(j) + " of segment " + std::to_string(s) +
                                     " has zero total attention");
      }
      mass[s * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] = a(j);
    }
    out.middleRows(static_cast<Eigen::Index>(s) * k, k).noalias() =
        a.cwiseInverse().asDiagonal() * (W.middleRows(o, len).transpose() * X.middleRows(o, len));
  }
  return make_result({segments * static_cast<std::size_t>(k), static_cast<std::size_t>(d)}, to_vec(out),
                     {weights, x}, [segments, len, k, mass = std::move(mass)](Node& self) {
                       const auto G = grad_mat(self);
                       const auto M = mat(self);
                       const auto W = mat(*self.parents[0]);
                       const auto X = mat(*self.parents[1]);
                       const bool gw = wants(self, 0), gx = wants(self, 1);
                       for (std::size_t s = 0; s < segments; ++s) {
                         const auto o = static_cast<Eigen::Index>(s) * len;
                         const auto ko = static_cast<Eigen::Index>(s) * k;
                         const Eigen::Map<const Eigen::VectorXd> a(mass.data() + ko, k);
                         const RowMat Gs = a.cwiseInverse().asDiagonal() * G.middleRows(ko, k);
                         if (gx) {
                           auto gX = grad_of(*self.parents[1]);
                           gX.middleRows(o, len).noalias() += W.middleRows(o, len) * Gs;
                         }
                         if (gw) {
                           const Eigen::RowVectorXd bias = (Gs.array() * M.middleRows(ko, k).array()).rowwise().sum().transpose();
                           auto gWall = grad_of(*self.parents[0]);
                           auto gW = gWall.middleRows(o, len);
                           gW.noalias() += X.middleRows(o, len) * Gs.transpose();
                           gW.rowwise() -= bias;
                         }
                       }
                     });
}

Tensor attentive_normalize(const Tensor& features, const Tensor& attention, std::size_t segments, double eps) {
  if (features.rows() != attention.rows()) {
    throw DimensionError("attentive_normalize: " + to_string(features.shape()) + " vs " +
                         to_string(attention.shape()));
  }
  require_2d_rows(features, segments, "attentive_normalize");
  const auto len = static_cast<Eigen::Index>(features.rows() / segments);
  const auto k = static_cast<Eigen::Index>(attention.cols());
  const auto c = static_cast<Eigen::Index>(features.cols());
  const auto F = mat(features);
  const auto A = mat(attention);

  // Per-segment moments, stacked: mass (S*K), mu and sigma ((S*K) x C).
  Eigen::VectorXd mass(static_cast<Eigen::Index>(segments) * k);
  RowMat mu(static_cast<Eigen::Index>(segments) * k, c);
  RowMat sigma(static_cast<Eigen::Index>(segments) * k, c);
  RowMat out(features.rows(), c);
  for (std::size_t s = 0; s < segments; ++s) {
    const auto o = static_cast<Eigen::Index>(s) * len;
    const auto ko = static_cast<Eigen::Index>(s) * k;
    const auto As = A.middleRows(o, len);
    const auto Fs = F.middleRows(o, len);
    const Eigen::VectorXd a = As.colwise().sum().transpose();
    if ((a.array() <= 0.0).any()) throw DegenerateCapsuleError("attentive_normalize: head with zero attention");
    mass.segment(ko, k) = a;
    const Eigen::VectorXd inv_a = a.cwiseInverse();
    mu.middleRows(ko, k).noalias() = inv_a.asDiagonal() * (As.transpose() * Fs);
    const RowMat second = inv_a.asDiagonal() * (As.transpose() * Fs.cwiseAbs2());
    sigma.middleRows(ko, k) = second - mu.middleRows(ko, k).cwiseAbs2();
    const RowMat S = (sigma.middleRows(ko, k).array() + eps).rsqrt().matrix();
    const RowMat muS = mu.middleRows(ko, k).cwiseProduct(S);
    out.middleRows(o, len) = Fs.cwiseProduct(As * S) - As * muS;
  }

  return make_result(features.shape(), to_vec(out), {features, attention},
                     [segments, len, k, c, eps, mass = std::move(mass), mu = std::move(mu),
                      sigma = std::move(sigma)](Node& self) {
                       const auto G = grad_mat(self);
                       const auto F = mat(*self.parents[0]);
                       const auto A = mat(*self.parents[1]);
                       const bool gf = wants(self, 0), ga = wants(self, 1);
                       for (std::size_t s = 0; s < segments; ++s) {
                         const auto o = static_cast<Eigen::Index>(s) * len;
                         const auto ko = static_cast<Eigen::Index>(s) * k;
                         const auto As = A.middleRows(o, len);
                         const auto Fs = F.middleRows(o, len);
                         const auto Gs = G.middleRows(o, len);
                         const auto mus = mu.middleRows(ko, k);
                         const auto sig = sigma.middleRows(ko, k);
                         const Eigen::VectorXd inv_a = mass.segment(ko, k).cwiseInverse();
                         const RowMat S = (sig.array() + eps).rsqrt().matrix();
                         const RowMat GF = Gs.cwiseProduct(Fs);
                         const RowMat AtG = As.transpose() * Gs;    // K x C
                         const RowMat AtGF = As.transpose() * GF;   // K x C
                         const RowMat g_mu = -S.cwiseProduct(AtG);
                         const RowMat g_S = AtGF - mus.cwiseProduct(AtG);
                         const RowMat g_sig = (-0.5 * g_S.array() * S.array().cube()).matrix();
                         const RowMat g_mu_a = inv_a.asDiagonal() * g_mu;   // g_mu / a
                         const RowMat g_sig_a = inv_a.asDiagonal() * g_sig; // g_sigma / a
                         if (gf) {
                           auto gFall = grad_of(*self.parents[0]);
                           auto gF = gFall.middleRows(o, len);
                           gF += Gs.cwiseProduct(As * S);
                           gF.noalias() += As * g_mu_a;
                           gF += 2.0 * (Fs.cwiseProduct(As * g_sig_a) - As * mus.cwiseProduct(g_sig_a));
                         }
                         if (ga) {
                           auto gAall = grad_of(*self.parents[1]);
                           auto gA = gAall.middleRows(o, len);
                           const RowMat muS = mus.cwiseProduct(S);
                           gA.noalias() += GF * S.transpose();
                           gA.noalias() -= Gs * muS.transpose();
                           gA.noalias() += Fs * g_mu_a.transpose();
                           gA.noalias() += Fs.cwiseAbs2() * g_sig_a.transpose();
                           gA.noalias() -= 2.0 * Fs * g_sig_a.cwiseProduct(mus).transpose();
                           const Eigen::RowVectorXd bias =
                               (g_mu_a.cwiseProduct(mus) - g_sig_a.cwiseProduct(mus.cwiseAbs2()) +
                                g_sig_a.cwiseProduct(sig))
                                   .rowwise()
                                   .sum()
                                   .transpose();
                           gA.rowwise() -= bias;
                         }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, const Tensor& gamma, const Tensor& beta, bool training) {
  const std::size_t n = x.rows(), c = x.cols();
  if (state.running_mean.size() != c || gamma.size() != c || beta.size() != c) {
    throw DimensionError("batch_norm: " + std::to_string(c) + " channels, state has " +
                         std::to_string(state.running_mean.size()));
  }
  const auto X = mat(x);
  Eigen::RowVectorXd mu, var;
  if (training) {
    mu = X.colwise().mean();
    var = (X.rowwise() - mu).array().square().colwise().mean().matrix();
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    for (std::size_t j = 0; j < c; ++j) {
      state.running_mean[j] = state.momentum * state.running_mean[j] + (1.0 - state.momentum) * mu(static_cast<Eigen::Index>(j));
      state.running_var[j] =
          state.momentum * state.running_var[j] + (1.0 - state.momentum) * var(static_cast<Eigen::Index>(j)) * unbias;
    }
  } else {
    mu = Eigen::Map<const Eigen::RowVectorXd>(state.running_mean.data(), static_cast<Eigen::Index>(c));
    var = Eigen::Map<const Eigen::RowVectorXd>(state.running_var.data(), static_cast<Eigen::Index>(c));
  }
  const Eigen::RowVectorXd inv_std = (var.array() + state.eps).rsqrt().matrix();
  RowMat xhat = (X.rowwise() - mu).array().rowwise() * inv_std.array();
  const Eigen::Map<const Eigen::RowVectorXd> g(gamma.values().data(), static_cast<Eigen::Index>(c));
  const Eigen::Map<const Eigen::RowVectorXd> b(beta.values().data(), static_cast<Eigen::Index>(c));
  RowMat out = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  return make_result(x.shape(), to_vec(out), {x, gamma, beta},
                     [training, n, c, inv_std, xhat = std::move(xhat)](Node& self) {
                       const auto G = grad_mat(self);
                       const auto& gn = *self.parents[1];
                       const Eigen::Map<const Eigen::RowVectorXd> gamma(gn.value.data(), static_cast<Eigen::Index>(c));
                       if (wants(self, 1)) garr(*self.parents[1]) += (G.array() * xhat.array()).colwise().sum().transpose();
                       if (wants(self, 2)) garr(*self.parents[2]) += G.colwise().sum().transpose().array();
                       if (!wants(self, 0)) return;
                       const RowMat gx = G.array().rowwise() * gamma.array();
                       auto out = grad_of(*self.parents[0]);
                       if (!training) {
                         out.array() += gx.array().rowwise() * inv_std.array();
                         return;
                       }
                       const double nn = static_cast<double>(n);
                       const Eigen::RowVectorXd sum_g = gx.colwise().sum();
                       const Eigen::RowVectorXd sum_gx = (gx.array() * xhat.array()).colwise().sum();
                       const RowMat centered =
                           (gx.array() * nn).rowwise() - sum_g.array() - xhat.array().rowwise() * sum_gx.array();
                       out.array() += centered.array().rowwise() * (inv_std.array() / nn);
                     });
}

namespace {

struct ChamferPairs {
  double value = 0.0;
  std::vector<std::size_t> nn_of_x, nn_of_y;
};

// Nearest neighbours of each row of one block in the other, lowest index on ties.
ChamferPairs chamfer_block(const double* x, std::size_t nx, const double* y, std::size_t ny, std::size_t d) {
  ChamferPairs out;
  out.nn_of_x.assign(nx, 0);
  out.nn_of_y.assign(ny, 0);
  Buffer best_y(ny, std::numeric_limits<double>::infinity());
  double sum_x = 0.0;
  for (std::size_t i = 0; i < nx; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ny; ++j) {
      double dist = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = x[i * d + t] - y[j * d + t];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        out.nn_of_x[i] = j;
      }
      if (dist < best_y[j]) {
        best_y[j] = dist;
        out.nn_of_y[j] = i;
      }
    }
    sum_x += best;
  }
  double sum_y = 0.0;
  for (double v : best_y) sum_y += v;
  out.value = sum_x / static_cast<double>(nx) + sum_y / static_cast<double>(ny);
  return out;
}

void chamfer_block_backward(double g, const double* x, std::size_t nx, const double* y, std::size_t ny,
                            std::size_t d, const ChamferPairs& pairs, double* gx, double* gy) {
  const double sx = 2.0 * g / static_cast<double>(nx);
  const double sy = 2.0 * g / static_cast<double>(ny);
  for (std::size_t i = 0; i < nx; ++i) {
    const std::size_t j = pairs.nn_of_x[i];
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = sx * (x[i * d + t] - y[j * d + t]);
      if (gx) gx[i * d + t] += diff;
      if (gy) gy[j * d + t] -= diff;
    }
  }
  for (std::size_t j = 0; j < ny; ++j) {
    const std::size_t i = pairs.nn_of_y[j];
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = sy * (y[j * d + t] - x[i * d + t]);
      if (gy) gy[j * d + t] += diff;
      if (gx) gx[i * d + t] -= diff;
    }
  }
}

}  // namespace

Tensor segment_chamfer(const Tensor& x, const Tensor& y, std::size_t segments) {
  if (x.size() == 0 || y.size() == 0) throw DimensionError("chamfer: empty point set");
  if (x.cols() != y.cols()) {
    throw DimensionError("chamfer: point dimensions differ, " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  require_2d_rows(x, segments, "chamfer");
  require_2d_rows(y, segments, "chamfer");
  const std::size_t d = x.cols(), nx = x.rows() / segments, ny = y.rows() / segments;
  std::vector<ChamferPairs> pairs(segments);
  double total = 0.0;
  for (std::size_t s = 0; s < segments; ++s) {
    pairs[s] = chamfer_block(x.values().data() + s * nx * d, nx, y.values().data() + s * ny * d, ny, d);
    total += pairs[s].value;
  }
  const double inv = 1.0 / static_cast<double>(segments);
  return make_result({1}, {total * inv}, {x, y}, [pairs = std::move(pairs), d, nx, ny, inv](Node& self) {
    const double g = self.grad[0] * inv;
    double* gx = wants(self, 0) ? self.parents[0]->ensure_grad().data() : nullptr;
    double* gy = wants(self, 1) ? self.parents[1]->ensure_grad().data() : nullptr;
    const double* xv = self.parents[0]->value.data();
    const double* yv = self.parents[1]->value.data();
    for (std::size_t s = 0; s < pairs.size(); ++s) {
      chamfer_block_backward(g, xv + s * nx * d, nx, yv + s * ny * d, ny, d, pairs[s], gx ? gx + s * nx * d : nullptr,
                             gy ? gy + s * ny * d : nullptr);
    }
  });
}

Tensor chamfer(const Tensor& x, const Tensor& y) { return segment_chamfer(x, y, 1); }

}  // namespace ccaps::ad
