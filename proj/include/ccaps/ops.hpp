#pragma once

#include <span>
#include <vector>

#include "ccaps/tensor.hpp"

namespace ccaps::ad {

// All matrix-style ops treat a tensor as rows() x cols(), i.e. the leading
// dimension against everything else flattened.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise binary ops accept identical shapes or a one-element operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }

enum class Reduction { Sum, Mean };

/// Reduces along `axis`, dropping it (a rank-1 input yields shape {1}).
Tensor reduce(const Tensor& t, Reduction kind, std::size_t axis);
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
inline Tensor sum(const Tensor& t, std::size_t axis) { return reduce(t, Reduction::Sum, axis); }
inline Tensor mean(const Tensor& t, std::size_t axis) { return reduce(t, Reduction::Mean, axis); }

/// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& t, std::size_t axis);

Tensor reshape(const Tensor& t, Shape shape);
/// Concatenates 2-D tensors along axis 0 (rows) or 1 (columns).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

/// x (N x C) plus/times a length-C vector broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
/// Each row of t repeated `times` times consecutively.
Tensor repeat_rows(const Tensor& t, std::size_t times);
/// The whole of t stacked `times` times.
Tensor tile_rows(const Tensor& t, std::size_t times);
/// Column vector (N x 1) broadcast to N x c.
Tensor broadcast_cols(const Tensor& v, std::size_t c);

/// Rows grouped in `segments` equal consecutive blocks; per-block sum/mean.
Tensor segment_sum(const Tensor& t, std::size_t segments);
Tensor segment_mean(const Tensor& t, std::size_t segments);

/// Attention-weighted mean per segment and head.
///
/// weights: N x K (non-negative), x: N x D, rows split into `segments`
/// blocks. Returns (segments*K) x D where row s*K+k is
/// sum_p w[p,k] x[p] / sum_p w[p,k] over the rows p of block s.
Tensor weighted_segment_mean(const Tensor& weights, const Tensor& x, std::size_t segments);

/// Multi-headed attentive context normalization.
///
/// For each segment with per-head weighted moments mu_k, sigma_k of the
/// features, returns sum_k A[p,k] (F[p] - mu_k) / sqrt(sigma_k + eps).
Tensor attentive_normalize(const Tensor& features, const Tensor& attention, std::size_t segments,
                           double eps);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;  // weight of the previous running value
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel (column) batch normalization over all rows.
Tensor batch_norm(const Tensor& x, BatchNormState& state, const Tensor& gamma, const Tensor& beta,
                  bool training);

/// Symmetric Chamfer distance between two point sets (rows are points):
/// mean_x min_y |x-y|^2 + mean_y min_x |x-y|^2. Ties go to the lowest index.
Tensor chamfer(const Tensor& x, const Tensor& y);

/// Mean of per-segment Chamfer distances; x and y are split into `segments`
/// equal row blocks.
Tensor segment_chamfer(const Tensor& x, const Tensor& y, std::size_t segments);

}  // namespace ccaps::ad
