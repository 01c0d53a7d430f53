#include "ccaps/losses.hpp"

#include "ccaps/errors.hpp"
#include "ccaps/ops.hpp"

namespace ccaps::loss {

namespace {

void require_rows(const Tensor& t, std::size_t clouds, const char* what) {
  if (clouds == 0 || t.rows() % clouds != 0)
    throw DimensionError(std::string(what) + ": rows not divisible by the cloud count");
}

// (1/rows) sum of squared entries: the per-row squared norm averaged over rows.
Tensor mean_row_sq(const Tensor& d) { return ad::sum(ad::square(d)) / static_cast<double>(d.rows()); }

Tensor or_zero(const Tensor& t) { return t.defined() ? t : Tensor::scalar(0.0); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {equivariance, invariance, equilibrium, localization, canonical, recon})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

Tensor chamfer(const Tensor& x, const Tensor& y) { return ad::chamfer(x, y); }

Tensor equivariance(const Tensor& poses_a, const Tensor& poses_b, std::span<const geo::RigidTransform> ta,
                    std::span<const geo::RigidTransform> tb) {
  if (poses_a.shape() != poses_b.shape()) throw DimensionError("equivariance: pose shapes differ");
  if (ta.size() != tb.size() || ta.empty()) throw DimensionError("equivariance: transform count mismatch");
  const std::size_t clouds = ta.size();
  require_rows(poses_a, clouds, "equivariance");
  const std::size_t k = poses_a.rows() / clouds;
  std::vector<Tensor> mapped;
  for (std::size_t b = 0; b < clouds; ++b) {
    const geo::DiffRigid rel = geo::constant_rigid(ta[b] * tb[b].inverse());
    mapped.push_back(geo::apply(rel, ad::slice_rows(poses_b, b * k, k)));
  }
  return mean_row_sq(poses_a - ad::concat(mapped, 0));
}

Tensor invariance(const Tensor& desc_a, const Tensor& desc_b, std::size_t clouds) {
  if (desc_a.shape() != desc_b.shape()) throw DimensionError("invariance: descriptor shapes differ");
  require_rows(desc_a, clouds, "invariance");
  return mean_row_sq(desc_a - desc_b);
}

Tensor equilibrium(const Tensor& attention, std::size_t clouds) {
  require_rows(attention, clouds, "equilibrium");
  const Tensor mass = ad::segment_sum(attention, clouds);  // B x K
  const Tensor centred = mass - ad::broadcast_cols(ad::mean(mass, 1), mass.cols());
  return ad::mean(ad::square(centred));
}

Tensor localization(const Tensor& points, const Tensor& attention, const Tensor& poses, std::size_t clouds) {
  require_rows(points, clouds, "localization");
  // sum_p A_pk |theta_k - P_p|^2 / a_k = E_k[|P|^2] - 2 theta_k . E_k[P] + |theta_k|^2
  const Tensor sq = ad::reshape(ad::sum(ad::square(points), 1), {points.rows(), 1});
  const Tensor second = ad::weighted_segment_mean(attention, sq, clouds);  // (B K) x 1
  const Tensor first = ad::weighted_segment_mean(attention, points, clouds);
  if (first.shape() != poses.shape()) throw DimensionError("localization: pose shape mismatch");
  const Tensor cross = ad::sum(first * poses, 1);
  const Tensor norm = ad::sum(ad::square(poses), 1);
  return ad::mean(ad::reshape(second, {second.rows()}) - cross * 2.0 + norm);
}

Tensor canonical(const Tensor& poses, const Tensor& keypoints, std::size_t clouds) {
  require_rows(poses, clouds, "canonical");
  if (poses.shape() != keypoints.shape()) throw DimensionError("canonical: shape mismatch");
  const std::size_t k = poses.rows() / clouds;
  std::vector<geo::DiffRigid> frames;
  for (std::size_t b = 0; b < clouds; ++b)
    frames.push_back(geo::diff_kabsch(ad::slice_rows(poses, b * k, k), ad::slice_rows(keypoints, b * k, k)));
  return canonical(poses, keypoints, frames);
}

Tensor canonical(const Tensor& poses, const Tensor& keypoints, std::span<const geo::DiffRigid> frames) {
  const std::size_t clouds = frames.size();
  require_rows(poses, clouds, "canonical");
  const std::size_t k = poses.rows() / clouds;
  std::vector<Tensor> moved;
  for (std::size_t b = 0; b < clouds; ++b) moved.push_back(geo::apply(frames[b], ad::slice_rows(poses, b * k, k)));
  return mean_row_sq(ad::concat(moved, 0) - keypoints);
}

Tensor recon(const Tensor& canonical_points, const Tensor& reconstruction, std::size_t clouds) {
  return ad::segment_chamfer(canonical_points, reconstruction, clouds);
}

const std::vector<std::string>& LossReport::names() {
  static const std::vector<std::string> n{"equivariance", "invariance", "equilibrium", "localization",
                                          "canonical",    "recon",      "total"};
  return n;
}

std::vector<double> LossReport::values() const {
  return {equivariance, invariance, equilibrium, localization, canonical, recon, total};
}

LossTerms symmetric(const LossTerms& a, const LossTerms& b) {
  auto avg = [](const Tensor& x, const Tensor& y) {
    if (!x.defined() || !y.defined()) return x.defined() ? x : y;
    return (x + y) * 0.5;
  };
  LossTerms out;
  out.equivariance = a.equivariance;
  out.invariance = a.invariance;
  out.equilibrium = avg(a.equilibrium, b.equilibrium);
  out.localization = avg(a.localization, b.localization);
  out.canonical = avg(a.canonical, b.canonical);
  out.recon = avg(a.recon, b.recon);
  return out;
}

TotalLoss total_loss(const LossTerms& t, const LossWeights& w) {
  const Tensor terms[] = {or_zero(t.equivariance), or_zero(t.invariance),   or_zero(t.equilibrium),
                          or_zero(t.localization), or_zero(t.canonical),    or_zero(t.recon)};
  const double weights[] = {w.equivariance, w.invariance, w.equilibrium, w.localization, w.canonical, w.recon};
  TotalLoss out;
  out.total = Tensor::scalar(0.0);
  double* slots[] = {&out.report.equivariance, &out.report.invariance, &out.report.equilibrium,
                     &out.report.localization, &out.report.canonical,  &out.report.recon};
  for (int i = 0; i < 6; ++i) {
    *slots[i] = terms[i].item();
    if (weights[i] != 0.0) out.total = out.total + terms[i] * weights[i];
  }
  out.report.total = out.total.item();
  return out;
}

}  // namespace ccaps::loss
