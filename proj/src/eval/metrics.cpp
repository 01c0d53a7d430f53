#include "ccaps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ccaps/errors.hpp"

namespace ccaps::eval {

CanonStabilityReport mstd(const std::vector<std::vector<Mat3>>& rotations) {
  if (rotations.empty()) throw DimensionError("mstd: no objects");
  CanonStabilityReport r;
  r.objects = rotations.size();
  r.rotations_per_object = rotations.front().size();
  double acc = 0.0;
  for (const auto& obj : rotations) {
    if (obj.size() < 2) throw DimensionError("mstd: every object needs at least two rotations");
    const Mat3 mean = geo::mean_rotation(obj).rotation;
    double sq = 0.0;
    for (const auto& rot : obj) sq += std::pow(geo::angular_distance(rot, mean), 2);
    const double deg = std::sqrt(sq / static_cast<double>(obj.size())) * kRadToDeg;
    r.per_object_deg.push_back(deg);
    acc += deg;
  }
  r.mstd_deg = acc / static_cast<double>(rotations.size());
  return r;
}

double registration_rmse(const geo::RigidTransform& estimate, const geo::RigidTransform& truth,
                         std::span<const Vec3> points) {
  if (points.empty()) throw DimensionError("registration_rmse: no points");
  double acc = 0.0;
  for (const auto& p : points) acc += (estimate.apply(p) - truth.apply(p)).squaredNorm();
  return std::sqrt(acc / static_cast<double>(points.size()));
}

std::vector<std::size_t> hungarian_max(const Eigen::MatrixXd& score) {
  const auto n = static_cast<std::size_t>(score.rows());
  if (score.rows() != score.cols()) throw DimensionError("hungarian: score matrix must be square");
  if (n == 0) return {};
  // Shortest augmenting path formulation on costs = -score, 1-based potentials.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);  // match[col] = row
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -score(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

std::vector<std::size_t> brute_force_max(const Eigen::MatrixXd& score) {
  const auto n = static_cast<std::size_t>(score.rows());
  if (score.rows() != score.cols()) throw DimensionError("brute_force_max: score matrix must be square");
  if (n > 8) throw DimensionError("brute_force_max: too large");
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += score(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

namespace {

double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index j) {
  return (x.row(i) - c.row(j)).squaredNorm();
}

KMeansResult lloyd(const Eigen::MatrixXd& x, std::size_t k, Rng& rng, std::size_t max_iterations) {
  const Eigen::Index n = x.rows(), d = x.cols(), kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd c(kk, d);
  // k-means++ seeding
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  c.row(0) = x.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
  std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (Eigen::Index j = 1; j < kk; ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      best[static_cast<std::size_t>(i)] = std::min(best[static_cast<std::size_t>(i)], sq_dist(x, i, c, j - 1));
      total += best[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double target = u01(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= best[static_cast<std::size_t>(i)];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    }
    c.row(j) = x.row(pick);
  }

  KMeansResult r;
  r.assignment.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < kk; ++j) {
        const double dist = sq_dist(x, i, c, j);
        if (dist < dmin) {
          dmin = dist;
          arg = static_cast<std::size_t>(j);
        }
      }
      if (r.assignment[static_cast<std::size_t>(i)] != arg) changed = true;
      r.assignment[static_cast<std::size_t>(i)] = arg;
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(kk, d);
    std::vector<std::size_t> count(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sum.row(static_cast<Eigen::Index>(r.assignment[static_cast<std::size_t>(i)])) += x.row(i);
      ++count[r.assignment[static_cast<std::size_t>(i)]];
    }
    for (Eigen::Index j = 0; j < kk; ++j) {
      if (count[static_cast<std::size_t>(j)] > 0) {
        c.row(j) = sum.row(j) / static_cast<double>(count[static_cast<std::size_t>(j)]);
        continue;
      }
      // empty cluster: move it to the point farthest from its own centroid
      Eigen::Index far = 0;
      double dmax = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dist = sq_dist(x, i, c, static_cast<Eigen::Index>(r.assignment[static_cast<std::size_t>(i)]));
        if (dist > dmax) {
          dmax = dist;
          far = i;
        }
      }
      c.row(j) = x.row(far);
      r.assignment[static_cast<std::size_t>(far)] = static_cast<std::size_t>(j);
      changed = true;
    }
    if (!changed) break;
  }
  r.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    r.inertia += sq_dist(x, i, c, static_cast<Eigen::Index>(r.assignment[static_cast<std::size_t>(i)]));
  r.centroids = c;
  return r;
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& features, std::size_t k, Rng& rng, std::size_t restarts,
                    std::size_t max_iterations) {
  if (k == 0 || static_cast<std::size_t>(features.rows()) < k) throw DimensionError("kmeans: need N >= k > 0");
  if (restarts == 0) throw ConfigError("kmeans: restarts must be positive");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansResult cur = lloyd(features, k, rng, max_iterations);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

ClusterReport score_clustering(std::span<const std::size_t> assignment, std::span<const std::size_t> labels,
                               std::size_t k) {
  if (assignment.size() != labels.size() || labels.empty()) throw DimensionError("clustering: size mismatch");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  const std::size_t n = std::max(k, classes);
  Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (assignment[i] >= k) throw DimensionError("clustering: cluster id out of range");
    confusion(static_cast<Eigen::Index>(assignment[i]), static_cast<Eigen::Index>(labels[i])) += 1.0;
  }
  ClusterReport rep;
  rep.assignment.assign(assignment.begin(), assignment.end());
  rep.cluster_to_class = hungarian_max(confusion);
  double matched = 0.0;
  for (std::size_t c = 0; c < n; ++c)
    matched += confusion(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(rep.cluster_to_class[c]));
  rep.accuracy = matched / static_cast<double>(labels.size());
  return rep;
}

ClusterReport kmeans_hungarian(const Eigen::MatrixXd& features, std::span<const std::size_t> labels, std::size_t k,
                               Rng& rng, std::size_t restarts) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw DimensionError("kmeans_hungarian: size mismatch");
  const KMeansResult km = kmeans(features, k, rng, restarts);
  return score_clustering(km.assignment, labels, k);
}

Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / n;
    if (var > 1e-24)
      out.col(j) = ((x.col(j).array() - mean) / std::sqrt(var)).matrix();
    else
      out.col(j).setZero();
  }
  return out;
}

}  // namespace ccaps::eval
