#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "ccaps/dataset.hpp"
#include "ccaps/model.hpp"

namespace ccaps::model {

using geo::Vec3;

struct CanonicalFrameResult {
  std::vector<Vec3> keypoints;  // canonical keypoints, zero mean
  geo::RigidTransform transform;  // input frame -> canonical frame
  data::PointCloud canonicalized;
  Eigen::MatrixXd descriptors;  // K x C canonical descriptors; empty unless re-extracted
  bool degenerate = false;
};

/// Shape matching of the capsule poses onto the canonical keypoints and the
/// cloud mapped by the resulting transform.
CanonicalFrameResult canonicalize(const data::PointCloud& pc, std::span<const Vec3> poses,
                                  std::span<const Vec3> keypoints);

/// Everything the model says about one cloud, in plain arrays.
struct Inference {
  std::vector<Vec3> poses;                    // capsule poses, input frame
  Eigen::MatrixXd descriptors;                // K x C, first pass
  std::vector<std::size_t> capsule_of_point;  // attention argmax
  CanonicalFrameResult canonical;
  std::vector<Vec3> reconstruction;  // canonical frame; empty without decoding
};

/// Evaluation-mode forward pass (running batch-norm statistics, no graph).
/// Clouds are processed in chunks of `batch`; each chunk needs equal sizes.
std::vector<Inference> infer(const CapsuleModel& model, std::span<const data::PointCloud> clouds, bool decode = true,
                             std::size_t batch = 32);

}  // namespace ccaps::model
