#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccaps/dataset.hpp"
#include "ccaps/inference.hpp"
#include "ccaps/metrics.hpp"

namespace ccaps::eval {

/// Anything that maps clouds to capsule poses, descriptors and a
/// canonicalizing transform. The trained model is one; tests plug in oracles.
class Canonicalizer {
 public:
  virtual ~Canonicalizer() = default;
  virtual std::vector<model::Inference> run(std::span<const data::PointCloud> clouds, bool decode) const = 0;
};

class ModelCanonicalizer final : public Canonicalizer {
 public:
  explicit ModelCanonicalizer(const model::CapsuleModel& model, std::size_t batch = 32)
      : model_(model), batch_(batch) {}
  std::vector<model::Inference> run(std::span<const data::PointCloud> clouds, bool decode) const override {
    return model::infer(model_, clouds, decode, batch_);
  }

 private:
  const model::CapsuleModel& model_;
  std::size_t batch_;
};

struct EvalOptions {
  std::size_t rotations_per_object = 10;
  std::uint64_t seed = 0;
  data::AugmentOptions augment;
  /// 0: one cluster per class.
  std::size_t clusters = 0;
  std::size_t kmeans_restarts = 20;
  bool standardize_features = false;
};

/// m augmented copies per object; copy j of object i uses a generator seeded
/// with (seed, i) so results do not depend on evaluation order.
struct AugmentedSet {
  std::vector<data::PointCloud> clouds;  // object-major
  std::vector<geo::RigidTransform> transforms;
  std::size_t objects = 0, per_object = 0;
};
AugmentedSet augment_split(const data::Dataset& ds, std::size_t per_object, std::uint64_t seed,
                           const data::AugmentOptions& opt);

/// Net rotation of an augmented instance in the learned canonical frame:
/// R_canonical * R_augmentation.
Mat3 canonical_rotation_of(const model::Inference& inf, const geo::RigidTransform& augmentation);

/// Canonicalization, one-shot and registration protocols always draw random
/// poses, even when `augment.aligned` is set.
CanonStabilityReport evaluate_canon(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt);

/// Every augmented instance aligned by shape matching of its capsule poses to
/// those of the split's first (un-augmented) instance.
CanonStabilityReport one_shot_baseline(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt);

struct RegistrationReport {
  std::vector<double> per_pair;
  double mean_rmse = 0.0;
};

/// (T_a)^-1 o T_b of the canonicalizing transforms against the true relative
/// transform of one random Siamese pair per object.
RegistrationReport evaluate_register(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt);

struct ReconstructionReport {
  std::vector<std::string> classes;
  std::vector<double> per_class_cd;  // x 1e3
  std::vector<std::size_t> per_class_count;
  double overall_cd = 0.0;  // x 1e3, mean over clouds
};

/// Chamfer distance between canonicalized input and reconstruction, one
/// augmented copy per object.
ReconstructionReport evaluate_reconstruction(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt);

/// Row i: canonical-frame capsule poses (K x 3) then canonical descriptors
/// (K x C), flattened in capsule order.
Eigen::MatrixXd cluster_features(std::span<const model::Inference> inferences);

ClusterReport evaluate_cluster(const Canonicalizer& c, const data::Dataset& ds, const EvalOptions& opt);

/// Brute-force symmetric Chamfer distance of two point sets.
double chamfer_distance(std::span<const Vec3> x, std::span<const Vec3> y);

}  // namespace ccaps::eval
