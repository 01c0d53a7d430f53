#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccaps/geometry.hpp"
#include "ccaps/tensor.hpp"

namespace ccaps::data {

using geo::Rng;
using geo::Vec3;
using Rgb = std::array<std::uint8_t, 3>;

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Rgb> colors;  // empty, or one per point
  std::string label;
  std::string id;

  std::size_t size() const { return points.size(); }
  void validate() const;
};

PointCloud transformed(const PointCloud& pc, const geo::RigidTransform& t);

/// Stacks equally sized clouds row-wise into a (B P) x 3 constant tensor.
ad::Tensor stack_points(std::span<const PointCloud* const> clouds);
ad::Tensor to_tensor(const PointCloud& pc);
std::vector<Vec3> rows_to_points(const ad::Tensor& t, std::size_t begin, std::size_t count);

// ---------------------------------------------------------------- file I/O

enum class CloudFormat { Xyz, Ply };

/// Format from the file extension (.xyz / .ply).
CloudFormat format_for(const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format);
void write_cloud(const std::filesystem::path& path, const PointCloud& pc);
void write_cloud(const std::filesystem::path& path, const PointCloud& pc, CloudFormat format);

PointCloud parse_xyz(const std::string& text);
PointCloud parse_ply(const std::string& text);
std::string format_xyz(const PointCloud& pc);
std::string format_ply(const PointCloud& pc);

/// Fixed palette used to color capsules (wraps around after its size).
Rgb capsule_color(std::size_t k);

// ------------------------------------------------------- augmentation pairs

struct AugmentOptions {
  double translation_range = 0.2;
  geo::RotationSampling sampling = geo::RotationSampling::Uniform;
  /// Aligned training: no random transformations at all.
  bool aligned = false;
};

geo::RigidTransform sample_transform(Rng& rng, const AugmentOptions& opt);

struct Decanonicalized {
  PointCloud cloud;
  geo::RigidTransform transform;
};
Decanonicalized decanonicalize(const PointCloud& pc, Rng& rng, const AugmentOptions& opt);

/// Two rigid copies of the same point sample.
struct SiamesePair {
  PointCloud cloud_a, cloud_b;
  geo::RigidTransform transform_a, transform_b;

  /// T_a o T_b^-1: maps cloud_b onto cloud_a point by point.
  geo::RigidTransform relative() const { return transform_a * transform_b.inverse(); }
};

SiamesePair make_pair(const PointCloud& base, Rng& rng, const AugmentOptions& opt);

/// Seed-deterministic epoch-wise shuffling into batches; the final partial
/// batch is kept.
class BatchIterator {
 public:
  BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::vector<std::size_t>> next_epoch();
  std::size_t batch_size() const { return batch_size_; }
  std::size_t epochs_served() const { return epochs_; }

  /// Restores the state reached after `epochs` calls to next_epoch().
  void skip_to_epoch(std::size_t epochs);

 private:
  std::size_t n_, batch_size_;
  std::uint64_t seed_;
  std::size_t epochs_ = 0;
};

// ---------------------------------------------------------------- manifest

struct ManifestEntry {
  std::string label;
  std::string instance_id;
  std::string path;  // relative to the manifest's directory
  std::string split; // "train" or "test"
};

struct Manifest {
  std::filesystem::path root;
  std::string setup;  // "aligned" or "unaligned"
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> classes() const;
  std::vector<const ManifestEntry*> split(const std::string& name) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<std::size_t> class_index;  // into `classes`
  std::vector<std::string> classes;
};

/// Loads every entry of one split, in manifest order.
Dataset load_split(const Manifest& m, const std::string& split);

}  // namespace ccaps::data
