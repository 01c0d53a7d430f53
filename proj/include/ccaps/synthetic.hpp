#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ccaps/dataset.hpp"

namespace ccaps::data {

enum class PrimitiveKind { Box, Cylinder, Ellipsoid };

/// One rigid part of a procedural shape. Sizes are full extents (box),
/// (diameter, diameter, length) along `axis` (cylinder) or (2a, 2b, 2c)
/// (ellipsoid); each component is drawn uniformly in [size_min, size_max].
struct PartSpec {
  PrimitiveKind kind = PrimitiveKind::Box;
  Vec3 size_min = Vec3::Ones();
  Vec3 size_max = Vec3::Ones();
  Vec3 offset = Vec3::Zero();
  Vec3 jitter = Vec3::Zero();  // offset noise, uniform in [-jitter, jitter]
  int axis = 2;                // cylinder axis
};

struct ShapeFamilySpec {
  std::string label;
  std::vector<PartSpec> parts;
  std::size_t points = 1024;

  void validate() const;
};

/// Plane-, chair- and table-like families.
std::vector<ShapeFamilySpec> default_families(std::size_t points = 1024);

struct GeneratorSpec {
  std::vector<ShapeFamilySpec> families;
  std::size_t instances_per_class = 100;
  double train_fraction = 0.8;

  void validate() const;
};

GeneratorSpec default_generator_spec(std::size_t points = 1024);
/// INI text: a [dataset] section plus one section per family with keys
/// partN_kind, partN_size_min, partN_size_max, partN_offset, partN_jitter and
/// partN_axis.
GeneratorSpec parse_generator_spec(const std::string& ini_text);
GeneratorSpec load_generator_spec(const std::filesystem::path& path);
std::string format_generator_spec(const GeneratorSpec& spec);

/// One instance in the family's canonical pose: area-weighted surface
/// samples, centred on the bounding box and scaled into the unit ball.
PointCloud sample_instance(const ShapeFamilySpec& spec, Rng& rng);

std::vector<PointCloud> generate_family(const ShapeFamilySpec& spec, std::size_t n_instances, Rng& rng);

struct GenerateOptions {
  std::uint64_t seed = 1;
  /// Write clouds in their canonical pose (an aligned benchmark); otherwise
  /// each is stored under a hidden random rigid motion.
  bool aligned = false;
  double translation_range = 0.2;
};

/// Writes clouds, manifest.csv and ground_truth.csv under `out_dir`.
/// Returns the manifest.
Manifest generate_dataset(const GeneratorSpec& spec, const std::filesystem::path& out_dir,
                          const GenerateOptions& opt);

}  // namespace ccaps::data
