#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ccaps/dataset.hpp"
#include "ccaps/geometry.hpp"
#include "ccaps/losses.hpp"
#include "ccaps/model.hpp"

namespace ccaps::train {

enum class Mode { Aligned, Unaligned };

const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);
const char* sampling_name(geo::RotationSampling s);
geo::RotationSampling parse_sampling(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::Unaligned;
  std::size_t epochs = 450;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double lr_decay = 0.1;
  std::vector<double> milestones{0.6, 0.85};  // fractions of `epochs`
  /// Points per training cloud; larger clouds are subsampled every epoch.
  std::size_t points = 1024;
  double translation_range = 0.2;
  std::uint64_t seed = 0;
  geo::RotationSampling rotation_sampling = geo::RotationSampling::Uniform;
  loss::LossWeights weights;
  /// decoder.points_per_capsule == 0 means ceil(points / K).
  model::ModelConfig model;

  /// Mode defaults: 450 epochs and the unaligned weights, or 325 epochs and
  /// the aligned weights.
  static TrainConfig defaults(Mode mode);

  void validate() const;
  /// The model configuration with the decoder size resolved.
  model::ModelConfig resolved_model() const;
  data::AugmentOptions augment() const;
  /// Learning rate in effect during `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
};

/// Sectioned key = value text: [train], [model], [loss]. Keys missing from
/// the text keep the defaults of the configured mode.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
/// Every field, in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const TrainConfig& c);
void save_config(const std::filesystem::path& path, const TrainConfig& c);

/// CRC-32 of format_config(c) as 8 hex digits.
std::string config_hash(const TrainConfig& c);

}  // namespace ccaps::train
