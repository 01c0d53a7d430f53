#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccaps/diff_kabsch.hpp"
#include "ccaps/layers.hpp"

namespace ccaps::model {

using ad::Tensor;
using nn::Rng;

struct EncoderConfig {
  std::size_t num_capsules = 10;
  std::size_t feature_dim = 128;
  std::size_t blocks = 3;
  std::size_t hidden_width = 128;
  double epsilon = 1e-3;

  void validate() const;
};

struct DecoderConfig {
  std::size_t points_per_capsule = 103;
  std::size_t grid_dim = 10;
  std::vector<std::size_t> hidden{1280, 640, 320};

  void validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  /// Hidden units of the keypoint regressor per capsule (128 K in total).
  std::size_t regressor_width = 128;
  /// Encode the canonicalized cloud again and aggregate the decoder's
  /// descriptors from that second pass.
  bool reextract_descriptors = true;
  /// Blocks gradients through the canonicalizing transform.
  bool stop_canonical_gradient = false;

  void validate() const;
  /// Smallest M with K M >= points.
  static std::size_t points_per_capsule_for(std::size_t points, std::size_t capsules);
};

/// Per-point outputs of the encoder for a batch of clouds stacked row-wise.
struct Encoding {
  Tensor attention;  // (B P) x K, rows sum to one
  Tensor features;   // (B P) x C
};

/// Capsule poses and descriptors, row b K + k for capsule k of cloud b.
struct Capsules {
  Tensor poses;        // (B K) x 3
  Tensor descriptors;  // (B K) x C
};

class MultiHeadAcn {
 public:
  MultiHeadAcn() = default;
  MultiHeadAcn(nn::ParameterStore& store, const std::string& name, std::size_t width, std::size_t heads, double eps,
               Rng& rng);

  /// Returns the normalized features; the attention map used is written to
  /// `attention` when non-null.
  Tensor operator()(const Tensor& x, std::size_t clouds, Tensor* attention = nullptr) const;

 private:
  nn::Linear logits_;
  double eps_ = 1e-3;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParameterStore& store, const EncoderConfig& cfg, Rng& rng);

  Encoding operator()(const Tensor& points, std::size_t clouds, bool training) const;

 private:
  struct Layer {
    nn::Linear linear;
    MultiHeadAcn acn;
    nn::BatchNorm norm;
  };
  EncoderConfig cfg_;
  nn::Linear input_;
  std::vector<Layer> layers_;  // two per residual block
  nn::Linear feature_head_;
  nn::Linear attention_head_;
};

/// Attention-weighted means of coordinates and features per capsule.
Capsules aggregate(const Tensor& points, const Encoding& enc, std::size_t clouds);

/// Maps the ordered concatenation of a cloud's descriptors to zero-mean
/// canonical keypoints.
class Regressor {
 public:
  Regressor() = default;
  Regressor(nn::ParameterStore& store, std::size_t capsules, std::size_t feature_dim, std::size_t width, Rng& rng);

  Tensor operator()(const Tensor& descriptors, std::size_t clouds) const;

 private:
  std::size_t capsules_ = 0;
  nn::Linear hidden_;
  nn::Linear out_;
};

/// One folding decoder and trainable grid per capsule.
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParameterStore& store, std::size_t capsules, std::size_t feature_dim, const DecoderConfig& cfg,
          Rng& rng);

  /// Un-translated output of capsule k for every cloud: (B M) x 3 in [-1, 1].
  Tensor decode_capsule(std::size_t k, const Tensor& descriptors, std::size_t clouds, bool training) const;
  /// Union of all capsules, translated by their canonical poses. Rows are
  /// ordered cloud, capsule, grid point.
  Tensor operator()(const Tensor& canonical_poses, const Tensor& descriptors, std::size_t clouds,
                    bool training) const;

  std::size_t points_per_capsule() const { return cfg_.points_per_capsule; }
  /// Capsule index of every row of one cloud's reconstruction.
  std::vector<std::size_t> labels() const;

 private:
  struct Mlp {
    Tensor grid;
    std::vector<nn::Linear> hidden;
    std::vector<nn::BatchNorm> norms;
    nn::Linear out;
  };
  std::size_t capsules_ = 0;
  DecoderConfig cfg_;
  std::vector<Mlp> mlps_;
};

struct ForwardResult {
  std::size_t clouds = 0;
  Encoding encoding;
  Capsules capsules;
  Tensor canonical_keypoints;           // (B K) x 3
  std::vector<geo::DiffRigid> frames;  // per cloud, maps input onto the canonical frame
  Tensor canonical_points;             // (B P) x 3
  Tensor canonical_poses;              // (B K) x 3, frame applied to the poses
  Encoding canonical_encoding;         // second pass, when re-extracting
  Tensor canonical_descriptors;        // (B K) x C
  Tensor reconstruction;               // (B K M) x 3 in the canonical frame; empty if not decoded
};

class CapsuleModel {
 public:
  CapsuleModel(const ModelConfig& cfg, std::uint64_t seed);
  CapsuleModel(const CapsuleModel&) = delete;
  CapsuleModel& operator=(const CapsuleModel&) = delete;

  ForwardResult forward(const Tensor& points, std::size_t clouds, bool training, bool decode = true) const;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  const Encoder& encoder() const { return encoder_; }
  const Regressor& regressor() const { return regressor_; }
  const Decoder& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  nn::ParameterStore store_;
  Encoder encoder_;
  Regressor regressor_;
  Decoder decoder_;
};

}  // namespace ccaps::model
