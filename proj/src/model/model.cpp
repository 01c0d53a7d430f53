#include "ccaps/model.hpp"

#include <numeric>

#include "ccaps/errors.hpp"
#include "ccaps/ops.hpp"

namespace ccaps::model {

using nn::Init;

void EncoderConfig::validate() const {
  if (num_capsules < 2) throw ConfigError("encoder: num_capsules must be at least 2");
  if (feature_dim < 1) throw ConfigError("encoder: feature_dim must be positive");
  if (blocks < 1 || hidden_width < 1) throw ConfigError("encoder: blocks and hidden_width must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("encoder: epsilon must be positive");
}

void DecoderConfig::validate() const {
  if (points_per_capsule < 1) throw ConfigError("decoder: points_per_capsule must be positive");
  if (grid_dim < 1) throw ConfigError("decoder: grid_dim must be positive");
  for (auto h : hidden)
    if (h < 1) throw ConfigError("decoder: hidden widths must be positive");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (regressor_width < 1) throw ConfigError("regressor_width must be positive");
}

std::size_t ModelConfig::points_per_capsule_for(std::size_t points, std::size_t capsules) {
  return (points + capsules - 1) / capsules;
}

MultiHeadAcn::MultiHeadAcn(nn::ParameterStore& store, const std::string& name, std::size_t width, std::size_t heads,
                           double eps, Rng& rng)
    : logits_(store, name + ".attention", width, heads, Init::XavierUniform, rng), eps_(eps) {}

Tensor MultiHeadAcn::operator()(const Tensor& x, std::size_t clouds, Tensor* attention) const {
  Tensor a = ad::softmax(logits_(x), 1);
  Tensor out = ad::attentive_normalize(x, a, clouds, eps_);
  if (attention) *attention = a;
  return out;
}

Encoder::Encoder(nn::ParameterStore& store, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden_width;
  input_ = nn::Linear(store, "encoder.input", 3, h, Init::KaimingUniform, rng);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (int i = 0; i < 2; ++i) {
      const std::string name = "encoder.block" + std::to_string(b) + "." + std::to_string(i);
      Layer layer;
      layer.linear = nn::Linear(store, name + ".linear", h, h, Init::KaimingUniform, rng);
      layer.acn = MultiHeadAcn(store, name + ".acn", h, cfg.num_capsules, cfg.epsilon, rng);
      layer.norm = nn::BatchNorm(store, name + ".bn", h);
      layers_.push_back(std::move(layer));
    }
  }
  feature_head_ = nn::Linear(store, "encoder.features", h, cfg.feature_dim, Init::XavierUniform, rng);
  attention_head_ = nn::Linear(store, "encoder.attention", h, cfg.num_capsules, Init::XavierUniform, rng);
}

Encoding Encoder::operator()(const Tensor& points, std::size_t clouds, bool training) const {
  if (points.shape().size() != 2 || points.cols() != 3) throw DimensionError("encoder expects an N x 3 point tensor");
  if (clouds == 0 || points.rows() % clouds != 0) throw DimensionError("encoder: rows not divisible by cloud count");
  if (points.rows() / clouds < cfg_.num_capsules) throw DimensionError("encoder: fewer points than capsules");

  Tensor x = ad::relu(input_(points));
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    Tensor h = x;
    for (std::size_t i = 0; i < 2; ++i) {
      const Layer& layer = layers_[2 * b + i];
      h = ad::relu(layer.norm(layer.acn(layer.linear(h), clouds), training));
    }
    x = x + h;
  }
  Encoding out;
  out.features = feature_head_(x);
  out.attention = ad::softmax(attention_head_(x), 1);
  return out;
}

Capsules aggregate(const Tensor& points, const Encoding& enc, std::size_t clouds) {
  Capsules c;
  c.poses = ad::weighted_segment_mean(enc.attention, points, clouds);
  c.descriptors = ad::weighted_segment_mean(enc.attention, enc.features, clouds);
  return c;
}

Regressor::Regressor(nn::ParameterStore& store, std::size_t capsules, std::size_t feature_dim, std::size_t width,
                     Rng& rng)
    : capsules_(capsules),
      hidden_(store, "regressor.hidden", capsules * feature_dim, width * capsules, Init::KaimingUniform, rng),
      out_(store, "regressor.out", width * capsules, 3 * capsules, Init::XavierUniform, rng) {}

Tensor Regressor::operator()(const Tensor& descriptors, std::size_t clouds) const {
  if (descriptors.rows() != clouds * capsules_) throw DimensionError("regressor: descriptor rows != clouds * K");
  const Tensor flat = ad::reshape(descriptors, {clouds, descriptors.size() / clouds});
  const Tensor y = ad::reshape(out_(ad::relu(hidden_(flat))), {clouds * capsules_, 3});
  return y - ad::repeat_rows(ad::segment_mean(y, clouds), capsules_);
}

Decoder::Decoder(nn::ParameterStore& store, std::size_t capsules, std::size_t feature_dim, const DecoderConfig& cfg,
                 Rng& rng)
    : capsules_(capsules), cfg_(cfg) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < capsules; ++k) {
    const std::string name = "decoder" + std::to_string(k);
    Mlp mlp;
    std::vector<double> grid(cfg.points_per_capsule * cfg.grid_dim);
    for (auto& g : grid) g = unit(rng);
    mlp.grid = store.add(name + ".grid", {cfg.points_per_capsule, cfg.grid_dim}, std::move(grid));
    std::size_t in = cfg.grid_dim + feature_dim;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
      const std::string layer = name + ".hidden" + std::to_string(i);
      mlp.hidden.emplace_back(store, layer, in, cfg.hidden[i], Init::KaimingUniform, rng);
      mlp.norms.emplace_back(store, layer + ".bn", cfg.hidden[i]);
      in = cfg.hidden[i];
    }
    mlp.out = nn::Linear(store, name + ".out", in, 3, Init::XavierUniform, rng);
    mlps_.push_back(std::move(mlp));
  }
}

Tensor Decoder::decode_capsule(std::size_t k, const Tensor& descriptors, std::size_t clouds, bool training) const {
  if (k >= capsules_) throw DimensionError("decoder: capsule index out of range");
  const Mlp& mlp = mlps_[k];
  std::vector<std::size_t> rows(clouds);
  for (std::size_t b = 0; b < clouds; ++b) rows[b] = b * capsules_ + k;
  const Tensor code = ad::repeat_rows(ad::gather_rows(descriptors, rows), cfg_.points_per_capsule);
  const std::vector<Tensor> parts{ad::tile_rows(mlp.grid, clouds), code};
  Tensor h = ad::concat(parts, 1);
  for (std::size_t i = 0; i < mlp.hidden.size(); ++i) h = ad::relu(mlp.norms[i](mlp.hidden[i](h), training));
  return ad::tanh(mlp.out(h));
}

Tensor Decoder::operator()(const Tensor& canonical_poses, const Tensor& descriptors, std::size_t clouds,
                           bool training) const {
  const std::size_t m = cfg_.points_per_capsule;
  std::vector<Tensor> per_capsule;
  per_capsule.reserve(capsules_);
  for (std::size_t k = 0; k < capsules_; ++k) {
    std::vector<std::size_t> rows(clouds);
    for (std::size_t b = 0; b < clouds; ++b) rows[b] = b * capsules_ + k;
    const Tensor offset = ad::repeat_rows(ad::gather_rows(canonical_poses, rows), m);
    per_capsule.push_back(decode_capsule(k, descriptors, clouds, training) + offset);
  }
  // capsule-major (k, b, i) -> cloud-major (b, k, i)
  const Tensor stacked = ad::concat(per_capsule, 0);
  std::vector<std::size_t> order;
  order.reserve(stacked.rows());
  for (std::size_t b = 0; b < clouds; ++b)
    for (std::size_t k = 0; k < capsules_; ++k)
      for (std::size_t i = 0; i < m; ++i) order.push_back((k * clouds + b) * m + i);
  return ad::gather_rows(stacked, order);
}

std::vector<std::size_t> Decoder::labels() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < capsules_; ++k) out.insert(out.end(), cfg_.points_per_capsule, k);
  return out;
}

CapsuleModel::CapsuleModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  encoder_ = Encoder(store_, cfg.encoder, rng);
  regressor_ = Regressor(store_, cfg.encoder.num_capsules, cfg.encoder.feature_dim, cfg.regressor_width, rng);
  decoder_ = Decoder(store_, cfg.encoder.num_capsules, cfg.encoder.feature_dim, cfg.decoder, rng);
}

ForwardResult CapsuleModel::forward(const Tensor& points, std::size_t clouds, bool training, bool decode) const {
  const std::size_t k = cfg_.encoder.num_capsules;
  const std::size_t p = points.rows() / std::max<std::size_t>(clouds, 1);
  ForwardResult r;
  r.clouds = clouds;
  r.encoding = encoder_(points, clouds, training);
  r.capsules = aggregate(points, r.encoding, clouds);
  r.canonical_keypoints = regressor_(r.capsules.descriptors, clouds);

  std::vector<Tensor> canon_points, canon_poses;
  for (std::size_t b = 0; b < clouds; ++b) {
    const Tensor theta = ad::slice_rows(r.capsules.poses, b * k, k);
    const Tensor target = ad::slice_rows(r.canonical_keypoints, b * k, k);
    geo::DiffRigid frame = cfg_.stop_canonical_gradient ? geo::diff_kabsch(theta.detach(), target.detach())
                                                        : geo::diff_kabsch(theta, target);
    canon_points.push_back(geo::apply(frame, ad::slice_rows(points, b * p, p)));
    canon_poses.push_back(geo::apply(frame, theta));
    r.frames.push_back(std::move(frame));
  }
  r.canonical_points = ad::concat(canon_points, 0);
  r.canonical_poses = ad::concat(canon_poses, 0);

  if (cfg_.reextract_descriptors) {
    r.canonical_encoding = encoder_(r.canonical_points, clouds, training);
    r.canonical_descriptors =
        ad::weighted_segment_mean(r.canonical_encoding.attention, r.canonical_encoding.features, clouds);
  } else {
    r.canonical_descriptors = r.capsules.descriptors;
  }
  if (decode) r.reconstruction = decoder_(r.canonical_poses, r.canonical_descriptors, clouds, training);
  return r;
}

}  // namespace ccaps::model
