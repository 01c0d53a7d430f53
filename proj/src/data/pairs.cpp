#include <algorithm>
#include <numeric>

#include "ccaps/dataset.hpp"
#include "ccaps/errors.hpp"

namespace ccaps::data {

geo::RigidTransform sample_transform(Rng& rng, const AugmentOptions& opt) {
  if (opt.aligned) return geo::RigidTransform::identity();
  geo::RigidTransform t;
  t.rotation = geo::sample_rotation(rng, opt.sampling);
  t.translation = geo::sample_uniform_translation(rng, opt.translation_range);
  return t;
}

Decanonicalized decanonicalize(const PointCloud& pc, Rng& rng, const AugmentOptions& opt) {
  Decanonicalized out;
  out.transform = sample_transform(rng, opt);
  out.cloud = transformed(pc, out.transform);
  return out;
}

SiamesePair make_pair(const PointCloud& base, Rng& rng, const AugmentOptions& opt) {
  SiamesePair pair;
  pair.transform_a = sample_transform(rng, opt);
  pair.transform_b = sample_transform(rng, opt);
  pair.cloud_a = transformed(base, pair.transform_a);
  pair.cloud_b = transformed(base, pair.transform_b);
  return pair;
}

BatchIterator::BatchIterator(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : n_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (n_ == 0) throw DimensionError("batch iterator over an empty dataset");
  if (batch_size_ == 0) throw ConfigError("batch size must be positive");
}

std::vector<std::vector<std::size_t>> BatchIterator::next_epoch() {
  std::vector<std::size_t> order(n_);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(epochs_)};
  Rng rng(seq);
  // Fisher-Yates with our own index draws: std::shuffle's sequence is
  // library-specific.
  for (std::size_t i = n_ - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  ++epochs_;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < n_; s += batch_size_)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, s + batch_size_)));
  return batches;
}

void BatchIterator::skip_to_epoch(std::size_t epochs) { epochs_ = epochs; }

}  // namespace ccaps::data
