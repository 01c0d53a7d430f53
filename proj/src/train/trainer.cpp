#include "ccaps/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ccaps/errors.hpp"
#include "ccaps/ops.hpp"

namespace ccaps::train {

namespace {

geo::Rng epoch_rng(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x7261696eu};
  return geo::Rng(seq);
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

data::PointCloud subsample(const data::PointCloud& pc, std::size_t count, geo::Rng& rng) {
  if (pc.size() < count)
    throw ConfigError("cloud '" + pc.id + "' has " + std::to_string(pc.size()) + " points, training needs " +
                      std::to_string(count));
  if (pc.size() == count) return pc;
  std::vector<std::size_t> idx(pc.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  data::PointCloud out;
  out.label = pc.label;
  out.id = pc.id;
  for (std::size_t i : idx) {
    out.points.push_back(pc.points[i]);
    if (!pc.colors.empty()) out.colors.push_back(pc.colors[i]);
  }
  return out;
}

StepBatch make_step_batch(std::span<const data::PointCloud* const> base, geo::Rng& rng, const TrainConfig& cfg) {
  StepBatch b;
  b.pairs = base.size();
  b.two_branches = cfg.mode == Mode::Unaligned;
  const data::AugmentOptions aug = cfg.augment();
  std::vector<data::PointCloud> second;
  for (const data::PointCloud* pc : base) {
    const data::PointCloud sub = subsample(*pc, cfg.points, rng);
    data::SiamesePair pair = data::make_pair(sub, rng, aug);
    b.transform_a.push_back(pair.transform_a);
    b.transform_b.push_back(pair.transform_b);
    b.clouds.push_back(std::move(pair.cloud_a));
    if (b.two_branches) second.push_back(std::move(pair.cloud_b));
  }
  for (auto& c : second) b.clouds.push_back(std::move(c));
  return b;
}

loss::TotalLoss step_loss(const model::CapsuleModel& model, const StepBatch& batch, const TrainConfig& cfg) {
  const loss::LossWeights& w = cfg.weights;
  const std::size_t n = batch.clouds.size();
  const std::size_t K = model.config().encoder.num_capsules;
  std::vector<const data::PointCloud*> ptrs;
  for (const auto& c : batch.clouds) ptrs.push_back(&c);
  const ad::Tensor points = data::stack_points(ptrs);
  const model::ForwardResult f = model.forward(points, n, true, w.recon != 0.0);

  loss::LossTerms t;
  if (batch.two_branches) {
    const std::size_t rows = batch.pairs * K;
    t.equivariance = loss::equivariance(ad::slice_rows(f.capsules.poses, 0, rows),
                                        ad::slice_rows(f.capsules.poses, rows, rows), batch.transform_a,
                                        batch.transform_b);
    t.invariance = loss::invariance(ad::slice_rows(f.capsules.descriptors, 0, rows),
                                    ad::slice_rows(f.capsules.descriptors, rows, rows), batch.pairs);
  }
  // Averaging over all stacked clouds is the mean of the two branch averages.
  t.equilibrium = loss::equilibrium(f.encoding.attention, n);
  t.localization = loss::localization(points, f.encoding.attention, f.capsules.poses, n);
  t.canonical = loss::canonical(f.capsules.poses, f.canonical_keypoints, f.frames);
  if (w.recon != 0.0) t.recon = loss::recon(f.canonical_points, f.reconstruction, n);
  return loss::total_loss(t, w);
}

std::vector<std::string> SpikeMonitor::observe(const loss::LossReport& r) {
  const auto values = r.values();
  if (history_.empty()) history_.resize(values.size());
  std::vector<std::string> spiked;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& h = history_[i];
    if (h.size() >= min_history_) {
      std::vector<double> sorted = h;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
      const double median = sorted[sorted.size() / 2];
      if (median > 0.0 && values[i] > factor_ * median) spiked.push_back(loss::LossReport::names()[i]);
    }
    h.push_back(values[i]);
    if (h.size() > window_) h.erase(h.begin());
  }
  return spiked;
}

Trainer::Trainer(const TrainConfig& cfg, const data::Dataset& train_set)
    : cfg_(cfg), data_(train_set), batches_(train_set.clouds.size(), cfg.batch_size, cfg.seed) {
  cfg_.validate();
  model_ = std::make_unique<model::CapsuleModel>(cfg_.resolved_model(), cfg_.seed);
  adam_.options.lr = cfg_.lr;
}

namespace {

void dump_batch(const std::filesystem::path& dir, const StepBatch& batch, const loss::LossReport& r,
                std::size_t epoch, std::size_t step) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "report.txt");
  if (!out) throw IoError("cannot write " + (dir / "report.txt").string());
  out << "epoch " << epoch << " step " << step << "\n";
  for (std::size_t i = 0; i < r.values().size(); ++i)
    out << loss::LossReport::names()[i] << " " << fmt(r.values()[i]) << "\n";
  for (std::size_t i = 0; i < batch.clouds.size(); ++i) {
    const auto& c = batch.clouds[i];
    const std::string name = std::to_string(i) + "_" + c.id + ".xyz";
    out << "cloud " << name << " label " << c.label << "\n";
    data::write_cloud(dir / name, c);
  }
}

}  // namespace

EpochStats Trainer::run_epoch(std::ostream* log, const std::filesystem::path& dump_dir) {
  EpochStats stats;
  stats.epoch = epoch_ + 1;
  stats.lr = cfg_.lr_at(epoch_);
  adam_.options.lr = stats.lr;
  geo::Rng rng = epoch_rng(cfg_.seed, epoch_);
  std::vector<double> acc(loss::LossReport::names().size(), 0.0);
  std::size_t seen = 0, step = 0;
  for (const auto& idx : batches_.next_epoch()) {
    std::vector<const data::PointCloud*> base;
    for (std::size_t i : idx) base.push_back(&data_.clouds[i]);
    const StepBatch batch = make_step_batch(base, rng, cfg_);
    loss::TotalLoss tl = step_loss(*model_, batch, cfg_);
    if (!std::isfinite(tl.report.total)) {
      if (!dump_dir.empty()) dump_batch(dump_dir, batch, tl.report, stats.epoch, step);
      throw NumericError("non-finite loss at epoch " + std::to_string(stats.epoch) + " step " +
                         std::to_string(step) + (dump_dir.empty() ? "" : "; batch dumped to " + dump_dir.string()));
    }
    for (const auto& name : monitor_.observe(tl.report)) {
      ++stats.warnings;
      if (log) *log << "warning: epoch " << stats.epoch << " step " << step << ": loss term '" << name << "' spiked\n";
    }
    model_->store().zero_grad();
    tl.total.backward();
    ad::adam_step(model_->store().parameters(), adam_);
    const auto v = tl.report.values();
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i] * static_cast<double>(idx.size());
    seen += idx.size();
    ++step;
  }
  for (double& a : acc) a /= static_cast<double>(seen);
  stats.mean = {acc[0], acc[1], acc[2], acc[3], acc[4], acc[5], acc[6]};
  ++epoch_;
  history_.push_back(stats);
  return stats;
}

std::string format_loss_csv(const std::vector<EpochStats>& history) {
  std::ostringstream o;
  o << "epoch,lr";
  for (const auto& n : loss::LossReport::names()) o << ',' << n;
  o << '\n';
  for (const auto& e : history) {
    o << e.epoch << ',' << fmt(e.lr);
    for (double v : e.mean.values()) o << ',' << fmt(v);
    o << '\n';
  }
  return o.str();
}

namespace {

std::vector<EpochStats> parse_loss_csv(const std::string& text) {
  std::vector<EpochStats> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(ss, f, ',')) v.push_back(std::stod(f));
    if (v.size() != 9) throw ParseError("loss history: expected 9 fields", out.size() + 2);
    EpochStats e;
    e.epoch = static_cast<std::size_t>(v[0]);
    e.lr = v[1];
    e.mean = {v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    out.push_back(e);
  }
  return out;
}

void add_tensor(CheckpointData& ck, const std::string& name, ad::Shape shape, std::vector<double> data) {
  ck.tensors.push_back({name, std::move(shape), std::move(data)});
}

const TensorRecord& need(const CheckpointData& ck, const std::string& name) {
  const TensorRecord* r = ck.find(name);
  if (!r) throw IoError("checkpoint: missing tensor '" + name + "'");
  return *r;
}

std::string need_meta(const CheckpointData& ck, const std::string& key) {
  const auto it = ck.meta.find(key);
  if (it == ck.meta.end()) throw IoError("checkpoint: missing field '" + key + "'");
  return it->second;
}

void restore_model(model::CapsuleModel& m, const CheckpointData& ck) {
  auto& store = m.store();
  for (std::size_t i = 0; i < store.names().size(); ++i) {
    const TensorRecord& r = need(ck, "param/" + store.names()[i]);
    auto dst = store.parameters()[i].mutable_values();
    if (r.shape != store.parameters()[i].shape() || r.data.size() != dst.size())
      throw DimensionError("checkpoint: shape mismatch for '" + store.names()[i] + "'");
    std::copy(r.data.begin(), r.data.end(), dst.begin());
  }
  for (const auto& [name, bn] : store.batch_norms()) {
    const TensorRecord& mean = need(ck, "bn/" + name + "/mean");
    const TensorRecord& var = need(ck, "bn/" + name + "/var");
    if (mean.data.size() != bn->running_mean.size() || var.data.size() != bn->running_var.size())
      throw DimensionError("checkpoint: batch-norm size mismatch for '" + name + "'");
    bn->running_mean = mean.data;
    bn->running_var = var.data;
  }
}

}  // namespace

CheckpointData model_snapshot(const model::CapsuleModel& model, const TrainConfig& cfg, std::size_t epoch) {
  CheckpointData ck;
  ck.meta["kind"] = "capsule-model";
  ck.meta["config"] = format_config(cfg);
  ck.meta["config_hash"] = config_hash(cfg);
  ck.meta["epoch"] = std::to_string(epoch);
  const auto& store = model.store();
  for (std::size_t i = 0; i < store.names().size(); ++i) {
    const auto& p = store.parameters()[i];
    add_tensor(ck, "param/" + store.names()[i], p.shape(), {p.values().begin(), p.values().end()});
  }
  for (const auto& [name, bn] : store.batch_norms()) {
    add_tensor(ck, "bn/" + name + "/mean", {bn->running_mean.size()}, bn->running_mean);
    add_tensor(ck, "bn/" + name + "/var", {bn->running_var.size()}, bn->running_var);
  }
  return ck;
}

CheckpointData Trainer::snapshot() const {
  CheckpointData ck = model_snapshot(*model_, cfg_, epoch_);
  ck.meta["adam_step"] = std::to_string(adam_.step);
  ck.meta["history"] = format_loss_csv(history_);
  const auto& names = model_->store().names();
  for (std::size_t i = 0; i < adam_.first_moment.size(); ++i) {
    add_tensor(ck, "adam/m/" + names[i], {adam_.first_moment[i].size()}, adam_.first_moment[i]);
    add_tensor(ck, "adam/v/" + names[i], {adam_.second_moment[i].size()}, adam_.second_moment[i]);
  }
  return ck;
}

void Trainer::restore(const CheckpointData& ck) {
  const std::string hash = need_meta(ck, "config_hash");
  if (hash != config_hash(cfg_))
    throw ConfigError("checkpoint config hash " + hash + " does not match the run's " + config_hash(cfg_));
  restore_model(*model_, ck);
  epoch_ = std::stoull(need_meta(ck, "epoch"));
  adam_.step = std::stoull(need_meta(ck, "adam_step"));
  adam_.first_moment.clear();
  adam_.second_moment.clear();
  if (adam_.step > 0) {
    for (const auto& name : model_->store().names()) {
      adam_.first_moment.push_back(need(ck, "adam/m/" + name).data);
      adam_.second_moment.push_back(need(ck, "adam/v/" + name).data);
    }
  }
  history_ = parse_loss_csv(need_meta(ck, "history"));
  batches_.skip_to_epoch(epoch_);
  // The spike monitor restarts empty; it only affects warnings.
  monitor_ = SpikeMonitor();
}

LoadedModel load_model(const CheckpointData& ck) {
  LoadedModel out;
  out.config = parse_config(need_meta(ck, "config"));
  out.config_hash = need_meta(ck, "config_hash");
  if (out.config_hash != config_hash(out.config))
    throw IoError("checkpoint: stored config does not match its hash");
  out.epoch = std::stoull(need_meta(ck, "epoch"));
  out.model = std::make_unique<model::CapsuleModel>(out.config.resolved_model(), out.config.seed);
  restore_model(*out.model, ck);
  return out;
}

LoadedModel load_model(const std::filesystem::path& path) { return load_model(read_checkpoint(path)); }

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& ck) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_checkpoint(tmp, ck);
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<EpochStats> run_training(const TrainConfig& cfg, const data::Dataset& train_set, const RunOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError("training needs an output directory");
  std::filesystem::create_directories(opt.out_dir);
  const auto ck_path = opt.out_dir / "checkpoint.ccap";
  Trainer trainer(cfg, train_set);
  if (opt.resume && std::filesystem::exists(ck_path)) {
    trainer.restore(read_checkpoint(ck_path));
    if (opt.log) *opt.log << "resumed from " << ck_path.string() << " at epoch " << trainer.epoch() << "\n";
  }
  save_config(opt.out_dir / "config.ini", trainer.config());
  std::size_t done = 0;
  while (trainer.epoch() < cfg.epochs && (opt.max_epochs == 0 || done < opt.max_epochs)) {
    const EpochStats s = trainer.run_epoch(opt.log, opt.out_dir / "nonfinite_batch");
    ++done;
    save_checkpoint(ck_path, trainer.snapshot());
    write_text(opt.out_dir / "losses.csv", format_loss_csv(trainer.history()));
    if (opt.log) {
      *opt.log << "epoch " << s.epoch << "/" << cfg.epochs << " lr " << s.lr;
      for (std::size_t i = 0; i < s.mean.values().size(); ++i)
        *opt.log << ' ' << loss::LossReport::names()[i] << ' ' << s.mean.values()[i];
      *opt.log << std::endl;
    }
  }
  return trainer.history();
}

}  // namespace ccaps::train
