// Command-line front end: gen-data, train, eval, canonicalize, decompose.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "ccaps/config.hpp"
#include "ccaps/dataset.hpp"
#include "ccaps/errors.hpp"
#include "ccaps/inference.hpp"
#include "ccaps/reports.hpp"
#include "ccaps/synthetic.hpp"
#include "ccaps/trainer.hpp"

namespace fs = std::filesystem;
using namespace ccaps;

namespace {

constexpr int kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4;

/// Relative output paths land under $CCAPS_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("CCAPS_OUTPUT_ROOT"); root && *root) return fs::path(root) / path;
  return path;
}

struct GenArgs {
  std::string spec, out;
  std::uint64_t seed = 1;
  std::size_t classes = 0, instances = 0, points = 0;
  bool aligned = false;
  double translation_range = 0.2;
};

int gen_data(const GenArgs& a) {
  data::GeneratorSpec spec = a.spec.empty() ? data::default_generator_spec() : data::load_generator_spec(a.spec);
  if (a.classes > 0) {
    if (a.classes > spec.families.size())
      throw ConfigError("--classes: the spec only defines " + std::to_string(spec.families.size()));
    spec.families.resize(a.classes);
  }
  if (a.instances > 0) spec.instances_per_class = a.instances;
  if (a.points > 0)
    for (auto& f : spec.families) f.points = a.points;
  spec.validate();
  data::GenerateOptions opt;
  opt.seed = a.seed;
  opt.aligned = a.aligned;
  opt.translation_range = a.translation_range;
  const fs::path out = output_path(a.out);
  const data::Manifest m = data::generate_dataset(spec, out, opt);
  std::cout << "wrote " << m.entries.size() << " clouds (" << m.classes().size() << " classes, " << m.setup
            << ") to " << out.string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config, data, out, mode, sampling;
  std::optional<std::size_t> epochs, batch_size, points, capsules, feature_dim, hidden_width, max_epochs;
  std::optional<double> lr, translation_range, w_equiv, w_inv, w_equil, w_local, w_canon, w_recon;
  std::optional<std::uint64_t> seed;
  bool no_reextract = false, stop_gradient = false, resume = false, init_only = false;
};

train::TrainConfig resolve_config(const TrainArgs& a) {
  train::TrainConfig c;
  if (!a.config.empty()) {
    c = train::load_config(a.config);
    if (!a.mode.empty()) {
      const train::Mode m = train::parse_mode(a.mode);
      if (m != c.mode) throw ConfigError("--mode " + a.mode + " contradicts the config file");
    }
  } else {
    c = train::TrainConfig::defaults(a.mode.empty() ? train::Mode::Unaligned : train::parse_mode(a.mode));
  }
  if (!a.sampling.empty()) c.rotation_sampling = train::parse_sampling(a.sampling);
  if (a.epochs) c.epochs = *a.epochs;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.points) c.points = *a.points;
  if (a.capsules) c.model.encoder.num_capsules = *a.capsules;
  if (a.feature_dim) c.model.encoder.feature_dim = *a.feature_dim;
  if (a.hidden_width) c.model.encoder.hidden_width = *a.hidden_width;
  if (a.lr) c.lr = *a.lr;
  if (a.translation_range) c.translation_range = *a.translation_range;
  if (a.seed) c.seed = *a.seed;
  if (a.w_equiv) c.weights.equivariance = *a.w_equiv;
  if (a.w_inv) c.weights.invariance = *a.w_inv;
  if (a.w_equil) c.weights.equilibrium = *a.w_equil;
  if (a.w_local) c.weights.localization = *a.w_local;
  if (a.w_canon) c.weights.canonical = *a.w_canon;
  if (a.w_recon) c.weights.recon = *a.w_recon;
  if (a.no_reextract) c.model.reextract_descriptors = false;
  if (a.stop_gradient) c.model.stop_canonical_gradient = true;
  c.validate();
  return c;
}

int train_cmd(const TrainArgs& a) {
  const train::TrainConfig cfg = resolve_config(a);
  const data::Manifest manifest = data::read_manifest(a.data);
  if (manifest.setup != train::mode_name(cfg.mode))
    std::cerr << "warning: dataset setup '" << manifest.setup << "' differs from training mode '"
              << train::mode_name(cfg.mode) << "'\n";
  const fs::path out = output_path(a.out);
  if (a.init_only) {
    fs::create_directories(out);
    train::save_config(out / "config.ini", cfg);
    model::CapsuleModel m(cfg.resolved_model(), cfg.seed);
    write_checkpoint(out / "checkpoint.ccap", train::model_snapshot(m, cfg, 0));
    std::cout << "wrote untrained checkpoint " << (out / "checkpoint.ccap").string() << " (config "
              << train::config_hash(cfg) << ")\n";
    return kOk;
  }
  const data::Dataset train_set = data::load_split(manifest, "train");
  train::RunOptions opt;
  opt.out_dir = out;
  opt.resume = a.resume;
  opt.max_epochs = a.max_epochs.value_or(0);
  opt.log = &std::cout;
  std::cout << "training on " << train_set.clouds.size() << " clouds, config " << train::config_hash(cfg) << "\n";
  train::run_training(cfg, train_set, opt);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, data, which = "all", out, config, split = "test";
  std::uint64_t seed = 0;
  std::size_t rotations = 10, batch = 32;
  bool force = false, standardize = false;
};

int eval_cmd(const EvalArgs& a) {
  train::LoadedModel lm = train::load_model(a.checkpoint);
  if (!a.config.empty()) {
    const std::string h = train::config_hash(train::load_config(a.config));
    if (h != lm.config_hash) {
      if (!a.force)
        throw ConfigError("config hash " + h + " does not match checkpoint " + lm.config_hash + " (use --force)");
      std::cerr << "warning: config hash mismatch ignored (--force)\n";
    }
  }
  const data::Manifest manifest = data::read_manifest(a.data);
  if (manifest.setup != train::mode_name(lm.config.mode)) {
    if (!a.force)
      throw ConfigError("dataset setup '" + manifest.setup + "' does not match checkpoint mode '" +
                        train::mode_name(lm.config.mode) + "' (use --force)");
    std::cerr << "warning: setup mismatch ignored (--force)\n";
  }
  const data::Dataset ds = data::load_split(manifest, a.split);
  eval::EvalOptions opt;
  opt.rotations_per_object = a.rotations;
  opt.seed = a.seed;
  opt.augment = lm.config.augment();
  opt.standardize_features = a.standardize;
  eval::ModelCanonicalizer canon(*lm.model, a.batch);
  const eval::EvalSummary s = eval::evaluate(canon, ds, eval::parse_which(a.which), opt);
  const auto files =
      eval::write_reports(output_path(a.out), s, ds, {lm.config_hash, a.seed, lm.epoch, a.split});
  if (s.recon) std::cout << "recon CD x1e3 " << s.recon->overall_cd << "\n";
  if (s.canon) std::cout << "mStd " << s.canon->mstd_deg << " deg (one-shot " << s.one_shot->mstd_deg << ")\n";
  if (s.registration) std::cout << "pairwise RMSE " << s.registration->mean_rmse << "\n";
  if (s.cluster) std::cout << "cluster accuracy " << s.cluster->accuracy << "\n";
  for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
  return kOk;
}

void write_transform(const fs::path& path, const geo::RigidTransform& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  const auto v = t.to_array();
  for (std::size_t i = 0; i < v.size(); ++i) out << v[i] << (i + 1 == v.size() ? '\n' : ' ');
  if (!out) throw IoError("write failed for " + path.string());
}

struct CloudArgs {
  std::string checkpoint, input, out;
};

int canonicalize_cmd(const CloudArgs& a) {
  train::LoadedModel lm = train::load_model(a.checkpoint);
  const data::PointCloud pc = data::read_cloud(a.input);
  const auto inf = model::infer(*lm.model, std::span<const data::PointCloud>(&pc, 1), false);
  const fs::path out = output_path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  data::write_cloud(out, inf[0].canonical.canonicalized);
  fs::path tpath = out;
  tpath.replace_extension(".transform.txt");
  write_transform(tpath, inf[0].canonical.transform);
  std::cout << "wrote " << out.string() << " and " << tpath.string() << "\n";
  return kOk;
}

int decompose_cmd(const CloudArgs& a) {
  train::LoadedModel lm = train::load_model(a.checkpoint);
  const data::PointCloud pc = data::read_cloud(a.input);
  const auto inf = model::infer(*lm.model, std::span<const data::PointCloud>(&pc, 1), true);
  const model::Inference& r = inf[0];
  const fs::path out = output_path(a.out);
  fs::create_directories(out);

  data::PointCloud input = pc, canonical = r.canonical.canonicalized, recon;
  input.colors.clear();
  canonical.colors.clear();
  for (std::size_t p = 0; p < pc.size(); ++p) {
    input.colors.push_back(data::capsule_color(r.capsule_of_point[p]));
    canonical.colors.push_back(data::capsule_color(r.capsule_of_point[p]));
  }
  const auto labels = lm.model->decoder().labels();
  recon.points = r.reconstruction;
  for (std::size_t k : labels) recon.colors.push_back(data::capsule_color(k));
  data::write_cloud(out / "input_capsules.ply", input);
  data::write_cloud(out / "canonical.ply", canonical);
  data::write_cloud(out / "reconstruction.ply", recon);
  write_transform(out / "transform.txt", r.canonical.transform);
  std::cout << "wrote input_capsules.ply, canonical.ply, reconstruction.ply and transform.txt to " << out.string()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canonical capsules: unsupervised capsule decomposition and canonicalization of point clouds"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the procedural shape dataset and its manifest");
  g->add_option("--spec", gen.spec, "Generator spec (INI); built-in families when omitted")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--classes", gen.classes, "Keep only the first N classes");
  g->add_option("--instances", gen.instances, "Instances per class");
  g->add_option("--points", gen.points, "Points per cloud");
  g->add_flag("--aligned", gen.aligned, "Store clouds in canonical pose");
  g->add_option("--translation-range", gen.translation_range, "Range of the hidden translations");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes checkpoint, losses.csv and config.ini");
  t->add_option("--config", tr.config, "Training config (INI)")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--mode", tr.mode, "aligned | unaligned");
  t->add_option("--rotation-sampling", tr.sampling, "uniform | euler_biased");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--points", tr.points);
  t->add_option("--capsules", tr.capsules);
  t->add_option("--feature-dim", tr.feature_dim);
  t->add_option("--hidden-width", tr.hidden_width);
  t->add_option("--lr", tr.lr);
  t->add_option("--translation-range", tr.translation_range);
  t->add_option("--seed", tr.seed);
  t->add_option("--w-equivariance", tr.w_equiv);
  t->add_option("--w-invariance", tr.w_inv);
  t->add_option("--w-equilibrium", tr.w_equil);
  t->add_option("--w-localization", tr.w_local);
  t->add_option("--w-canonical", tr.w_canon);
  t->add_option("--w-recon", tr.w_recon);
  t->add_flag("--no-reextract", tr.no_reextract, "Decode from first-pass descriptors");
  t->add_flag("--stop-canonical-gradient", tr.stop_gradient, "Block gradients through the canonicalizing transform");
  t->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint.ccap");
  t->add_option("--max-epochs", tr.max_epochs, "Stop after this many epochs in this invocation");
  t->add_flag("--init-only", tr.init_only, "Write the untrained checkpoint and exit");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint; writes CSV reports and summary.json");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--which", ev.which, "recon | canon | register | cluster | all");
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--config", ev.config, "Refuse to run unless this config matches the checkpoint")
      ->check(CLI::ExistingFile);
  e->add_option("--split", ev.split, "train | test");
  e->add_option("--seed", ev.seed, "Evaluation seed");
  e->add_option("--rotations", ev.rotations, "Random poses per object for mStd");
  e->add_option("--batch", ev.batch, "Inference batch size");
  e->add_flag("--standardize", ev.standardize, "Standardize clustering features per dimension");
  e->add_flag("--force", ev.force, "Ignore config or setup mismatches");

  CloudArgs ca;
  auto* c = app.add_subcommand("canonicalize", "Map one cloud into the learned canonical frame");
  c->add_option("--checkpoint", ca.checkpoint)->required()->check(CLI::ExistingFile);
  c->add_option("--input", ca.input, ".xyz or .ply cloud")->required();
  c->add_option("--out", ca.out, "Output cloud; the transform goes to <out>.transform.txt")->required();

  CloudArgs da;
  auto* d = app.add_subcommand("decompose", "Capsule-colored input, canonical cloud, reconstruction and transform");
  d->add_option("--checkpoint", da.checkpoint)->required()->check(CLI::ExistingFile);
  d->add_option("--input", da.input, ".xyz or .ply cloud")->required();
  d->add_option("--out", da.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (g->parsed()) return gen_data(gen);
    if (t->parsed()) return train_cmd(tr);
    if (e->parsed()) return eval_cmd(ev);
    if (c->parsed()) return canonicalize_cmd(ca);
    if (d->parsed()) return decompose_cmd(da);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const DimensionError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kNumeric;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kIo;
  } catch (const ParseError& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& err) {
    std::cerr << "i/o error: " << err.what() << "\n";
    return kIo;
  }
  return kOk;
}
