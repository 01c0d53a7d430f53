#include "ccaps/config.hpp"

#include <zlib.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

#include "ccaps/errors.hpp"

namespace ccaps::train {

namespace pt = boost::property_tree;

const char* mode_name(Mode m) { return m == Mode::Aligned ? "aligned" : "unaligned"; }

Mode parse_mode(const std::string& s) {
  if (s == "aligned") return Mode::Aligned;
  if (s == "unaligned") return Mode::Unaligned;
  throw ConfigError("train.mode: expected aligned or unaligned, got '" + s + "'");
}

const char* sampling_name(geo::RotationSampling s) {
  return s == geo::RotationSampling::Uniform ? "uniform" : "euler_biased";
}

geo::RotationSampling parse_sampling(const std::string& s) {
  if (s == "uniform") return geo::RotationSampling::Uniform;
  if (s == "euler_biased") return geo::RotationSampling::EulerBiased;
  throw ConfigError("train.rotation_sampling: expected uniform or euler_biased, got '" + s + "'");
}

TrainConfig TrainConfig::defaults(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = mode == Mode::Aligned ? 325 : 450;
  c.weights = mode == Mode::Aligned ? loss::LossWeights::aligned() : loss::LossWeights::unaligned();
  c.model.decoder.points_per_capsule = 0;
  return c;
}

model::ModelConfig TrainConfig::resolved_model() const {
  model::ModelConfig m = model;
  if (m.decoder.points_per_capsule == 0)
    m.decoder.points_per_capsule = model::ModelConfig::points_per_capsule_for(points, m.encoder.num_capsules);
  return m;
}

data::AugmentOptions TrainConfig::augment() const {
  data::AugmentOptions a;
  a.translation_range = translation_range;
  a.sampling = rotation_sampling;
  a.aligned = mode == Mode::Aligned;
  return a;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs: must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size: must be positive");
  if (!(lr > 0.0)) throw ConfigError("train.lr: must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay: must be in (0, 1]");
  for (double m : milestones)
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("train.milestones: fractions must be in (0, 1)");
  if (points == 0) throw ConfigError("train.points: must be positive");
  if (!(translation_range >= 0.0)) throw ConfigError("train.translation_range: must be non-negative");
  weights.validate();
  resolved_model().validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double rate = lr;
  for (double m : milestones)
    if (static_cast<double>(epoch) >= m * static_cast<double>(epochs)) rate *= lr_decay;
  return rate;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& field) {
  std::vector<T> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    std::string rest;
    if (!(is >> v) || (is >> rest)) throw ConfigError(field + ": bad list entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

bool parse_bool(const std::string& s, const std::string& field) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError(field + ": expected true or false, got '" + s + "'");
}

template <class T>
void read(const pt::ptree& sec, const std::string& section, const std::string& key, T& dst) {
  const auto v = sec.get_optional<std::string>(key);
  if (!v) return;
  std::istringstream is(*v);
  T parsed{};
  std::string rest;
  if (!(is >> parsed) || (is >> rest)) throw ConfigError(section + "." + key + ": bad value '" + *v + "'");
  if constexpr (std::is_unsigned_v<T>)
    if (v->find('-') != std::string::npos) throw ConfigError(section + "." + key + ": must be non-negative");
  dst = parsed;
}

const std::map<std::string, std::vector<std::string>>& known_keys() {
  static const std::map<std::string, std::vector<std::string>> keys{
      {"train",
       {"mode", "epochs", "batch_size", "lr", "lr_decay", "milestones", "points", "translation_range", "seed",
        "rotation_sampling"}},
      {"model",
       {"capsules", "feature_dim", "blocks", "hidden_width", "epsilon", "regressor_width", "points_per_capsule",
        "grid_dim", "decoder_hidden", "reextract_descriptors", "stop_canonical_gradient"}},
      {"loss", {"equivariance", "invariance", "equilibrium", "localization", "canonical", "recon"}}};
  return keys;
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [name, sec] : tree) {
    const auto it = known_keys().find(name);
    if (it == known_keys().end()) throw ConfigError("config: unknown section [" + name + "]");
    for (const auto& kv : sec)
      if (std::find(it->second.begin(), it->second.end(), kv.first) == it->second.end())
        throw ConfigError(name + "." + kv.first + ": unknown key");
  }
  const pt::ptree empty;
  const pt::ptree& tr = tree.get_child("train", empty);
  const pt::ptree& md = tree.get_child("model", empty);
  const pt::ptree& ls = tree.get_child("loss", empty);

  TrainConfig c = TrainConfig::defaults(parse_mode(tr.get<std::string>("mode", "unaligned")));
  read(tr, "train", "epochs", c.epochs);
  read(tr, "train", "batch_size", c.batch_size);
  read(tr, "train", "lr", c.lr);
  read(tr, "train", "lr_decay", c.lr_decay);
  if (auto v = tr.get_optional<std::string>("milestones")) c.milestones = parse_list<double>(*v, "train.milestones");
  read(tr, "train", "points", c.points);
  read(tr, "train", "translation_range", c.translation_range);
  read(tr, "train", "seed", c.seed);
  if (auto v = tr.get_optional<std::string>("rotation_sampling")) c.rotation_sampling = parse_sampling(*v);

  auto& enc = c.model.encoder;
  read(md, "model", "capsules", enc.num_capsules);
  read(md, "model", "feature_dim", enc.feature_dim);
  read(md, "model", "blocks", enc.blocks);
  read(md, "model", "hidden_width", enc.hidden_width);
  read(md, "model", "epsilon", enc.epsilon);
  read(md, "model", "regressor_width", c.model.regressor_width);
  read(md, "model", "points_per_capsule", c.model.decoder.points_per_capsule);
  read(md, "model", "grid_dim", c.model.decoder.grid_dim);
  if (auto v = md.get_optional<std::string>("decoder_hidden"))
    c.model.decoder.hidden = parse_list<std::size_t>(*v, "model.decoder_hidden");
  if (auto v = md.get_optional<std::string>("reextract_descriptors"))
    c.model.reextract_descriptors = parse_bool(*v, "model.reextract_descriptors");
  if (auto v = md.get_optional<std::string>("stop_canonical_gradient"))
    c.model.stop_canonical_gradient = parse_bool(*v, "model.stop_canonical_gradient");

  read(ls, "loss", "equivariance", c.weights.equivariance);
  read(ls, "loss", "invariance", c.weights.invariance);
  read(ls, "loss", "equilibrium", c.weights.equilibrium);
  read(ls, "loss", "localization", c.weights.localization);
  read(ls, "loss", "canonical", c.weights.canonical);
  read(ls, "loss", "recon", c.weights.recon);
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& c) {
  const auto& e = c.model.encoder;
  const auto& w = c.weights;
  std::ostringstream o;
  o << "[train]\n"
    << "mode = " << mode_name(c.mode) << "\n"
    << "epochs = " << c.epochs << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "lr = " << fmt(c.lr) << "\n"
    << "lr_decay = " << fmt(c.lr_decay) << "\n"
    << "milestones = " << fmt_list(c.milestones) << "\n"
    << "points = " << c.points << "\n"
    << "translation_range = " << fmt(c.translation_range) << "\n"
    << "seed = " << c.seed << "\n"
    << "rotation_sampling = " << sampling_name(c.rotation_sampling) << "\n"
    << "\n[model]\n"
    << "capsules = " << e.num_capsules << "\n"
    << "feature_dim = " << e.feature_dim << "\n"
    << "blocks = " << e.blocks << "\n"
    << "hidden_width = " << e.hidden_width << "\n"
    << "epsilon = " << fmt(e.epsilon) << "\n"
    << "regressor_width = " << c.model.regressor_width << "\n"
    << "points_per_capsule = " << c.model.decoder.points_per_capsule << "\n"
    << "grid_dim = " << c.model.decoder.grid_dim << "\n"
    << "decoder_hidden = " << fmt_list(c.model.decoder.hidden) << "\n"
    << "reextract_descriptors = " << (c.model.reextract_descriptors ? "true" : "false") << "\n"
    << "stop_canonical_gradient = " << (c.model.stop_canonical_gradient ? "true" : "false") << "\n"
    << "\n[loss]\n"
    << "equivariance = " << fmt(w.equivariance) << "\n"
    << "invariance = " << fmt(w.invariance) << "\n"
    << "equilibrium = " << fmt(w.equilibrium) << "\n"
    << "localization = " << fmt(w.localization) << "\n"
    << "canonical = " << fmt(w.canonical) << "\n"
    << "recon = " << fmt(w.recon) << "\n";
  return o.str();
}

void save_config(const std::filesystem::path& path, const TrainConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << format_config(c);
  if (!out) throw IoError("write failed for " + path.string());
}

std::string config_hash(const TrainConfig& c) {
  const std::string text = format_config(c);
  const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace ccaps::train
