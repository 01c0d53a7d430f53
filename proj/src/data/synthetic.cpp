#include "ccaps/synthetic.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ccaps/errors.hpp"
#include "ccaps/ground_truth.hpp"

namespace ccaps::data {

namespace {

constexpr double Pi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec3 uniform(Rng& rng, const Vec3& lo, const Vec3& hi) {
  const double x = uniform(rng, lo.x(), hi.x());
  const double y = uniform(rng, lo.y(), hi.y());
  const double z = uniform(rng, lo.z(), hi.z());
  return {x, y, z};
}

struct Part {
  PrimitiveKind kind;
  Vec3 size;
  Vec3 centre;
  int axis;
};

double area(const Part& p) {
  const Vec3& s = p.size;
  switch (p.kind) {
    case PrimitiveKind::Box:
      return 2.0 * (s.x() * s.y() + s.y() * s.z() + s.z() * s.x());
    case PrimitiveKind::Cylinder: {
      const double r = 0.5 * s.x();
      return 2.0 * Pi * r * s.z() + 2.0 * Pi * r * r;
    }
    case PrimitiveKind::Ellipsoid: {
      // Knud Thomsen's approximation, relative error below 1.1%
      const double a = 0.5 * s.x(), b = 0.5 * s.y(), c = 0.5 * s.z(), q = 1.6075;
      const double m = (std::pow(a * b, q) + std::pow(a * c, q) + std::pow(b * c, q)) / 3.0;
      return 4.0 * Pi * std::pow(m, 1.0 / q);
    }
  }
  return 0.0;
}

Vec3 sample_box(const Vec3& s, Rng& rng) {
  const double faces[3] = {s.y() * s.z(), s.x() * s.z(), s.x() * s.y()};
  const int axis = std::discrete_distribution<int>(std::begin(faces), std::end(faces))(rng);
  Vec3 p(uniform(rng, -0.5, 0.5) * s.x(), uniform(rng, -0.5, 0.5) * s.y(), uniform(rng, -0.5, 0.5) * s.z());
  p(axis) = (uniform(rng, 0.0, 1.0) < 0.5 ? -0.5 : 0.5) * s(axis);
  return p;
}

Vec3 sample_cylinder(const Vec3& s, int axis, Rng& rng) {
  const double r = 0.5 * s.x(), len = s.z();
  const double side = 2.0 * Pi * r * len, caps = 2.0 * Pi * r * r;
  double u, v, w;  // (radial plane coordinates, axial coordinate)
  if (uniform(rng, 0.0, side + caps) < side) {
    const double phi = uniform(rng, 0.0, 2.0 * Pi);
    u = r * std::cos(phi);
    v = r * std::sin(phi);
    w = uniform(rng, -0.5, 0.5) * len;
  } else {
    const double rho = r * std::sqrt(uniform(rng, 0.0, 1.0)), phi = uniform(rng, 0.0, 2.0 * Pi);
    u = rho * std::cos(phi);
    v = rho * std::sin(phi);
    w = (uniform(rng, 0.0, 1.0) < 0.5 ? -0.5 : 0.5) * len;
  }
  Vec3 p;
  p((axis + 1) % 3) = u;
  p((axis + 2) % 3) = v;
  p(axis) = w;
  return p;
}

Vec3 sample_ellipsoid(const Vec3& s, Rng& rng) {
  const double a = 0.5 * s.x(), b = 0.5 * s.y(), c = 0.5 * s.z();
  const double g_max = std::max({b * c, a * c, a * b});
  std::normal_distribution<double> normal(0.0, 1.0);
  while (true) {
    Vec3 u(normal(rng), normal(rng), normal(rng));
    const double n = u.norm();
    if (n < 1e-12) continue;
    u /= n;
    // surface element of the map sphere -> ellipsoid at u
    const double g = std::sqrt(std::pow(b * c * u.x(), 2) + std::pow(a * c * u.y(), 2) + std::pow(a * b * u.z(), 2));
    if (uniform(rng, 0.0, g_max) <= g) return {a * u.x(), b * u.y(), c * u.z()};
  }
}

Vec3 sample_part(const Part& p, Rng& rng) {
  switch (p.kind) {
    case PrimitiveKind::Box:
      return p.centre + sample_box(p.size, rng);
    case PrimitiveKind::Cylinder:
      return p.centre + sample_cylinder(p.size, p.axis, rng);
    case PrimitiveKind::Ellipsoid:
      return p.centre + sample_ellipsoid(p.size, rng);
  }
  return p.centre;
}

PartSpec part(PrimitiveKind kind, Vec3 lo, Vec3 hi, Vec3 offset, Vec3 jitter = Vec3::Zero(), int axis = 2) {
  return PartSpec{kind, lo, hi, offset, jitter, axis};
}

const char* kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::Box:
      return "box";
    case PrimitiveKind::Cylinder:
      return "cylinder";
    case PrimitiveKind::Ellipsoid:
      return "ellipsoid";
  }
  return "box";
}

PrimitiveKind parse_kind(const std::string& s, const std::string& field) {
  if (s == "box") return PrimitiveKind::Box;
  if (s == "cylinder") return PrimitiveKind::Cylinder;
  if (s == "ellipsoid") return PrimitiveKind::Ellipsoid;
  throw ConfigError(field + ": unknown primitive '" + s + "'");
}

Vec3 parse_vec3(const std::string& s, const std::string& field) {
  std::istringstream ss(s);
  double x, y, z;
  std::string extra;
  if (!(ss >> x >> y >> z) || (ss >> extra)) throw ConfigError(field + ": expected three numbers, got '" + s + "'");
  return {x, y, z};
}

std::string format_vec3(const Vec3& v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v.x() << ' ' << v.y() << ' ' << v.z();
  return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

void ShapeFamilySpec::validate() const {
  if (label.empty()) throw ConfigError("family label is empty");
  if (label.find_first_of(", \t/") != std::string::npos)
    throw ConfigError("family label '" + label + "' contains separators");
  if (parts.empty()) throw ConfigError(label + ".parts: no parts");
  if (points == 0) throw ConfigError(label + ".points: must be positive");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const PartSpec& p = parts[i];
    const std::string f = label + ".part" + std::to_string(i);
    if (!(p.size_min.array() > 0.0).all()) throw ConfigError(f + "_size_min: sizes must be positive");
    if (!(p.size_max.array() >= p.size_min.array()).all()) throw ConfigError(f + "_size_max: below size_min");
    if (!(p.jitter.array() >= 0.0).all()) throw ConfigError(f + "_jitter: must be non-negative");
    if (!p.offset.allFinite()) throw ConfigError(f + "_offset: not finite");
    if (p.axis < 0 || p.axis > 2) throw ConfigError(f + "_axis: must be 0, 1 or 2");
  }
}

void GeneratorSpec::validate() const {
  if (families.empty()) throw ConfigError("dataset.classes: no families");
  if (instances_per_class == 0) throw ConfigError("dataset.instances: must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("dataset.train_fraction: must be in (0, 1)");
  for (const auto& f : families) f.validate();
  for (std::size_t i = 0; i < families.size(); ++i)
    for (std::size_t j = i + 1; j < families.size(); ++j)
      if (families[i].label == families[j].label) throw ConfigError("dataset.classes: duplicate '" + families[i].label + "'");
}

std::vector<ShapeFamilySpec> default_families(std::size_t points) {
  using K = PrimitiveKind;
  ShapeFamilySpec plane{"plane", {}, points};
  plane.parts = {
      part(K::Ellipsoid, {1.8, 0.22, 0.22}, {2.0, 0.28, 0.28}, {0, 0, 0}),
      part(K::Box, {0.35, 1.6, 0.04}, {0.45, 1.9, 0.05}, {0.1, 0, -0.02}, {0.05, 0, 0}),
      part(K::Box, {0.18, 0.55, 0.03}, {0.22, 0.7, 0.04}, {-0.82, 0, 0.02}),
      part(K::Box, {0.22, 0.03, 0.3}, {0.28, 0.04, 0.36}, {-0.82, 0, 0.2}),
      part(K::Cylinder, {0.1, 0.1, 0.28}, {0.12, 0.12, 0.34}, {0.2, 0.45, -0.1}, {0.03, 0.03, 0}, 0),
      part(K::Cylinder, {0.1, 0.1, 0.28}, {0.12, 0.12, 0.34}, {0.2, -0.45, -0.1}, {0.03, 0.03, 0}, 0),
  };
  ShapeFamilySpec chair{"chair", {}, points};
  chair.parts = {
      part(K::Box, {0.85, 0.85, 0.07}, {1.0, 1.0, 0.09}, {0, 0, 0}),
      part(K::Box, {0.07, 0.85, 0.8}, {0.09, 1.0, 1.0}, {-0.45, 0, 0.45}, {0.02, 0, 0.05}),
  };
  for (double x : {-0.4, 0.4})
    for (double y : {-0.4, 0.4})
      chair.parts.push_back(part(K::Cylinder, {0.06, 0.06, 0.75}, {0.08, 0.08, 0.85}, {x, y, -0.4}, {0.02, 0.02, 0}));
  ShapeFamilySpec table{"table", {}, points};
  table.parts = {
      part(K::Box, {1.5, 0.8, 0.05}, {1.8, 1.0, 0.07}, {0, 0, 0.4}),
      part(K::Box, {0.45, 0.6, 0.12}, {0.55, 0.7, 0.15}, {0.45, 0, 0.29}, {0.05, 0, 0}),
  };
  for (double x : {-0.7, 0.7})
    for (double y : {-0.38, 0.38})
      table.parts.push_back(part(K::Cylinder, {0.06, 0.06, 0.75}, {0.08, 0.08, 0.85}, {x, y, 0}, {0.03, 0.02, 0}));
  return {plane, chair, table};
}

GeneratorSpec default_generator_spec(std::size_t points) {
  GeneratorSpec g;
  g.families = default_families(points);
  return g;
}

GeneratorSpec parse_generator_spec(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("generator spec: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  GeneratorSpec g;
  const auto ds = tree.get_child_optional("dataset");
  if (!ds) throw ConfigError("dataset: missing section");
  try {
    g.instances_per_class = ds->get<std::size_t>("instances", g.instances_per_class);
    g.train_fraction = ds->get<double>("train_fraction", g.train_fraction);
    const auto points = ds->get<std::size_t>("points", 1024);
    const auto labels = split_list(ds->get<std::string>("classes", ""));
    if (labels.empty()) throw ConfigError("dataset.classes: missing");
    for (const auto& label : labels) {
      const auto sec = tree.get_child_optional(label);
      if (!sec) throw ConfigError(label + ": missing section for listed class");
      ShapeFamilySpec fam{label, {}, sec->get<std::size_t>("points", points)};
      for (std::size_t i = 0;; ++i) {
        const std::string pre = "part" + std::to_string(i) + "_";
        const auto kind = sec->get_optional<std::string>(pre + "kind");
        if (!kind) break;
        const std::string f = label + "." + pre;
        PartSpec p;
        p.kind = parse_kind(*kind, f + "kind");
        p.size_min = parse_vec3(sec->get<std::string>(pre + "size_min", ""), f + "size_min");
        p.size_max = parse_vec3(sec->get<std::string>(pre + "size_max", format_vec3(p.size_min)), f + "size_max");
        p.offset = parse_vec3(sec->get<std::string>(pre + "offset", "0 0 0"), f + "offset");
        p.jitter = parse_vec3(sec->get<std::string>(pre + "jitter", "0 0 0"), f + "jitter");
        p.axis = sec->get<int>(pre + "axis", 2);
        fam.parts.push_back(p);
      }
      g.families.push_back(std::move(fam));
    }
  } catch (const pt::ptree_bad_data& e) {
    throw ConfigError(std::string("generator spec: bad value: ") + e.what());
  }
  g.validate();
  return g;
}

GeneratorSpec load_generator_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open generator spec " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_generator_spec(ss.str());
}

std::string format_generator_spec(const GeneratorSpec& spec) {
  std::ostringstream out;
  out << "[dataset]\nclasses = ";
  for (std::size_t i = 0; i < spec.families.size(); ++i) out << (i ? "," : "") << spec.families[i].label;
  out << "\ninstances = " << spec.instances_per_class << "\ntrain_fraction = " << spec.train_fraction << "\n";
  for (const auto& f : spec.families) {
    out << "\n[" << f.label << "]\npoints = " << f.points << "\n";
    for (std::size_t i = 0; i < f.parts.size(); ++i) {
      const auto& p = f.parts[i];
      const std::string pre = "part" + std::to_string(i) + "_";
      out << pre << "kind = " << kind_name(p.kind) << "\n"
          << pre << "size_min = " << format_vec3(p.size_min) << "\n"
          << pre << "size_max = " << format_vec3(p.size_max) << "\n"
          << pre << "offset = " << format_vec3(p.offset) << "\n"
          << pre << "jitter = " << format_vec3(p.jitter) << "\n";
      if (p.kind == PrimitiveKind::Cylinder) out << pre << "axis = " << p.axis << "\n";
    }
  }
  return out.str();
}

PointCloud sample_instance(const ShapeFamilySpec& spec, Rng& rng) {
  spec.validate();
  std::vector<Part> parts;
  std::vector<double> areas;
  for (const auto& ps : spec.parts) {
    Part p{ps.kind, uniform(rng, ps.size_min, ps.size_max), ps.offset + uniform(rng, -ps.jitter, ps.jitter), ps.axis};
    areas.push_back(area(p));
    parts.push_back(p);
  }
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  PointCloud pc;
  pc.label = spec.label;
  pc.points.reserve(spec.points);
  for (std::size_t i = 0; i < spec.points; ++i) pc.points.push_back(sample_part(parts[pick(rng)], rng));

  Vec3 lo = pc.points.front(), hi = lo;
  for (const auto& p : pc.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 centre = 0.5 * (lo + hi);
  double radius = 0.0;
  for (const auto& p : pc.points) radius = std::max(radius, (p - centre).norm());
  if (!(radius > 0.0)) throw ConfigError(spec.label + ": degenerate instance");
  for (auto& p : pc.points) p = (p - centre) / radius;
  return pc;
}

std::vector<PointCloud> generate_family(const ShapeFamilySpec& spec, std::size_t n_instances, Rng& rng) {
  std::vector<PointCloud> out;
  out.reserve(n_instances);
  for (std::size_t i = 0; i < n_instances; ++i) {
    out.push_back(sample_instance(spec, rng));
    std::ostringstream id;
    id << spec.label << '_' << std::setw(4) << std::setfill('0') << i;
    out.back().id = id.str();
  }
  return out;
}

Manifest generate_dataset(const GeneratorSpec& spec, const std::filesystem::path& out_dir,
                          const GenerateOptions& opt) {
  spec.validate();
  Manifest m;
  m.root = out_dir;
  m.setup = opt.aligned ? "aligned" : "unaligned";
  m.seed = opt.seed;
  truth::PoseTable poses;
  AugmentOptions aug;
  aug.translation_range = opt.translation_range;
  for (std::size_t c = 0; c < spec.families.size(); ++c) {
    const auto& fam = spec.families[c];
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                      static_cast<std::uint32_t>(c)};
    Rng rng(seq);
    const auto clouds = generate_family(fam, spec.instances_per_class, rng);

    std::vector<std::size_t> order(clouds.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
    const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * double(clouds.size())));
    std::vector<std::string> split(clouds.size(), "test");
    for (std::size_t i = 0; i < n_train; ++i) split[order[i]] = "train";

    for (std::size_t i = 0; i < clouds.size(); ++i) {
      const auto hidden = opt.aligned ? Decanonicalized{clouds[i], geo::RigidTransform::identity()}
                                      : decanonicalize(clouds[i], rng, aug);
      const std::string rel = "clouds/" + clouds[i].id + ".xyz";
      write_cloud(out_dir / rel, hidden.cloud);
      poses[clouds[i].id] = hidden.transform;
      m.entries.push_back({fam.label, clouds[i].id, rel, split[i]});
    }
  }
  write_manifest(out_dir / "manifest.csv", m);
  truth::write_poses(out_dir / "ground_truth.csv", poses);
  std::ofstream(out_dir / "generator.ini") << format_generator_spec(spec);
  return m;
}

}  // namespace ccaps::data
