#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ccaps/dataset.hpp"
#include "ccaps/errors.hpp"

namespace ccaps::data {

void PointCloud::validate() const {
  if (points.empty()) throw DimensionError("point cloud is empty");
  if (!colors.empty() && colors.size() != points.size()) throw DimensionError("color count differs from point count");
  for (const auto& p : points)
    if (!p.allFinite()) throw NumericError("point cloud has non-finite coordinates");
}

PointCloud transformed(const PointCloud& pc, const geo::RigidTransform& t) {
  PointCloud out = pc;
  for (auto& p : out.points) p = t.apply(p);
  return out;
}

ad::Tensor stack_points(std::span<const PointCloud* const> clouds) {
  if (clouds.empty()) throw DimensionError("stack_points: no clouds");
  const std::size_t p = clouds.front()->size();
  std::vector<double> v;
  v.reserve(clouds.size() * p * 3);
  for (const PointCloud* c : clouds) {
    if (c->size() != p) throw DimensionError("stack_points: clouds differ in point count");
    for (const auto& q : c->points) v.insert(v.end(), {q.x(), q.y(), q.z()});
  }
  return ad::Tensor::constant({clouds.size() * p, 3}, std::move(v));
}

ad::Tensor to_tensor(const PointCloud& pc) {
  const PointCloud* one[] = {&pc};
  return stack_points(one);
}

std::vector<Vec3> rows_to_points(const ad::Tensor& t, std::size_t begin, std::size_t count) {
  if (t.cols() != 3 || begin + count > t.rows()) throw DimensionError("rows_to_points: range outside tensor");
  std::vector<Vec3> out(count);
  const auto v = t.values();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = (begin + i) * 3;
    out[i] = Vec3(v[r], v[r + 1], v[r + 2]);
  }
  return out;
}

CloudFormat format_for(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".xyz" || ext == ".XYZ") return CloudFormat::Xyz;
  if (ext == ".ply" || ext == ".PLY") return CloudFormat::Ply;
  throw ConfigError("unknown point cloud extension '" + ext + "' for " + path.string());
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

bool blank_or_comment(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

Vec3 parse_triple(std::istringstream& ss, std::size_t line_no) {
  double x, y, z;
  if (!(ss >> x >> y >> z)) throw ParseError("expected three coordinates", line_no);
  const Vec3 p(x, y, z);
  if (!p.allFinite()) throw ParseError("non-finite coordinate", line_no);
  return p;
}

}  // namespace

PointCloud parse_xyz(const std::string& text) {
  PointCloud pc;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank_or_comment(line)) continue;
    std::istringstream ss(line);
    pc.points.push_back(parse_triple(ss, line_no));
    std::string extra;
    if (ss >> extra) throw ParseError("trailing data '" + extra + "'", line_no);
  }
  if (pc.points.empty()) throw ParseError("no points", line_no);
  return pc;
}

PointCloud parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || line != "ply") throw ParseError("missing 'ply' magic", line_no);

  bool ascii = false, in_vertex = false, have_count = false;
  std::size_t count = 0;
  std::vector<std::string> props;
  while (true) {
    if (!next()) throw ParseError("unterminated header", line_no);
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "end_header") break;
    if (key == "comment" || key == "obj_info" || key.empty()) continue;
    if (key == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") throw ParseError("only ascii PLY is supported", line_no);
      ascii = true;
    } else if (key == "element") {
      std::string name;
      long long n = -1;
      ss >> name >> n;
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (n < 0) throw ParseError("bad vertex count", line_no);
        count = static_cast<std::size_t>(n);
        have_count = true;
      }
    } else if (key == "property") {
      std::string type, name;
      ss >> type >> name;
      if (type == "list") throw ParseError("list properties are not supported", line_no);
      if (in_vertex) props.push_back(name);
    } else {
      throw ParseError("unknown header keyword '" + key + "'", line_no);
    }
  }
  if (!ascii) throw ParseError("missing format line", line_no);
  if (!have_count) throw ParseError("missing vertex count", line_no);

  auto index_of = [&](const std::string& n) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == n) return static_cast<int>(i);
    return -1;
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex lacks x/y/z properties", line_no);
  const int ir = index_of("red"), ig = index_of("green"), ib = index_of("blue");
  const bool colored = ir >= 0 && ig >= 0 && ib >= 0;

  PointCloud pc;
  pc.points.reserve(count);
  std::vector<double> row(props.size());
  for (std::size_t v = 0; v < count; ++v) {
    if (!next()) throw ParseError("expected " + std::to_string(count) + " vertices", line_no);
    std::istringstream ss(line);
    for (auto& x : row)
      if (!(ss >> x)) throw ParseError("short vertex line", line_no);
    const Vec3 p(row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                 row[static_cast<std::size_t>(iz)]);
    if (!p.allFinite()) throw ParseError("non-finite coordinate", line_no);
    pc.points.push_back(p);
    if (colored) {
      Rgb c{};
      const int idx[3] = {ir, ig, ib};
      for (int i = 0; i < 3; ++i) {
        const double value = row[static_cast<std::size_t>(idx[i])];
        if (value < 0 || value > 255) throw ParseError("color out of range", line_no);
        c[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(value);
      }
      pc.colors.push_back(c);
    }
  }
  if (pc.points.empty()) throw ParseError("no vertices", line_no);
  return pc;
}

std::string format_xyz(const PointCloud& pc) {
  std::ostringstream out;
  out << std::setprecision(9);
  for (const auto& p : pc.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  return out.str();
}

std::string format_ply(const PointCloud& pc) {
  const bool colored = !pc.colors.empty();
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << pc.points.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n" << std::setprecision(9);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    const auto& p = pc.points[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (colored)
      out << ' ' << int(pc.colors[i][0]) << ' ' << int(pc.colors[i][1]) << ' ' << int(pc.colors[i][2]);
    out << '\n';
  }
  return out.str();
}

PointCloud read_cloud(const std::filesystem::path& path) { return read_cloud(path, format_for(path)); }

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format) {
  const std::string text = slurp(path);
  try {
    return format == CloudFormat::Xyz ? parse_xyz(text) : parse_ply(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.detail(), e.line());
  }
}

void write_cloud(const std::filesystem::path& path, const PointCloud& pc) { write_cloud(path, pc, format_for(path)); }

void write_cloud(const std::filesystem::path& path, const PointCloud& pc, CloudFormat format) {
  spit(path, format == CloudFormat::Xyz ? format_xyz(pc) : format_ply(pc));
}

Rgb capsule_color(std::size_t k) {
  static const Rgb palette[] = {{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
                                {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
                                {210, 245, 60}, {0, 128, 128},  {170, 110, 40}, {128, 0, 0}};
  return palette[k % std::size(palette)];
}

}  // namespace ccaps::data
