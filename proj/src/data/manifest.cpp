#include <fstream>
#include <set>
#include <sstream>

#include "ccaps/dataset.hpp"
#include "ccaps/errors.hpp"

namespace ccaps::data {

std::vector<std::string> Manifest::classes() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (std::find(out.begin(), out.end(), e.label) == out.end()) out.push_back(e.label);
  return out;
}

std::vector<const ManifestEntry*> Manifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(&e);
  return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ss(line.substr(1));
      std::string kv;
      while (ss >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "setup") m.setup = value;
        if (key == "seed") m.seed = std::stoull(value);
      }
      continue;
    }
    const auto f = split_csv(line);
    if (!header_seen) {
      header_seen = true;
      if (f.size() == 4 && f[0] == "class") continue;
    }
    if (f.size() != 4) throw ParseError(path.string() + ": expected 4 fields", line_no);
    if (f[3] != "train" && f[3] != "test") throw ParseError(path.string() + ": split must be train or test", line_no);
    m.entries.push_back({f[0], f[1], f[2], f[3]});
  }
  if (m.entries.empty()) throw ParseError(path.string() + ": manifest lists no clouds", line_no);
  if (m.setup.empty()) m.setup = "unaligned";
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# setup=" << m.setup << " seed=" << m.seed << "\n";
  out << "class,instance_id,path,split\n";
  for (const auto& e : m.entries) out << e.label << ',' << e.instance_id << ',' << e.path << ',' << e.split << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_split(const Manifest& m, const std::string& split) {
  Dataset d;
  d.classes = m.classes();
  for (const ManifestEntry* e : m.split(split)) {
    PointCloud pc = read_cloud(m.root / e->path);
    pc.validate();
    pc.label = e->label;
    pc.id = e->instance_id;
    d.class_index.push_back(static_cast<std::size_t>(
        std::find(d.classes.begin(), d.classes.end(), e->label) - d.classes.begin()));
    d.clouds.push_back(std::move(pc));
  }
  if (d.clouds.empty()) throw ConfigError("split '" + split + "' is empty");
  return d;
}

}  // namespace ccaps::data
