#include "ccaps/ground_truth.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "ccaps/errors.hpp"

namespace ccaps::data::truth {

void write_poses(const std::filesystem::path& path, const PoseTable& poses) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "instance_id,r00,r01,r02,r10,r11,r12,r20,r21,r22,t0,t1,t2\n" << std::setprecision(17);
  for (const auto& [id, t] : poses) {
    out << id;
    for (double v : t.to_array()) out << ',' << v;
    out << '\n';
  }
}

PoseTable read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PoseTable out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream ss(line);
    std::string id, field;
    std::getline(ss, id, ',');
    std::vector<double> v;
    while (std::getline(ss, field, ',')) {
      try {
        v.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw ParseError("bad number '" + field + "'", line_no);
      }
    }
    if (v.size() != 12) throw ParseError("expected 12 transform values", line_no);
    out[id] = geo::RigidTransform::from_array(v);
  }
  return out;
}

}  // namespace ccaps::data::truth
