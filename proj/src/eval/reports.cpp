#include "ccaps/reports.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "ccaps/errors.hpp"
#include "json.hpp"

namespace ccaps::eval {

Which parse_which(const std::string& s) {
  if (s == "recon") return Which::Recon;
  if (s == "canon") return Which::Canon;
  if (s == "register") return Which::Register;
  if (s == "cluster") return Which::Cluster;
  if (s == "all") return Which::All;
  throw ConfigError("--which: expected recon, canon, register, cluster or all, got '" + s + "'");
}

EvalSummary evaluate(const Canonicalizer& c, const data::Dataset& ds, Which which, const EvalOptions& opt) {
  EvalSummary s;
  const bool all = which == Which::All;
  if (all || which == Which::Recon) s.recon = evaluate_reconstruction(c, ds, opt);
  if (all || which == Which::Canon) {
    s.canon = evaluate_canon(c, ds, opt);
    s.one_shot = one_shot_baseline(c, ds, opt);
  }
  if (all || which == Which::Register) s.registration = evaluate_register(c, ds, opt);
  if (all || which == Which::Cluster) s.cluster = evaluate_cluster(c, ds, opt);
  return s;
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& text, std::vector<std::filesystem::path>& out) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write report " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
  out.push_back(path);
}

}  // namespace

std::vector<std::filesystem::path> write_reports(const std::filesystem::path& dir, const EvalSummary& s,
                                                 const data::Dataset& ds, const ReportContext& ctx) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  nlohmann::ordered_json j;
  j["config_hash"] = ctx.config_hash;
  j["seed"] = ctx.seed;
  j["checkpoint_epoch"] = ctx.checkpoint_epoch;
  j["split"] = ctx.split;
  j["instances"] = ds.clouds.size();

  if (s.recon) {
    std::ostringstream o;
    o << "class,count,cd_x1e3\n";
    for (std::size_t k = 0; k < s.recon->classes.size(); ++k)
      o << s.recon->classes[k] << ',' << s.recon->per_class_count[k] << ',' << num(s.recon->per_class_cd[k]) << '\n';
    o << "all," << ds.clouds.size() << ',' << num(s.recon->overall_cd) << '\n';
    write_file(dir / "recon.csv", o.str(), written);
    auto& r = j["recon"];
    r["cd_x1e3"] = s.recon->overall_cd;
    for (std::size_t k = 0; k < s.recon->classes.size(); ++k) r["per_class_cd_x1e3"][s.recon->classes[k]] = s.recon->per_class_cd[k];
  }
  if (s.canon) {
    std::ostringstream o;
    o << "# rotation spread in degrees (radians x 57.29578)\ninstance_id,class,std_deg";
    if (s.one_shot) o << ",one_shot_std_deg";
    o << '\n';
    for (std::size_t i = 0; i < s.canon->per_object_deg.size(); ++i) {
      o << ds.clouds[i].id << ',' << ds.classes[ds.class_index[i]] << ',' << num(s.canon->per_object_deg[i]);
      if (s.one_shot) o << ',' << num(s.one_shot->per_object_deg[i]);
      o << '\n';
    }
    write_file(dir / "canon.csv", o.str(), written);
    auto& c = j["canon"];
    c["mstd_deg"] = s.canon->mstd_deg;
    c["objects"] = s.canon->objects;
    c["rotations_per_object"] = s.canon->rotations_per_object;
    if (s.one_shot) c["one_shot_mstd_deg"] = s.one_shot->mstd_deg;
  }
  if (s.registration) {
    std::ostringstream o;
    o << "instance_id,class,rmse\n";
    for (std::size_t i = 0; i < s.registration->per_pair.size(); ++i)
      o << ds.clouds[i].id << ',' << ds.classes[ds.class_index[i]] << ',' << num(s.registration->per_pair[i]) << '\n';
    write_file(dir / "register.csv", o.str(), written);
    j["register"]["mean_rmse"] = s.registration->mean_rmse;
  }
  if (s.cluster) {
    std::ostringstream o;
    o << "instance_id,class,cluster,matched_class\n";
    for (std::size_t i = 0; i < s.cluster->assignment.size(); ++i) {
      const std::size_t m = s.cluster->cluster_to_class[s.cluster->assignment[i]];
      o << ds.clouds[i].id << ',' << ds.classes[ds.class_index[i]] << ',' << s.cluster->assignment[i] << ','
        << (m < ds.classes.size() ? ds.classes[m] : "none") << '\n';
    }
    write_file(dir / "cluster.csv", o.str(), written);
    j["cluster"]["accuracy"] = s.cluster->accuracy;
  }
  write_file(dir / "summary.json", j.dump(2) + "\n", written);
  return written;
}

}  // namespace ccaps::eval
