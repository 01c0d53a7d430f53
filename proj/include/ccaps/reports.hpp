#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccaps/evaluation.hpp"

namespace ccaps::eval {

enum class Which { Recon, Canon, Register, Cluster, All };
Which parse_which(const std::string& s);

struct EvalSummary {
  std::optional<ReconstructionReport> recon;
  std::optional<CanonStabilityReport> canon;
  std::optional<CanonStabilityReport> one_shot;
  std::optional<RegistrationReport> registration;
  std::optional<ClusterReport> cluster;
};

/// Runs the selected protocols on one split.
EvalSummary evaluate(const Canonicalizer& c, const data::Dataset& ds, Which which, const EvalOptions& opt);

struct ReportContext {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t checkpoint_epoch = 0;
  std::string split;
};

/// recon.csv, canon.csv, register.csv and cluster.csv for whatever was run,
/// plus summary.json with every scalar. Returns the written paths.
std::vector<std::filesystem::path> write_reports(const std::filesystem::path& dir, const EvalSummary& s,
                                                 const data::Dataset& ds, const ReportContext& ctx);

}  // namespace ccaps::eval
