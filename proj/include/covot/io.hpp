#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "covot/flows.hpp"
#include "covot/measures.hpp"
#include "covot/moment_geodesics.hpp"
#include "covot/ot.hpp"
#include "covot/shape_geodesics.hpp"

namespace covot::io {

using nlohmann::json;

// JSON schemas:
//   measure  {"points": [[...],...], "weights": [...]}
//   gaussian {"mean": [...], "cov": [[...], ...]}
//   matrix   {"dim": d, "entries": [row-major flat]}
json to_json(const EmpiricalMeasure& mu);
EmpiricalMeasure measure_from_json(const json& j);
json to_json(const Gaussian& g);
Gaussian gaussian_from_json(const json& j);
json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const json& j);

std::string format_double(double v);

std::string plan_to_csv(const TransportPlan& plan);
std::string moment_curve_to_csv(const MomentCurve& curve);
std::string flow_trace_to_csv(const FlowTrace& trace, const DecayReport& report);
std::string trajectories_to_csv(const TrajectoryFamily& fam,
                                const std::vector<double>& s_samples);

/// FNV-1a content hash, hex encoded; used for output manifests.
std::string fnv1a64_hex(const std::string& data);

/// Collects written files and their hashes into a manifest JSON.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path out_dir);
  void write_text(const std::string& name, const std::string& content);
  void write_json(const std::string& name, const json& j);
  /// Writes manifest.json listing every artifact with its hash.
  void finalize(const json& run_info);

 private:
  std::filesystem::path dir_;
  json files_ = json::array();
};

}  // namespace covot::io
