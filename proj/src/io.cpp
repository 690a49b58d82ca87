#include "covot/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace covot::io {

namespace {

json vec_to_array(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd array_to_vec(const json& a) {
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v(static_cast<int>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

json to_json(const EmpiricalMeasure& mu) {
  json pts = json::array();
  for (int i = 0; i < mu.size(); ++i) pts.push_back(vec_to_array(mu.point(i)));
  return {{"points", pts}, {"weights", vec_to_array(mu.weights())}};
}

EmpiricalMeasure measure_from_json(const json& j) {
  const auto& pts = j.at("points");
  const auto& w = j.at("weights");
  if (pts.empty()) throw PreconditionError("measure JSON: empty points");
  const int n = static_cast<int>(pts.size());
  const int d = static_cast<int>(pts[0].size());
  Eigen::MatrixXd points(n, d);
  for (int i = 0; i < n; ++i) points.row(i) = array_to_vec(pts[i]).transpose();
  return EmpiricalMeasure(points, array_to_vec(w));
}

json to_json(const Gaussian& g) {
  json cov = json::array();
  for (int i = 0; i < g.cov.dim(); ++i)
    cov.push_back(vec_to_array(g.cov.mat().row(i).transpose()));
  return {{"mean", vec_to_array(g.mean)}, {"cov", cov}};
}

Gaussian gaussian_from_json(const json& j) {
  const Eigen::VectorXd mean = array_to_vec(j.at("mean"));
  const auto& rows = j.at("cov");
  const int d = static_cast<int>(rows.size());
  Eigen::MatrixXd cov(d, d);
  for (int i = 0; i < d; ++i) cov.row(i) = array_to_vec(rows[i]).transpose();
  return {mean, SpdMatrix(cov)};
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json entries = json::array();
  for (int i = 0; i < m.rows(); ++i)
    for (int j2 = 0; j2 < m.cols(); ++j2) entries.push_back(m(i, j2));
  return {{"dim", m.rows()}, {"entries", entries}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const int d = j.at("dim").get<int>();
  const auto& entries = j.at("entries");
  if (static_cast<int>(entries.size()) != d * d)
    throw PreconditionError("matrix JSON: entries size does not match dim^2");
  Eigen::MatrixXd m(d, d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) m(i, k) = entries[i * d + k].get<double>();
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) { return vec_to_array(v); }

Eigen::VectorXd vector_from_json(const json& j) { return array_to_vec(j); }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string plan_to_csv(const TransportPlan& plan) {
  std::ostringstream os;
  os << "i,j,mass\n";
  for (const auto& e : plan.coupling)
    os << e.i << "," << e.j << "," << format_double(e.mass) << "\n";
  return os.str();
}

std::string moment_curve_to_csv(const MomentCurve& curve) {
  const int d = curve.dim();
  std::ostringstream os;
  os << "t";
  for (int k = 0; k < d; ++k) os << ",m_" << k;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) os << ",C_" << i << j;
  os << ",action_density\n";

  // discrete action density <mdot, C^{-1} mdot> + 1/4 tr(Cdot C^{-1})^2
  Eigen::MatrixXd c_flat(curve.size(), d * d);
  for (int k = 0; k < curve.size(); ++k)
    c_flat.row(k) = covot::flatten_matrix(curve.covs[k].mat()).transpose();
  const Eigen::MatrixXd mdot = sampled_derivative(curve.times, curve.means);
  const Eigen::MatrixXd cdot = sampled_derivative(curve.times, c_flat);

  for (int k = 0; k < curve.size(); ++k) {
    os << format_double(curve.times(k));
    for (int i = 0; i < d; ++i) os << "," << format_double(curve.means(k, i));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) os << "," << format_double(curve.covs[k](i, j));
    const Eigen::MatrixXd cinv = curve.covs[k].inverse().mat();
    const Eigen::VectorXd md = mdot.row(k).transpose();
    const Eigen::MatrixXd cd = covot::unflatten_row(cdot, k, d);
    const double density = md.dot(cinv * md) + 0.25 * (cd * cinv * cd * cinv).trace();
    os << "," << format_double(density) << "\n";
  }
  return os.str();
}

std::string flow_trace_to_csv(const FlowTrace& trace, const DecayReport& report) {
  const int d = static_cast<int>(trace.means.cols());
  std::ostringstream os;
  os << "t";
  for (int k = 0; k < d; ++k) os << ",m_" << k;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) os << ",C_" << i << j;
  os << ",rel_entropy,fisher_cov,w2,w2_weighted,mean_decay\n";
  for (int k = 0; k < trace.times.size(); ++k) {
    os << format_double(trace.times(k));
    for (int i = 0; i < d; ++i) os << "," << format_double(trace.means(k, i));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) os << "," << format_double(trace.covs[k](i, j));
    const auto& row = report.rows[k];
    os << "," << format_double(row.rel_entropy) << "," << format_double(row.fisher_cov)
       << "," << format_double(row.w2) << "," << format_double(row.w2_weighted) << ","
       << format_double(row.mean_decay) << "\n";
  }
  return os.str();
}

std::string trajectories_to_csv(const TrajectoryFamily& fam,
                                const std::vector<double>& s_samples) {
  std::ostringstream os;
  os << "pair_id,s";
  for (int k = 0; k < fam.start_points.cols(); ++k) os << ",x_" << k;
  os << "\n";
  for (int p = 0; p < fam.pairs(); ++p)
    for (double s : s_samples) {
      const Eigen::VectorXd g = fam.sampler(p, s);
      os << p << "," << format_double(s);
      for (int k = 0; k < g.size(); ++k) os << "," << format_double(g(k));
      os << "\n";
    }
  return os.str();
}

std::string fnv1a64_hex(const std::string& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ArtifactWriter::ArtifactWriter(std::filesystem::path out_dir) : dir_(std::move(out_dir)) {
  std::filesystem::create_directories(dir_);
}

void ArtifactWriter::write_text(const std::string& name, const std::string& content) {
  std::ofstream f(dir_ / name, std::ios::binary);
  f << content;
  files_.push_back({{"path", name}, {"hash", fnv1a64_hex(content)}});
}

void ArtifactWriter::write_json(const std::string& name, const json& j) {
  write_text(name, j.dump(2) + "\n");
}

void ArtifactWriter::finalize(const json& run_info) {
  json manifest = run_info;
  manifest["files"] = files_;
  std::ofstream f(dir_ / "manifest.json", std::ios::binary);
  f << manifest.dump(2) << "\n";
}

}  // namespace covot::io
