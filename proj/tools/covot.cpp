// Command-line front end: parses problem descriptions, dispatches to the
// solvers, and emits CSV/JSON artifacts plus a hashed manifest.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "covot/io.hpp"
#include "covot/rng.hpp"

namespace {

using covot::io::json;

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  json j;
  f >> j;
  return j;
}

std::vector<double> default_s_samples() {
  std::vector<double> s;
  for (int k = 0; k <= 10; ++k) s.push_back(k / 10.0);
  return s;
}

struct CommonOpts {
  std::string out_dir = "out";
  double tol = 1e-10;
  int grid = 2000;
  double horizon = 5.0;
  double dt = 0.005;
  std::uint64_t seed = 1;
  double damping = 0.5;
  int max_iter = 200;
  std::string format = "csv";
};

int run_w2(const std::string& mu0_path, const std::string& mu1_path, bool gaussian,
           const std::string& weight_path, const CommonOpts& opts) {
  covot::io::ArtifactWriter writer(opts.out_dir);
  json info{{"command", "w2"}, {"converged", true}};
  if (gaussian) {
    const covot::Gaussian g0 = covot::io::gaussian_from_json(load_json(mu0_path));
    const covot::Gaussian g1 = covot::io::gaussian_from_json(load_json(mu1_path));
    std::optional<covot::SpdMatrix> weight;
    if (!weight_path.empty())
      weight = covot::SpdMatrix(covot::io::matrix_from_json(load_json(weight_path)));
    const double cost = covot::gaussian_w2_sq(g0, g1, weight);
    writer.write_json("result.json", {{"cost", cost}});
  } else {
    const auto mu0 = covot::io::measure_from_json(load_json(mu0_path));
    const auto mu1 = covot::io::measure_from_json(load_json(mu1_path));
    const auto plan = covot::solve_w2(mu0, mu1);
    writer.write_text("plan.csv", covot::io::plan_to_csv(plan));
    writer.write_json("result.json", {{"cost", plan.cost},
                                      {"degenerate_optimum", plan.degenerate_optimum}});
  }
  writer.finalize(info);
  return 0;
}

int run_moments(const std::string& spec_path, const CommonOpts& opts) {
  covot::io::ArtifactWriter writer(opts.out_dir);
  const json spec = load_json(spec_path);
  const std::string type = spec.at("type").get<std::string>();
  json result{{"type", type}};
  bool converged = true;

  if (type == "variance") {
    const auto res = covot::solve_variance_moments(
        covot::io::vector_from_json(spec.at("m0")), covot::io::vector_from_json(spec.at("m1")),
        spec.at("sigma0").get<double>(), spec.at("sigma1").get<double>());
    result["dist_sq"] = res.sol.dist_sq;
    result["beta"] = res.sol.beta;
    result["t0"] = res.sol.t0;
    std::ostringstream os;
    os << "t,sigma";
    for (int k = 0; k < res.means.cols(); ++k) os << ",m_" << k;
    os << "\n";
    for (int k = 0; k < res.times.size(); ++k) {
      os << covot::io::format_double(res.times(k)) << ","
         << covot::io::format_double(res.sigmas(k));
      for (int i = 0; i < res.means.cols(); ++i)
        os << "," << covot::io::format_double(res.means(k, i));
      os << "\n";
    }
    writer.write_text("curve.csv", os.str());
  } else if (type == "diagonal") {
    const auto res = covot::solve_diagonal_moments(
        covot::io::vector_from_json(spec.at("m0")), covot::io::vector_from_json(spec.at("m1")),
        covot::io::vector_from_json(spec.at("lambda0")),
        covot::io::vector_from_json(spec.at("lambda1")), spec.at("axis").get<int>());
    result["dist_sq"] = res.dist_sq;
    writer.write_text("curve.csv", covot::io::moment_curve_to_csv(res.curve));
  } else if (type == "shoot") {
    std::optional<Eigen::MatrixXd> rotation;
    if (spec.contains("rotation"))
      rotation = covot::io::matrix_from_json(spec.at("rotation"));
    const auto res = covot::shoot_moment_geodesic(
        covot::io::vector_from_json(spec.at("m0")),
        covot::SpdMatrix(covot::io::matrix_from_json(spec.at("C0"))),
        covot::io::vector_from_json(spec.at("m1")),
        covot::SpdMatrix(covot::io::matrix_from_json(spec.at("C1"))), rotation,
        spec.value("tol", 1e-8));
    result["action"] = res.action;
    result["residual"] = res.residual;
    result["newton_iterations"] = res.newton_iterations;
    converged = res.converged;
    writer.write_text("curve.csv", covot::io::moment_curve_to_csv(res.curve));
  } else {
    throw covot::PreconditionError("moments: unknown problem type " + type);
  }
  result["converged"] = converged;
  writer.write_json("result.json", result);
  writer.finalize({{"command", "moments"}, {"converged", converged}});
  return converged ? 0 : 3;
}

int run_shape(const std::string& mu0_path, const std::string& mu1_path,
              const CommonOpts& opts) {
  covot::io::ArtifactWriter writer(opts.out_dir);
  const auto mu0 = covot::io::measure_from_json(load_json(mu0_path));
  const auto mu1 = covot::io::measure_from_json(load_json(mu1_path));
  try {
    const auto res = covot::fixed_point_omega(mu0, mu1, opts.tol, opts.max_iter, opts.damping);
    writer.write_json("omega.json", {{"omega", covot::io::vector_to_json(res.omega)},
                                     {"dist_sq", res.constrained_dist_sq},
                                     {"iterations", res.iterations},
                                     {"residual", res.residual}});
    const auto fam = covot::constrained_trajectories(res);
    writer.write_text("trajectories.csv",
                      covot::io::trajectories_to_csv(fam, default_s_samples()));
    writer.finalize({{"command", "shape"}, {"converged", true}});
  } catch (const covot::NoConvergenceError& e) {
    writer.write_json("omega.json", {{"error", e.name()},
                                     {"residual", e.residual},
                                     {"iterations", e.iterations}});
    writer.finalize({{"command", "shape"}, {"converged", false}, {"error", e.name()}});
    return 3;
  }
  return 0;
}

int run_split(const std::string& mu0_path, const std::string& mu1_path,
              const CommonOpts& opts) {
  covot::io::ArtifactWriter writer(opts.out_dir);
  const auto mu0 = covot::io::measure_from_json(load_json(mu0_path));
  const auto mu1 = covot::io::measure_from_json(load_json(mu1_path));
  const auto res =
      covot::modulated_distance_symmetric(mu0, mu1, opts.tol, opts.max_iter, opts.damping);
  writer.write_json("split.json", {{"total_sq", res.total_sq},
                                   {"shape_sq", res.shape_sq},
                                   {"moment_sq", res.moment_sq},
                                   {"omega", covot::io::vector_to_json(res.shape.omega)}});
  writer.finalize({{"command", "split"}, {"converged", true}});
  return 0;
}

covot::FlowTrace compute_flow(const json& spec, const CommonOpts& opts,
                              covot::QuadraticTarget* target_out) {
  const std::string kind = spec.value("kind", "covariance");
  const covot::QuadraticTarget target{
      covot::io::vector_from_json(spec.at("x0")),
      covot::SpdMatrix(covot::io::matrix_from_json(spec.at("B")))};
  *target_out = target;
  const Eigen::VectorXd m0 = covot::io::vector_from_json(spec.at("m0"));
  const covot::SpdMatrix c0(covot::io::matrix_from_json(spec.at("C0")));
  if (kind == "variance")
    return covot::variance_moment_flow(m0, c0, target, opts.horizon, opts.grid);
  return covot::covariance_moment_flow(m0, c0, target, opts.horizon, opts.grid);
}

int run_flow(const std::string& spec_path, const CommonOpts& opts, bool with_report) {
  covot::io::ArtifactWriter writer(opts.out_dir);
  const json spec = load_json(spec_path);
  covot::QuadraticTarget target{Eigen::VectorXd(), covot::SpdMatrix::identity(1)};
  const auto trace = compute_flow(spec, opts, &target);
  std::optional<covot::Gaussian> shape0;
  if (spec.contains("shape0")) shape0 = covot::io::gaussian_from_json(spec.at("shape0"));
  const auto report = covot::decay_report(trace, shape0, target);
  writer.write_text("trace.csv", covot::io::flow_trace_to_csv(trace, report));

  json decay{{"lambda", report.lambda_cond},
             {"kappa", report.kappa},
             {"lambda_var", report.lambda_var},
             {"all_bounds_hold", report.all_bounds_hold},
             {"mean_decay_residual", report.mean_decay_residual}};
  if (trace.kind == covot::FlowKind::covariance)
    decay["max_closed_form_deviation"] = trace.max_closed_dev;
  else
    decay["reparametrization_residual"] = trace.reparam_residual;
  writer.write_json("decay.json", decay);

  if (with_report) {
    std::ostringstream os;
    os << "t,rel_entropy,fisher_cov,w2,entropy_ok,fisher_ok,w2_ok\n";
    for (const auto& row : report.rows)
      os << covot::io::format_double(row.t) << ","
         << covot::io::format_double(row.rel_entropy) << ","
         << covot::io::format_double(row.fisher_cov) << ","
         << covot::io::format_double(row.w2) << "," << (row.entropy_ok ? 1 : 0) << ","
         << (row.fisher_ok ? 1 : 0) << "," << (row.w2_ok ? 1 : 0) << "\n";
    writer.write_text("report.csv", os.str());
  }
  writer.finalize({{"command", with_report ? "report" : "flow"}, {"converged", true}});
  return 0;
}

int run_eks(const std::string& spec_path, const CommonOpts& opts) {
  covot::io::ArtifactWriter writer(opts.out_dir);
  const json spec = load_json(spec_path);

  covot::ParticleEnsemble ensemble{Eigen::MatrixXd()};
  if (spec.contains("initial")) {
    const auto& rows = spec.at("initial");
    ensemble.positions.resize(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i)
      ensemble.positions.row(static_cast<int>(i)) =
          covot::io::vector_from_json(rows[i]).transpose();
  } else {
    const auto& gen = spec.at("generate");
    const int j_count = gen.at("j").get<int>();
    const Eigen::VectorXd mean = covot::io::vector_from_json(gen.at("mean"));
    const covot::SpdMatrix cov(covot::io::matrix_from_json(gen.at("cov")));
    const Eigen::MatrixXd root = cov.sqrt().mat();
    const int d = static_cast<int>(mean.size());
    ensemble.positions.resize(j_count, d);
    for (int j = 0; j < j_count; ++j) {
      Eigen::VectorXd xi(d);
      for (int k = 0; k < d; ++k) xi(k) = covot::rng::normal(opts.seed, 0, 1000000 + j, k);
      ensemble.positions.row(j) = (mean + root * xi).transpose();
    }
  }

  covot::EksModel model = covot::QuadraticTarget{Eigen::VectorXd(), covot::SpdMatrix::identity(1)};
  if (spec.contains("target")) {
    model = covot::QuadraticTarget{
        covot::io::vector_from_json(spec.at("target").at("x0")),
        covot::SpdMatrix(covot::io::matrix_from_json(spec.at("target").at("B")))};
  } else {
    const auto& lin = spec.at("linear");
    model = covot::LinearForward{covot::io::matrix_from_json(lin.at("A")),
                                 covot::io::vector_from_json(lin.at("y")),
                                 covot::io::matrix_from_json(lin.at("gamma_inv")),
                                 covot::io::matrix_from_json(lin.at("sigma_inv"))};
  }

  covot::EksOptions eks_opts;
  if (spec.contains("snapshots"))
    for (const auto& t : spec.at("snapshots")) eks_opts.snapshot_times.push_back(t.get<double>());
  else
    eks_opts.snapshot_times = {opts.horizon};
  eks_opts.compare_drift_forms = spec.value("compare_drifts", false);

  const auto res = covot::eks_simulate(ensemble, model, opts.horizon, opts.dt, opts.seed,
                                       eks_opts);

  std::ostringstream os;
  os << "t";
  const int d = static_cast<int>(ensemble.positions.cols());
  for (int k = 0; k < d; ++k) os << ",mean_" << k;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) os << ",C_" << i << j;
  os << "\n";
  for (size_t q = 0; q < res.snapshot_times.size(); ++q) {
    os << covot::io::format_double(res.snapshot_times[q]);
    for (int k = 0; k < d; ++k)
      os << "," << covot::io::format_double(res.snapshot_means[q](k));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        os << "," << covot::io::format_double(res.snapshot_covs[q](i, j));
    os << "\n";
  }
  writer.write_text("moments.csv", os.str());

  for (size_t q = 0; q < res.snapshots.size(); ++q) {
    std::ostringstream snap;
    for (int i = 0; i < res.snapshots[q].rows(); ++i) {
      for (int k = 0; k < d; ++k) {
        if (k) snap << ",";
        snap << covot::io::format_double(res.snapshots[q](i, k));
      }
      snap << "\n";
    }
    writer.write_text("ensemble_" + std::to_string(q) + ".csv", snap.str());
  }

  writer.write_json("sidecar.json",
                    {{"seed", opts.seed},
                     {"dt", opts.dt},
                     {"horizon", opts.horizon},
                     {"max_drift_mismatch", res.max_drift_mismatch},
                     {"degenerate_seen", res.degenerate_seen},
                     {"min_stability_gap", res.min_stability_gap}});
  writer.finalize({{"command", "eks"}, {"converged", true}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covot: covariance-modulated optimal transport toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string mu0_path, mu1_path, spec_path, weight_path;
  bool gaussian = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--tol", opts.tol, "solver tolerance");
    cmd->add_option("--grid", opts.grid, "grid size / steps");
    cmd->add_option("--horizon", opts.horizon, "time horizon T");
    cmd->add_option("--dt", opts.dt, "time step");
    cmd->add_option("--seed", opts.seed, "random seed");
    cmd->add_option("--damping", opts.damping, "fixed point damping");
    cmd->add_option("--max-iter", opts.max_iter, "iteration cap");
    cmd->add_option("--format", opts.format, "output format (csv,json)");
  };

  auto* w2 = app.add_subcommand("w2", "discrete or Gaussian optimal transport");
  w2->add_option("--mu0", mu0_path)->required();
  w2->add_option("--mu1", mu1_path)->required();
  w2->add_flag("--gaussian", gaussian, "treat inputs as Gaussian JSON");
  w2->add_option("--weight", weight_path, "weight matrix for Gaussian W2");
  add_common(w2);

  auto* moments = app.add_subcommand("moments", "moment geodesics");
  moments->add_option("--spec", spec_path)->required();
  add_common(moments);

  auto* shape = app.add_subcommand("shape", "omega fixed point");
  shape->add_option("--mu0", mu0_path)->required();
  shape->add_option("--mu1", mu1_path)->required();
  add_common(shape);

  auto* split = app.add_subcommand("split", "modulated distance splitting");
  split->add_option("--mu0", mu0_path)->required();
  split->add_option("--mu1", mu1_path)->required();
  add_common(split);

  auto* flow = app.add_subcommand("flow", "moment flow with decay diagnostics");
  flow->add_option("--spec", spec_path)->required();
  add_common(flow);

  auto* report = app.add_subcommand("report", "bound verification tables");
  report->add_option("--spec", spec_path)->required();
  add_common(report);

  auto* eks = app.add_subcommand("eks", "ensemble Kalman sampler run");
  eks->add_option("--spec", spec_path)->required();
  add_common(eks);

  CLI11_PARSE(app, argc, argv);

  try {
    if (w2->parsed()) return run_w2(mu0_path, mu1_path, gaussian, weight_path, opts);
    if (moments->parsed()) return run_moments(spec_path, opts);
    if (shape->parsed()) return run_shape(mu0_path, mu1_path, opts);
    if (split->parsed()) return run_split(mu0_path, mu1_path, opts);
    if (flow->parsed()) return run_flow(spec_path, opts, false);
    if (report->parsed()) return run_flow(spec_path, opts, true);
    if (eks->parsed()) return run_eks(spec_path, opts);
  } catch (const covot::NoConvergenceError& e) {
    covot::io::ArtifactWriter writer(opts.out_dir);
    writer.finalize({{"converged", false}, {"error", e.name()}, {"what", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const covot::Error& e) {
    covot::io::ArtifactWriter writer(opts.out_dir);
    writer.finalize({{"converged", false}, {"error", e.name()}, {"what", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
