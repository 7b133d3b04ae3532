#include "gbvi/harness.hpp"
#include "gbvi/version.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using nlohmann::json;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw gbvi::ConfigError("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

int do_run(const std::string& config_path, const std::string& out_dir,
           std::int64_t seed_override, int threads) {
  gbvi::ExperimentConfig config = gbvi::load_config(config_path);
  if (!out_dir.empty()) {
    config.output_dir = out_dir;
  } else if (config.output_dir.empty()) {
    if (const char* env = std::getenv("GBVI_OUTPUT_DIR")) config.output_dir = env;
  }
  if (seed_override >= 0) {
    config.optimizer.seed = static_cast<std::uint64_t>(seed_override);
  }
  const json summary = gbvi::run_experiment(config, threads);
  if (summary.contains("error")) {
    std::cerr << "run failed: " << summary["error"].get<std::string>() << "\n";
    return 1;
  }
  std::cout << "model: " << summary["model"]["kind"].get<std::string>() << " (dim "
            << summary["model"]["dim"] << ")\n"
            << "optimizer: " << summary["optimizer"]["algorithm"].get<std::string>()
            << " + " << summary["optimizer"]["estimator"].get<std::string>()
            << ", T = " << summary["optimizer"]["iterations"]
            << ", replications = " << summary["replications"] << "\n";
  if (summary.contains("dist_sq_to_ref")) {
    const auto& mean = summary["dist_sq_to_ref"]["mean"];
    std::cout << "mean squared distance to reference: " << mean.front().get<double>()
              << " -> " << mean.back().get<double>() << "\n";
  }
  if (summary.contains("envelope")) {
    std::cout << "envelope: " << summary["envelope"]["description"].get<std::string>()
              << "\n";
  }
  const auto& final_block = summary["final"];
  if (final_block.contains("averaged_elbo")) {
    std::cout << "final objective (averaged iterate): "
              << final_block["averaged_elbo"]["value"].get<double>() << " +/- "
              << final_block["averaged_elbo"]["mc_std_error"].get<double>() << "\n";
  }
  if (!summary["diverged_replications"].empty()) {
    std::cout << "diverged replications: " << summary["diverged_replications"].dump()
              << "\n";
  }
  if (!config.output_dir.empty()) {
    std::cout << "outputs in " << config.output_dir.string() << "\n";
  }
  return 0;
}

int do_check_bounds(const std::string& config_path, int threads) {
  gbvi::ExperimentConfig config = gbvi::load_config(config_path);
  const gbvi::BoundsReport report = gbvi::check_bounds(config, threads);
  const json rj = report.to_json();
  std::cout << "estimator: " << rj["estimator"].get<std::string>()
            << "  bound: " << report.quadratic << " * dist^2 + " << report.offset
            << (report.reference_exact ? "  (exact reference)"
                                       : "  (approximate reference, 1.1x slack)")
            << "\n";
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < report.points.size(); ++i) {
    const auto& p = report.points[i];
    worst = std::min(worst, p.margin);
    std::cout << "  point " << i << ": dist^2 = " << p.dist_sq
              << ", measured = " << p.measured << " +/- " << p.std_error
              << ", bound = " << p.bound << ", margin = " << p.margin << " "
              << (p.pass ? "ok" : "VIOLATED") << "\n";
  }
  std::cout << (report.pass ? "PASS" : "FAIL") << " (" << report.points.size()
            << " points, worst margin " << worst << ")\n";
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    std::ofstream out(config.output_dir / "bounds_report.json");
    out << rj.dump(2) << '\n';
  }
  return report.pass ? 0 : 1;
}

int do_rates(const std::vector<std::string>& summary_paths,
             const std::vector<std::string>& baseline_paths, const std::string& metric) {
  std::vector<json> summaries;
  for (const auto& path : summary_paths) summaries.push_back(read_json_file(path));
  std::vector<json> baseline;
  for (const auto& path : baseline_paths) baseline.push_back(read_json_file(path));
  const gbvi::RateFit fit = gbvi::fit_rate_from_summaries(summaries, metric, baseline);
  std::cout << "points: " << fit.points << "\n";
  if (metric == "gap") {
    std::cout << "gap convention: objective relative to the best observed value\n";
  }
  std::cout << "slope of log(" << metric << ") vs log(T): " << fit.slope << " +/- "
            << fit.slope_std_error << "\n"
            << "95% interval: [" << fit.conf_low << ", " << fit.conf_high << "]\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box variational inference with dense Gaussian families:\n"
               "provably convergent proximal/projected SGD, noise-bound checks,\n"
               "and convergence-rate verification."};
  app.set_version_flag("--version", std::string("gbvi ") + gbvi::kVersion);
  app.require_subcommand(0, 1);
  app.fallthrough();  // global options may follow a subcommand

  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = all hardware threads)");

  std::string run_config, out_dir;
  std::int64_t seed_override = -1;
  auto* run_cmd = app.add_subcommand("run", "run an experiment from a JSON config");
  run_cmd->add_option("config", run_config, "experiment config (JSON)")->required();
  run_cmd->add_option("--out", out_dir,
                      "output directory (default: config, then $GBVI_OUTPUT_DIR)");
  run_cmd->add_option("--seed", seed_override, "override the base seed");

  std::string bounds_config;
  auto* bounds_cmd = app.add_subcommand(
      "check-bounds", "verify the estimator noise bound on a parameter grid");
  bounds_cmd->add_option("config", bounds_config, "experiment config (JSON)")
      ->required();

  std::vector<std::string> summary_paths, baseline_paths;
  std::string metric = "dist";
  auto* rates_cmd =
      app.add_subcommand("rates", "fit a log-log convergence rate across summaries");
  rates_cmd->add_option("summaries", summary_paths, "summary.json files")
      ->required()
      ->expected(-1);
  rates_cmd->add_option("--metric", metric, "dist (squared distance) or gap")
      ->check(CLI::IsMember({"dist", "gap"}));
  rates_cmd->add_option("--baseline", baseline_paths,
                        "extra summaries anchoring the best observed objective");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run_cmd) return do_run(run_config, out_dir, seed_override, threads);
    if (*bounds_cmd) return do_check_bounds(bounds_config, threads);
    if (*rates_cmd) return do_rates(summary_paths, baseline_paths, metric);
    std::cout << app.help();
    return 0;
  } catch (const gbvi::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
