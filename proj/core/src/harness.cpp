#include "gbvi/harness.hpp"

#include "gbvi/gaussian_family.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

namespace gbvi {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// json helpers: strict key checking and typed extraction.

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

const json& require_key(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where + ": missing key '" + key + "'");
  return *it;
}

double as_number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  return j.get<double>();
}

std::int64_t as_integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return j.get<std::int64_t>();
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = as_number(j[i], where);
  return v;
}

// Either a full matrix (array of rows) or a scalar c meaning c * identity.
Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index dim,
                                 const std::string& where) {
  if (j.is_number()) {
    return j.get<double>() * Eigen::MatrixXd::Identity(dim, dim);
  }
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::MatrixXd m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array()) throw ConfigError(where + ": expected a matrix");
    if (r == 0) m.resize(rows, static_cast<Eigen::Index>(row.size()));
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
      throw ConfigError(where + ": ragged matrix");
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = as_number(row[static_cast<std::size_t>(c)], where);
    }
  }
  if (dim > 0 && (m.rows() != dim || m.cols() != dim)) {
    throw ConfigError(where + ": matrix must be " + std::to_string(dim) + "x" +
                      std::to_string(dim));
  }
  return m;
}

// ---------------------------------------------------------------------------
// number formatting: shortest round-trip decimals.

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// synthetic data

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, double scale,
                              RngStream& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * rng.next_gaussian();
  return m;
}

struct RegressionData {
  Eigen::MatrixXd design;  // d x N, columns are data points
  Eigen::VectorXd labels;
};

RegressionData synthesize_linear(Eigen::Index dim, Eigen::Index count, double scale,
                                 double noise_sigma, std::uint64_t seed) {
  RngStream rng(seed, 0x11);
  RegressionData data;
  data.design = random_matrix(dim, count, scale, rng);
  const Eigen::VectorXd truth = rng.next_gaussian_vector(dim);
  data.labels = data.design.transpose() * truth +
                noise_sigma * rng.next_gaussian_vector(count);
  return data;
}

RegressionData synthesize_logistic(Eigen::Index dim, Eigen::Index count, double scale,
                                   std::uint64_t seed) {
  RngStream rng(seed, 0x12);
  RegressionData data;
  data.design = random_matrix(dim, count, scale, rng);
  const Eigen::VectorXd truth = rng.next_gaussian_vector(dim);
  data.labels.resize(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-data.design.col(i).dot(truth)));
    data.labels[i] = rng.next_uniform() < p ? 1.0 : -1.0;
  }
  return data;
}

struct HierarchicalData {
  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> labels;
};

HierarchicalData synthesize_hierarchical(Eigen::Index theta_dim, int groups,
                                         int obs_per_group, double scale,
                                         const Eigen::MatrixXd& sigma,
                                         const Eigen::MatrixXd& delta,
                                         std::uint64_t seed) {
  RngStream rng(seed, 0x13);
  const Eigen::LLT<Eigen::MatrixXd> sigma_llt(sigma);
  const Eigen::LLT<Eigen::MatrixXd> delta_llt(delta);
  const Eigen::VectorXd theta =
      Eigen::MatrixXd(sigma_llt.matrixL()) * rng.next_gaussian_vector(theta_dim);
  HierarchicalData data;
  for (int i = 0; i < groups; ++i) {
    const Eigen::VectorXd z =
        theta + Eigen::MatrixXd(delta_llt.matrixL()) * rng.next_gaussian_vector(theta_dim);
    Eigen::MatrixXd design = random_matrix(theta_dim, obs_per_group, scale, rng);
    Eigen::VectorXd labels(obs_per_group);
    for (int j = 0; j < obs_per_group; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-design.col(j).dot(z)));
      labels[j] = rng.next_uniform() < p ? 1.0 : -1.0;
    }
    data.designs.push_back(std::move(design));
    data.labels.push_back(std::move(labels));
  }
  return data;
}

// ---------------------------------------------------------------------------
// model building

RegressionData regression_data_from_config(const json& m, const std::filesystem::path& base,
                                           const std::string& where) {
  if (m.contains("synthetic")) {
    const json& syn = m["synthetic"];
    check_keys(syn, {"dim", "count", "seed", "design_scale", "noise_sigma"},
               where + ".synthetic");
    const Eigen::Index dim = as_integer(require_key(syn, "dim", where), where);
    const Eigen::Index count = as_integer(require_key(syn, "count", where), where);
    const double scale =
        syn.contains("design_scale") ? as_number(syn["design_scale"], where) : 1.0;
    const std::uint64_t seed = static_cast<std::uint64_t>(
        syn.contains("seed") ? as_integer(syn["seed"], where) : 0);
    if (m["kind"] == "linear_regression") {
      const double noise =
          syn.contains("noise_sigma") ? as_number(syn["noise_sigma"], where) : 1.0;
      return synthesize_linear(dim, count, scale, noise, seed);
    }
    return synthesize_logistic(dim, count, scale, seed);
  }
  const std::string design_path =
      require_key(m, "design_csv", where).get<std::string>();
  const std::string labels_path =
      require_key(m, "labels_csv", where).get<std::string>();
  RegressionData data;
  data.design = load_csv_matrix(base / design_path);
  Eigen::MatrixXd labels = load_csv_matrix(base / labels_path);
  if (labels.rows() != 1 && labels.cols() != 1) {
    throw ConfigError(where + ": labels CSV must be a single row or column");
  }
  data.labels = labels.rows() == 1 ? Eigen::VectorXd(labels.transpose().col(0))
                                   : Eigen::VectorXd(labels.col(0));
  return data;
}

TargetModel build_model(const json& m, const std::filesystem::path& base,
                        std::string* kind_out) {
  const std::string where = "model";
  const std::string kind = require_key(m, "kind", where).get<std::string>();
  *kind_out = kind;
  if (kind == "gaussian") {
    check_keys(m, {"kind", "mean", "covariance"}, where);
    const Eigen::VectorXd mean = vector_from_json(require_key(m, "mean", where), where);
    const Eigen::MatrixXd cov =
        matrix_from_json(require_key(m, "covariance", where), mean.size(), where);
    return gaussian_target(mean, cov);
  }
  if (kind == "linear_regression") {
    check_keys(m, {"kind", "design_csv", "labels_csv", "synthetic", "noise_sigma",
                   "prior_covariance"},
               where);
    RegressionData data = regression_data_from_config(m, base, where);
    const double noise = as_number(require_key(m, "noise_sigma", where), where);
    const Eigen::MatrixXd prior =
        m.contains("prior_covariance")
            ? matrix_from_json(m["prior_covariance"], data.design.rows(), where)
            : Eigen::MatrixXd::Identity(data.design.rows(), data.design.rows());
    return linear_regression_target(data.design, data.labels, noise, prior);
  }
  if (kind == "logistic_regression") {
    check_keys(m, {"kind", "design_csv", "labels_csv", "synthetic", "prior_covariance"},
               where);
    RegressionData data = regression_data_from_config(m, base, where);
    const Eigen::MatrixXd prior =
        m.contains("prior_covariance")
            ? matrix_from_json(m["prior_covariance"], data.design.rows(), where)
            : Eigen::MatrixXd::Identity(data.design.rows(), data.design.rows());
    return logistic_regression_target(data.design, data.labels, prior);
  }
  if (kind == "hierarchical_logistic") {
    check_keys(m, {"kind", "theta_dim", "sigma", "delta", "synthetic", "design_csv",
                   "labels_csv", "obs_per_group"},
               where);
    const Eigen::Index theta_dim =
        as_integer(require_key(m, "theta_dim", where), where);
    const Eigen::MatrixXd sigma =
        m.contains("sigma") ? matrix_from_json(m["sigma"], theta_dim, where)
                            : Eigen::MatrixXd::Identity(theta_dim, theta_dim);
    const Eigen::MatrixXd delta =
        m.contains("delta") ? matrix_from_json(m["delta"], theta_dim, where)
                            : Eigen::MatrixXd::Identity(theta_dim, theta_dim);
    HierarchicalData data;
    if (m.contains("synthetic")) {
      const json& syn = m["synthetic"];
      check_keys(syn, {"groups", "obs_per_group", "seed", "design_scale"},
                 where + ".synthetic");
      const int groups = static_cast<int>(as_integer(require_key(syn, "groups", where), where));
      const int obs = static_cast<int>(
          as_integer(require_key(syn, "obs_per_group", where), where));
      const double scale =
          syn.contains("design_scale") ? as_number(syn["design_scale"], where) : 1.0;
      const std::uint64_t seed = static_cast<std::uint64_t>(
          syn.contains("seed") ? as_integer(syn["seed"], where) : 0);
      data = synthesize_hierarchical(theta_dim, groups, obs, scale, sigma, delta, seed);
    } else {
      const int obs = static_cast<int>(
          as_integer(require_key(m, "obs_per_group", where), where));
      Eigen::MatrixXd design =
          load_csv_matrix(base / require_key(m, "design_csv", where).get<std::string>());
      Eigen::MatrixXd labels =
          load_csv_matrix(base / require_key(m, "labels_csv", where).get<std::string>());
      Eigen::VectorXd flat =
          labels.rows() == 1 ? Eigen::VectorXd(labels.transpose().col(0))
                             : Eigen::VectorXd(labels.col(0));
      if (design.cols() != flat.size() || design.cols() % obs != 0) {
        throw ConfigError(where + ": design/labels do not split into equal groups");
      }
      for (Eigen::Index off = 0; off < design.cols(); off += obs) {
        data.designs.push_back(design.middleCols(off, obs));
        data.labels.push_back(flat.segment(off, obs));
      }
    }
    return hierarchical_logistic_target(theta_dim, data.designs, data.labels, sigma,
                                        delta);
  }
  throw ConfigError("model.kind '" + kind + "' is not recognized");
}

// ---------------------------------------------------------------------------
// config assembly

FactorSpace algorithm_space(Algorithm algorithm) {
  return algorithm == Algorithm::ProxSgd ? FactorSpace::LowerTriangular
                                         : FactorSpace::Symmetric;
}

double residual_smoothness_default(const std::string& model_kind, double smoothness) {
  return model_kind == "gaussian" ? 0.0 : 2.0 * smoothness;
}

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "energy") return EstimatorKind::Energy;
  if (s == "entropy") return EstimatorKind::Entropy;
  if (s == "stl") return EstimatorKind::Stl;
  throw ConfigError("optimizer.estimator must be energy, entropy or stl");
}

const char* estimator_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Energy: return "energy";
    case EstimatorKind::Entropy: return "entropy";
    case EstimatorKind::Stl: return "stl";
  }
  return "?";
}

const char* algorithm_name(Algorithm a) {
  return a == Algorithm::ProxSgd ? "prox_sgd" : "proj_sgd";
}

}  // namespace

std::string config_hash(const json& document) {
  const std::string text = document.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

Eigen::MatrixXd load_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      const char* begin = cell.data();
      const char* end = begin + cell.size();
      while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
      while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
      double value;
      const auto res = std::from_chars(begin, end, value);
      if (res.ec != std::errc() || res.ptr != end) {
        numeric = false;
        break;
      }
      row.push_back(value);
    }
    if (!numeric) {
      if (first) {  // header row
        first = false;
        continue;
      }
      throw std::runtime_error("non-numeric CSV cell in " + path.string());
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("ragged CSV rows in " + path.string());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty CSV file: " + path.string());
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

ExperimentConfig parse_config(const json& document, const std::filesystem::path& base_dir) {
  check_keys(document,
             {"model", "optimizer", "replications", "diagnostics", "output",
              "reference", "bounds_check"},
             "config");

  std::string model_kind;
  TargetModel model =
      build_model(require_key(document, "model", "config"), base_dir, &model_kind);

  const json& opt = require_key(document, "optimizer", "config");
  check_keys(opt,
             {"algorithm", "estimator", "schedule", "iterations", "seed", "minibatch",
              "averaging", "init"},
             "optimizer");

  OptimizerSpec spec;
  const std::string algorithm = require_key(opt, "algorithm", "optimizer").get<std::string>();
  if (algorithm == "prox_sgd") {
    spec.algorithm = Algorithm::ProxSgd;
  } else if (algorithm == "proj_sgd") {
    spec.algorithm = Algorithm::ProjSgd;
  } else {
    throw ConfigError("optimizer.algorithm must be prox_sgd or proj_sgd");
  }
  spec.estimator = parse_estimator(
      require_key(opt, "estimator", "optimizer").get<std::string>());
  spec.iterations = as_integer(require_key(opt, "iterations", "optimizer"), "optimizer");
  if (spec.iterations < 1) throw ConfigError("optimizer.iterations must be >= 1");
  spec.seed = static_cast<std::uint64_t>(
      opt.contains("seed") ? as_integer(opt["seed"], "optimizer") : 0);
  spec.minibatch = static_cast<int>(
      opt.contains("minibatch") ? as_integer(opt["minibatch"], "optimizer") : 1);
  if (spec.minibatch < 1) throw ConfigError("optimizer.minibatch must be >= 1");

  if (!model.constants().smoothness) {
    throw ConfigError("model carries no smoothness constant");
  }
  const double smoothness = *model.constants().smoothness;
  const double mu = model.constants().strong_concavity.value_or(0.0);
  if (spec.algorithm == Algorithm::ProjSgd) {
    spec.level = NonDegeneracyLevel{smoothness};
  }
  const double default_quadratic =
      bound_quadratic(spec.estimator, model.dim(), smoothness,
                      residual_smoothness_default(model_kind, smoothness));

  const json& sched = require_key(opt, "schedule", "optimizer");
  check_keys(sched, {"rule", "gamma", "mu", "noise_quadratic"}, "optimizer.schedule");
  const std::string rule = require_key(sched, "rule", "schedule").get<std::string>();
  const double sched_mu =
      sched.contains("mu") ? as_number(sched["mu"], "schedule") : mu;
  const double sched_a = sched.contains("noise_quadratic")
                             ? as_number(sched["noise_quadratic"], "schedule")
                             : default_quadratic;
  double resolved_gamma = 0.0;
  try {
    if (rule == "constant") {
      resolved_gamma = as_number(require_key(sched, "gamma", "schedule"), "schedule");
      spec.schedule = StepSchedule::constant(resolved_gamma);
    } else if (rule == "constant_for_horizon") {
      resolved_gamma =
          constant_stepsize_for_horizon(spec.algorithm, sched_a, spec.iterations);
      spec.schedule = StepSchedule::constant(resolved_gamma);
    } else if (rule == "constant_strong") {
      if (!(sched_mu > 0.0)) {
        throw ConfigError("constant_strong schedule needs strong concavity > 0");
      }
      const double cap =
          spec.algorithm == Algorithm::ProxSgd ? 1.0 / sched_mu : 2.0 / sched_mu;
      resolved_gamma = std::min(sched_mu / (2.0 * sched_a), cap);
      spec.schedule = StepSchedule::constant(resolved_gamma);
    } else if (rule == "decaying") {
      if (!(sched_mu > 0.0)) {
        throw ConfigError("decaying schedule needs strong concavity > 0");
      }
      spec.schedule = spec.algorithm == Algorithm::ProxSgd
                          ? StepSchedule::decaying_prox(sched_mu, sched_a)
                          : StepSchedule::decaying_proj(sched_mu, sched_a);
    } else {
      throw ConfigError("schedule.rule '" + rule + "' is not recognized");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }

  if (opt.contains("averaging")) {
    if (!opt["averaging"].is_boolean()) {
      throw ConfigError("optimizer.averaging must be a boolean");
    }
    if (opt["averaging"].get<bool>()) {
      if (spec.schedule.rule() != StepSchedule::Rule::Constant) {
        throw ConfigError("averaging requires a constant stepsize schedule");
      }
      spec.averaging = AveragingSpec{default_quadratic, resolved_gamma};
    }
  }

  // Initial point: (0, I) in the algorithm's factor space unless overridden.
  const FactorSpace space = algorithm_space(spec.algorithm);
  VariationalParams initial{Eigen::VectorXd::Zero(model.dim()),
                            Eigen::MatrixXd::Identity(model.dim(), model.dim()), space};
  if (opt.contains("init")) {
    const json& init = opt["init"];
    check_keys(init, {"mean", "factor"}, "optimizer.init");
    if (init.contains("mean")) {
      initial.mean = vector_from_json(init["mean"], "optimizer.init.mean");
      if (initial.mean.size() != model.dim()) {
        throw ConfigError("optimizer.init.mean has the wrong dimension");
      }
    }
    if (init.contains("factor")) {
      initial.factor =
          matrix_from_json(init["factor"], model.dim(), "optimizer.init.factor");
      initial.factor = project_factor_space(initial.factor, space);
    }
  }

  ExperimentConfig config{document,  std::move(model_kind), std::move(model),
                          spec,      std::move(initial),    1,
                          {},        {},                    {},
                          {}};

  if (document.contains("replications")) {
    config.replications =
        static_cast<int>(as_integer(document["replications"], "replications"));
    if (config.replications < 1) throw ConfigError("replications must be >= 1");
  }
  std::int64_t record_every = 0;  // 0 = pick the default rule below
  if (document.contains("diagnostics")) {
    const json& diag = document["diagnostics"];
    check_keys(diag, {"elbo_samples", "final_elbo_samples", "record_every"},
               "diagnostics");
    if (diag.contains("elbo_samples")) {
      config.diagnostics.elbo_samples =
          static_cast<int>(as_integer(diag["elbo_samples"], "diagnostics"));
      if (config.diagnostics.elbo_samples < 0) {
        throw ConfigError("elbo_samples must be >= 0");
      }
    }
    if (diag.contains("final_elbo_samples")) {
      config.diagnostics.final_elbo_samples =
          static_cast<int>(as_integer(diag["final_elbo_samples"], "diagnostics"));
      if (config.diagnostics.final_elbo_samples < 2) {
        throw ConfigError("final_elbo_samples must be >= 2");
      }
    }
    if (diag.contains("record_every")) {
      record_every = as_integer(diag["record_every"], "diagnostics");
      if (record_every < 1) throw ConfigError("record_every must be >= 1");
    }
  }
  if (record_every == 0) {
    // Default: every iteration up to 10^4 rows, then thinned to stay near it.
    record_every = config.optimizer.iterations <= 10000
                       ? 1
                       : (config.optimizer.iterations + 9999) / 10000;
  }
  config.optimizer.record_every = record_every;
  if (document.contains("output")) {
    const json& out = document["output"];
    check_keys(out, {"directory"}, "output");
    if (out.contains("directory")) {
      config.output_dir = base_dir / out["directory"].get<std::string>();
    }
  }
  if (document.contains("reference")) {
    const json& ref = document["reference"];
    check_keys(ref, {"kind", "iterations", "seed", "tail_fraction"}, "reference");
    const std::string kind = require_key(ref, "kind", "reference").get<std::string>();
    if (kind == "auto") {
      config.reference.kind = ReferenceSpec::Kind::Auto;
    } else if (kind == "analytic") {
      config.reference.kind = ReferenceSpec::Kind::Analytic;
    } else if (kind == "long_run") {
      config.reference.kind = ReferenceSpec::Kind::LongRun;
      config.reference.iterations =
          as_integer(require_key(ref, "iterations", "reference"), "reference");
      if (config.reference.iterations < 1) {
        throw ConfigError("reference.iterations must be >= 1");
      }
      config.reference.seed = static_cast<std::uint64_t>(
          ref.contains("seed") ? as_integer(ref["seed"], "reference") : 0x5eedull);
      if (ref.contains("tail_fraction")) {
        config.reference.tail_fraction = as_number(ref["tail_fraction"], "reference");
        if (!(config.reference.tail_fraction > 0.0) ||
            config.reference.tail_fraction > 1.0) {
          throw ConfigError("reference.tail_fraction must be in (0, 1]");
        }
      }
    } else if (kind == "none") {
      config.reference.kind = ReferenceSpec::Kind::None;
    } else {
      throw ConfigError("reference.kind '" + kind + "' is not recognized");
    }
  }
  if (document.contains("bounds_check")) {
    const json& bc = document["bounds_check"];
    check_keys(bc, {"points", "samples", "seed", "mean_radius", "factor_scale_range"},
               "bounds_check");
    if (bc.contains("points")) {
      config.bounds_check.points = static_cast<int>(as_integer(bc["points"], "bounds_check"));
    }
    if (bc.contains("samples")) {
      config.bounds_check.samples =
          static_cast<int>(as_integer(bc["samples"], "bounds_check"));
    }
    if (bc.contains("seed")) {
      config.bounds_check.seed =
          static_cast<std::uint64_t>(as_integer(bc["seed"], "bounds_check"));
    }
    if (bc.contains("mean_radius")) {
      config.bounds_check.mean_radius = as_number(bc["mean_radius"], "bounds_check");
    }
    if (bc.contains("factor_scale_range")) {
      config.bounds_check.factor_scale_range =
          as_number(bc["factor_scale_range"], "bounds_check");
    }
    if (config.bounds_check.points < 1 || config.bounds_check.samples < 2) {
      throw ConfigError("bounds_check needs points >= 1 and samples >= 2");
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json document;
  try {
    in >> document;
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return parse_config(document, path.parent_path());
}

// ---------------------------------------------------------------------------
// trajectory CSV

static const char* kCsvHeader =
    "t,gamma,dist_sq_to_ref,kl_to_ref,elbo_mc,elbo_se,grad_sq_norm,wall_ms";

void write_run_csv(const std::filesystem::path& path, std::span<const RunRecord> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV file: " + path.string());
  out << kCsvHeader << '\n';
  auto opt_field = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const RunRecord& row : rows) {
    out << row.t << ',' << format_double(row.gamma) << ','
        << opt_field(row.dist_sq_to_ref) << ',' << opt_field(row.kl_to_ref) << ','
        << opt_field(row.elbo_mc) << ',' << opt_field(row.elbo_se) << ','
        << format_double(row.grad_sq_norm) << ',' << format_double(row.wall_ms)
        << '\n';
  }
  if (!out) throw std::runtime_error("short write to CSV file: " + path.string());
}

std::vector<RunRecord> read_run_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::runtime_error("unexpected CSV header in " + path.string());
  }
  std::vector<RunRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 8) cells.emplace_back();  // trailing empties
    if (cells.size() != 8) {
      throw std::runtime_error("unexpected CSV row width in " + path.string());
    }
    auto parse_double = [&](const std::string& s) {
      double v = 0.0;
      const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("bad CSV number '" + s + "' in " + path.string());
      }
      return v;
    };
    auto parse_optional = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return parse_double(s);
    };
    RunRecord row;
    row.t = static_cast<std::int64_t>(parse_double(cells[0]));
    row.gamma = parse_double(cells[1]);
    row.dist_sq_to_ref = parse_optional(cells[2]);
    row.kl_to_ref = parse_optional(cells[3]);
    row.elbo_mc = parse_optional(cells[4]);
    row.elbo_se = parse_optional(cells[5]);
    row.grad_sq_norm = parse_double(cells[6]);
    row.wall_ms = parse_double(cells[7]);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// objective estimate

ElboEstimate elbo_gap(const VariationalParams& w, const TargetModel& model,
                      int n_samples, const RngStream& stream) {
  if (n_samples < 2) throw std::invalid_argument("elbo_gap needs n_samples >= 2");
  if (!is_positive_definite(w)) {
    throw std::domain_error("elbo_gap requires a positive definite factor");
  }
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    RngStream sub = stream.substream(static_cast<std::uint64_t>(i));
    const double v = -model.log_density(transform(w, sub.next_gaussian_vector(w.dim())));
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0));

  ElboEstimate out;
  out.value = mean + neg_entropy(w);
  out.std_error = std::sqrt(var / n);
  const auto& same = model.reference(w.space);
  const auto& other = model.reference(w.space == FactorSpace::Symmetric
                                          ? FactorSpace::LowerTriangular
                                          : FactorSpace::Symmetric);
  const auto& ref = same ? same : other;
  if (ref && ref->exact) {
    out.exact_gap = kl_gaussian(w, ref->optimum);
  }
  return out;
}

// ---------------------------------------------------------------------------
// experiment driver

namespace {

struct ResolvedReference {
  std::optional<VariationalParams> optimum;
  bool exact = false;
  std::string kind = "none";
};

Trajectory run_with_spec(const VariationalParams& initial, const TargetModel& model,
                         const OptimizerSpec& spec, const MetricHook& hook) {
  return spec.algorithm == Algorithm::ProxSgd ? prox_sgd_run(initial, model, spec, hook)
                                              : proj_sgd_run(initial, model, spec, hook);
}

ResolvedReference resolve_reference(TargetModel& model, const ExperimentConfig& config) {
  const FactorSpace space = algorithm_space(config.optimizer.algorithm);
  ResolvedReference out;
  switch (config.reference.kind) {
    case ReferenceSpec::Kind::None:
      return out;
    case ReferenceSpec::Kind::Auto:
    case ReferenceSpec::Kind::Analytic: {
      const auto& ref = model.reference(space);
      if (ref) {
        out.optimum = ref->optimum;
        out.exact = ref->exact;
        out.kind = "analytic";
      } else if (config.reference.kind == ReferenceSpec::Kind::Analytic) {
        throw ConfigError("reference.kind=analytic but the model has none");
      }
      return out;
    }
    case ReferenceSpec::Kind::LongRun: {
      OptimizerSpec spec = config.optimizer;
      spec.iterations = config.reference.iterations;
      spec.seed = config.reference.seed;
      spec.averaging.reset();
      spec.store_iterates = false;
      spec.record_every = spec.iterations + 1;
      const std::int64_t tail_len = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(
                 std::llround(config.reference.tail_fraction *
                              static_cast<double>(spec.iterations))));
      spec.tail_average_start = spec.iterations - tail_len + 1;
      Trajectory traj = run_with_spec(config.initial, model, spec, {});
      if (!traj.tail_average) {
        throw std::runtime_error("reference run produced no tail average");
      }
      out.optimum = *traj.tail_average;
      out.exact = false;
      out.kind = "long_run";
      model.set_reference(ReferenceSolution{*traj.tail_average, false});
      return out;
    }
  }
  return out;
}

struct BoundContext {
  std::optional<QuadBound> bound;
  bool certified = false;
};

BoundContext assemble_bound(const TargetModel& model, const std::string& model_kind,
                            EstimatorKind kind, const ResolvedReference& ref,
                            int minibatch = 1) {
  BoundContext out;
  if (!ref.optimum || !model.constants().smoothness) return out;
  const double M = *model.constants().smoothness;
  BoundInputs inputs;
  inputs.dim = model.dim();
  inputs.smoothness = M;
  inputs.strong_concavity = model.constants().strong_concavity;
  inputs.residual_smoothness = residual_smoothness_default(model_kind, M);
  inputs.entropy_level = M;
  if (model.constants().map_point) {
    VariationalParams map_anchor{*model.constants().map_point,
                                 Eigen::MatrixXd::Zero(model.dim(), model.dim()),
                                 ref.optimum->space};
    const double dist = squared_param_distance(*ref.optimum, map_anchor);
    inputs.dist_sq_to_map = dist;
    inputs.dist_sq_to_residual_point = dist;  // stand-in, flagged non-certified
  }
  try {
    out.bound = quad_bound(kind, inputs, *ref.optimum);
    out.certified = ref.exact && (kind != EstimatorKind::Stl ||
                                  *inputs.residual_smoothness == 0.0);
    if (minibatch > 1) {
      // Averaging B estimates scales the envelope constants by 1/B.
      out.bound->quadratic /= static_cast<double>(minibatch);
      out.bound->offset /= static_cast<double>(minibatch);
    }
  } catch (const std::invalid_argument&) {
    out.bound.reset();
  }
  return out;
}

std::optional<RateEnvelope> choose_envelope(const ExperimentConfig& config,
                                            const ResolvedReference& ref,
                                            const BoundContext& bound,
                                            std::string* theorem_name) {
  if (!ref.optimum || !bound.bound) return std::nullopt;
  const double mu = config.model.constants().strong_concavity.value_or(0.0);
  const double M = *config.model.constants().smoothness;
  EnvelopeInputs in;
  in.mu = mu;
  in.noise_quadratic = bound.bound->quadratic;
  in.noise_offset = bound.bound->offset;
  in.smoothness = M;
  in.initial_dist_sq = squared_param_distance(config.initial, *ref.optimum);
  if (config.model.constants().map_point) {
    VariationalParams map_anchor{*config.model.constants().map_point,
                                 Eigen::MatrixXd::Zero(config.model.dim(), config.model.dim()),
                                 ref.optimum->space};
    in.dist_sq_to_map = squared_param_distance(*ref.optimum, map_anchor);
  }
  const bool constant = config.optimizer.schedule.rule() == StepSchedule::Rule::Constant;
  if (constant) in.gamma = config.optimizer.schedule.constant_gamma();

  RateTheorem theorem;
  const bool prox = config.optimizer.algorithm == Algorithm::ProxSgd;
  if (config.optimizer.averaging) {
    theorem = prox ? RateTheorem::ProxConvexAvg : RateTheorem::ProjConvexAvg;
  } else if (mu > 0.0 && constant) {
    if (!prox && config.optimizer.estimator == EstimatorKind::Stl &&
        bound.bound->offset == 0.0) {
      theorem = RateTheorem::GaussianStlGeometric;
    } else {
      theorem = prox ? RateTheorem::ProxStrong : RateTheorem::ProjStrong;
    }
  } else if (mu > 0.0 && !constant) {
    theorem = prox ? RateTheorem::ProxStrongAnytime : RateTheorem::ProjStrongAnytime;
  } else {
    return std::nullopt;
  }
  try {
    RateEnvelope envelope = rate_envelope(theorem, in);
    if (theorem_name) *theorem_name = envelope.description();
    return envelope;
  } catch (const std::invalid_argument&) {
    return std::nullopt;  // stepsize outside the theorem's validity
  }
}

json stats_json(const std::vector<std::vector<double>>& per_rep) {
  // per_rep[rep][index]: mean and standard error across replications.
  json mean = json::array();
  json se = json::array();
  if (per_rep.empty()) return {{"mean", mean}, {"std_error", se}};
  const std::size_t count = per_rep.front().size();
  const double R = static_cast<double>(per_rep.size());
  for (std::size_t i = 0; i < count; ++i) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& rep : per_rep) {
      sum += rep[i];
      sum_sq += rep[i] * rep[i];
    }
    const double m = sum / R;
    mean.push_back(m);
    if (per_rep.size() > 1) {
      const double var = std::max(0.0, (sum_sq / R - m * m) * R / (R - 1.0));
      se.push_back(std::sqrt(var / R));
    } else {
      se.push_back(0.0);
    }
  }
  return {{"mean", mean}, {"std_error", se}};
}

void parallel_for(int jobs, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) {
    threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 0) threads = 1;
  }
  threads = std::min(threads, jobs);
  if (threads <= 1) {
    for (int i = 0; i < jobs; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

json run_experiment(const ExperimentConfig& config, int threads) {
  const auto start = std::chrono::steady_clock::now();
  TargetModel model = config.model;
  const ResolvedReference ref = resolve_reference(model, config);
  const BoundContext bound =
      assemble_bound(model, config.model_kind, config.optimizer.estimator, ref,
                     config.optimizer.minibatch);
  std::string envelope_name;
  const std::optional<RateEnvelope> envelope =
      choose_envelope(config, ref, bound, &envelope_name);

  const bool want_kl = ref.optimum && ref.exact;
  const int R = config.replications;
  std::vector<Trajectory> trajectories(static_cast<std::size_t>(R));
  std::vector<char> diverged(static_cast<std::size_t>(R), 0);

  parallel_for(R, threads, [&](int rep) {
    OptimizerSpec spec = config.optimizer;
    spec.seed = config.optimizer.seed + static_cast<std::uint64_t>(rep);
    const std::uint64_t elbo_key = spec.seed ^ 0xE1B0ull;
    MetricHook hook = [&, elbo_key](std::int64_t t, const VariationalParams& w,
                                    RunRecord& row) {
      if (!w.mean.allFinite() || !w.factor.allFinite() || !is_positive_definite(w)) {
        throw std::runtime_error("trajectory diverged");
      }
      if (ref.optimum) {
        row.dist_sq_to_ref = squared_param_distance(w, *ref.optimum);
        if (want_kl) row.kl_to_ref = kl_gaussian(w, *ref.optimum);
      }
      if (config.diagnostics.elbo_samples > 0) {
        const ElboEstimate e = elbo_gap(w, model, config.diagnostics.elbo_samples,
                                        RngStream(elbo_key, static_cast<std::uint64_t>(t)));
        row.elbo_mc = e.value;
        row.elbo_se = e.std_error;
      }
    };
    try {
      trajectories[static_cast<std::size_t>(rep)] =
          run_with_spec(config.initial, model, spec, hook);
    } catch (const std::runtime_error&) {
      diverged[static_cast<std::size_t>(rep)] = 1;
    }
  });

  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    for (int rep = 0; rep < R; ++rep) {
      if (diverged[static_cast<std::size_t>(rep)]) continue;
      char name[32];
      std::snprintf(name, sizeof(name), "run_%03d.csv", rep);
      write_run_csv(config.output_dir / name,
                    trajectories[static_cast<std::size_t>(rep)].metrics);
    }
  }

  json summary;
  summary["schema"] = "gbvi-summary-v1";
  summary["config_hash"] = config_hash(config.raw);
  summary["model"] = {{"kind", config.model_kind},
                      {"dim", config.model.dim()},
                      {"smoothness", config.model.constants().smoothness.value_or(0.0)},
                      {"strong_concavity",
                       config.model.constants().strong_concavity.value_or(0.0)}};
  summary["optimizer"] = {{"algorithm", algorithm_name(config.optimizer.algorithm)},
                          {"estimator", estimator_name(config.optimizer.estimator)},
                          {"iterations", config.optimizer.iterations},
                          {"minibatch", config.optimizer.minibatch},
                          {"averaging", config.optimizer.averaging.has_value()},
                          {"record_every", config.optimizer.record_every}};
  summary["replications"] = R;
  json seeds = json::array();
  for (int rep = 0; rep < R; ++rep) {
    seeds.push_back(config.optimizer.seed + static_cast<std::uint64_t>(rep));
  }
  summary["seeds"] = std::move(seeds);
  summary["reference"] = {{"kind", ref.kind}, {"exact", ref.exact}};
  summary["conventions"] = {
      {"neg_entropy_constant_dropped", true},
      {"param_norm", "stacked: |m|^2 + |C|_F^2"},
      {"averaging_range", "prox: w^1..w^T; proj: w^0..w^{T-1}"}};
  if (bound.bound) {
    summary["noise_bound"] = {{"quadratic", bound.bound->quadratic},
                              {"offset", bound.bound->offset},
                              {"certified", bound.certified},
                              {"minibatch", config.optimizer.minibatch}};
  }

  json diverged_list = json::array();
  std::vector<const Trajectory*> live;
  for (int rep = 0; rep < R; ++rep) {
    if (diverged[static_cast<std::size_t>(rep)]) {
      diverged_list.push_back(rep);
    } else {
      live.push_back(&trajectories[static_cast<std::size_t>(rep)]);
    }
  }
  summary["diverged_replications"] = std::move(diverged_list);
  if (live.empty()) {
    summary["error"] = "all replications diverged";
    return summary;
  }

  json record_t = json::array();
  for (const RunRecord& row : live.front()->metrics) record_t.push_back(row.t);
  summary["record_t"] = record_t;

  auto collect = [&](auto getter) {
    std::vector<std::vector<double>> per_rep;
    for (const Trajectory* traj : live) {
      std::vector<double> rowvals;
      rowvals.reserve(traj->metrics.size());
      for (const RunRecord& row : traj->metrics) {
        const std::optional<double> v = getter(row);
        if (!v) return std::vector<std::vector<double>>{};
        rowvals.push_back(*v);
      }
      per_rep.push_back(std::move(rowvals));
    }
    return per_rep;
  };

  if (ref.optimum) {
    const auto dist = collect([](const RunRecord& r) { return r.dist_sq_to_ref; });
    if (!dist.empty()) summary["dist_sq_to_ref"] = stats_json(dist);
    if (want_kl) {
      const auto kl = collect([](const RunRecord& r) { return r.kl_to_ref; });
      if (!kl.empty()) summary["kl_to_ref"] = stats_json(kl);
    }
  }
  if (envelope) {
    json values = json::array();
    for (const RunRecord& row : live.front()->metrics) values.push_back((*envelope)(row.t));
    summary["envelope"] = {{"description", envelope_name}, {"values", values}};
  }

  // Final metrics: squared distance of the last iterate, and the objective
  // value of the averaged iterate (final iterate when averaging is off).
  json final_block;
  if (ref.optimum) {
    std::vector<std::vector<double>> finals;
    for (const Trajectory* traj : live) {
      finals.push_back({squared_param_distance(traj->final_params, *ref.optimum)});
    }
    const json s = stats_json(finals);
    final_block["dist_sq_mean"] = s["mean"][0];
    final_block["dist_sq_se"] = s["std_error"][0];
  }
  {
    const int samples = config.diagnostics.final_elbo_samples;
    std::vector<std::vector<double>> values;
    std::vector<std::vector<double>> exact;
    bool have_exact = true;
    double mc_se_acc = 0.0;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const Trajectory* traj = live[i];
      const VariationalParams& w =
          traj->averaged ? *traj->averaged : traj->final_params;
      const ElboEstimate e =
          elbo_gap(w, model, samples, RngStream(config.optimizer.seed ^ 0xF1A7ull, i));
      values.push_back({e.value});
      mc_se_acc += e.std_error * e.std_error;
      if (e.exact_gap) {
        exact.push_back({*e.exact_gap});
      } else {
        have_exact = false;
      }
    }
    const json s = stats_json(values);
    final_block["averaged_elbo"] = {
        {"value", s["mean"][0]},
        {"std_error", s["std_error"][0]},
        {"mc_std_error", std::sqrt(mc_se_acc) / static_cast<double>(live.size())},
        {"averaged_iterate", live.front()->averaged.has_value()}};
    if (have_exact) {
      const json g = stats_json(exact);
      final_block["averaged_exact_gap"] = {{"value", g["mean"][0]},
                                           {"std_error", g["std_error"][0]}};
    }
  }
  summary["final"] = std::move(final_block);
  summary["wall_ms"] = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - start)
                           .count();

  if (!config.output_dir.empty()) {
    std::ofstream out(config.output_dir / "summary.json");
    if (!out) {
      throw std::runtime_error("cannot write summary to " +
                               (config.output_dir / "summary.json").string());
    }
    out << summary.dump(2) << '\n';
  }
  return summary;
}

// ---------------------------------------------------------------------------
// noise-bound verification

json BoundsReport::to_json() const {
  json points_json = json::array();
  for (const BoundsPoint& p : points) {
    points_json.push_back({{"dist_sq", p.dist_sq},
                           {"measured", p.measured},
                           {"std_error", p.std_error},
                           {"bound", p.bound},
                           {"margin", p.margin},
                           {"pass", p.pass}});
  }
  return {{"schema", "gbvi-bounds-v1"},
          {"estimator", estimator_name(estimator)},
          {"quadratic", quadratic},
          {"offset", offset},
          {"reference_exact", reference_exact},
          {"points", points_json},
          {"pass", pass}};
}

BoundsReport check_bounds(const ExperimentConfig& config, int threads) {
  TargetModel model = config.model;
  const ResolvedReference ref = resolve_reference(model, config);
  if (!ref.optimum) {
    throw ConfigError("check_bounds needs a reference optimum (analytic or long_run)");
  }
  const EstimatorKind kind = config.optimizer.estimator;
  const FactorSpace space =
      kind == EstimatorKind::Energy ? FactorSpace::LowerTriangular : FactorSpace::Symmetric;
  const auto& spaced_ref = model.reference(space);
  if (!spaced_ref) {
    throw ConfigError("check_bounds: no reference available in the estimator's factor space");
  }
  const VariationalParams anchor = spaced_ref->optimum;
  ResolvedReference anchored = ref;
  anchored.optimum = anchor;
  anchored.exact = spaced_ref->exact;
  const BoundContext bound = assemble_bound(model, config.model_kind, kind, anchored);
  if (!bound.bound) {
    throw ConfigError("check_bounds: the noise bound constants are not determined");
  }
  if (!config.model.constants().smoothness) {
    throw ConfigError("check_bounds needs the model smoothness constant");
  }
  const NonDegeneracyLevel level{*config.model.constants().smoothness};
  const BoundsCheckSpec& grid = config.bounds_check;
  const double slack = anchored.exact ? 1.0 : 1.1;

  BoundsReport report;
  report.estimator = kind;
  report.quadratic = bound.bound->quadratic;
  report.offset = bound.bound->offset;
  report.reference_exact = anchored.exact;
  report.points.resize(static_cast<std::size_t>(grid.points));

  parallel_for(grid.points, threads, [&](int i) {
    RngStream point_rng(grid.seed, static_cast<std::uint64_t>(i));
    VariationalParams w = anchor;
    w.mean += grid.mean_radius * point_rng.next_gaussian_vector(model.dim());
    const double log_scale =
        grid.factor_scale_range * (2.0 * point_rng.next_uniform() - 1.0);
    Eigen::MatrixXd perturb(model.dim(), model.dim());
    for (Eigen::Index c = 0; c < perturb.cols(); ++c)
      for (Eigen::Index r = 0; r < perturb.rows(); ++r)
        perturb(r, c) = 0.2 * point_rng.next_gaussian();
    w.factor = project_factor_space(std::exp(log_scale) * anchor.factor + perturb, space);
    if (kind != EstimatorKind::Energy) {
      w = project_nondegenerate(w, level);  // validity region of the bound
    }

    const MomentEstimate measured = mc_expected_sq_norm(
        kind, w, model, grid.samples,
        RngStream(grid.seed ^ 0xB0D5ull, static_cast<std::uint64_t>(i)));
    BoundsPoint& p = report.points[static_cast<std::size_t>(i)];
    p.dist_sq = squared_param_distance(w, anchor);
    p.measured = measured.value;
    p.std_error = measured.std_error;
    p.bound = bound.bound->quadratic * p.dist_sq + bound.bound->offset;
    const double allowed = p.bound * slack + 5.0 * p.std_error;
    p.margin = allowed - p.measured;
    p.pass = p.margin >= 0.0;
  });

  report.pass = std::all_of(report.points.begin(), report.points.end(),
                            [](const BoundsPoint& p) { return p.pass; });
  return report;
}

// ---------------------------------------------------------------------------
// rate fits

RateFit fit_rate(std::span<const RatePoint> points) {
  if (points.size() < 2) {
    throw std::invalid_argument("fit_rate needs at least two points");
  }
  const double n = static_cast<double>(points.size());
  double sx = 0.0, sy = 0.0;
  for (const RatePoint& p : points) {
    if (!(p.horizon > 0.0) || !(p.metric > 0.0)) {
      throw std::invalid_argument("fit_rate needs positive horizons and metrics");
    }
    sx += std::log(p.horizon);
    sy += std::log(p.metric);
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (const RatePoint& p : points) {
    const double dx = std::log(p.horizon) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(p.metric) - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_rate needs distinct horizons");

  RateFit fit;
  fit.points = static_cast<int>(points.size());
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (points.size() > 2) {
    double rss = 0.0;
    for (const RatePoint& p : points) {
      const double r = std::log(p.metric) - (fit.intercept + fit.slope * std::log(p.horizon));
      rss += r * r;
    }
    fit.slope_std_error = std::sqrt(rss / (n - 2.0) / sxx);
  }
  fit.conf_low = fit.slope - 1.96 * fit.slope_std_error;
  fit.conf_high = fit.slope + 1.96 * fit.slope_std_error;
  return fit;
}

RateFit fit_rate_from_summaries(const std::vector<json>& summaries,
                                const std::string& metric,
                                const std::vector<json>& baseline) {
  if (summaries.size() < 2) {
    throw std::invalid_argument("fit_rate needs at least two summaries");
  }
  auto horizon_of = [](const json& s) {
    return s.at("optimizer").at("iterations").get<double>();
  };
  std::vector<RatePoint> points;
  if (metric == "dist") {
    for (const json& s : summaries) {
      points.push_back({horizon_of(s), s.at("final").at("dist_sq_mean").get<double>()});
    }
  } else if (metric == "gap") {
    double best = std::numeric_limits<double>::infinity();
    auto value_of = [](const json& s) {
      return s.at("final").at("averaged_elbo").at("value").get<double>();
    };
    for (const json& s : summaries) best = std::min(best, value_of(s));
    for (const json& s : baseline) best = std::min(best, value_of(s));
    for (const json& s : summaries) {
      points.push_back({horizon_of(s), value_of(s) - best});
    }
  } else {
    throw std::invalid_argument("fit_rate metric must be 'dist' or 'gap'");
  }
  return fit_rate(points);
}

}  // namespace gbvi
