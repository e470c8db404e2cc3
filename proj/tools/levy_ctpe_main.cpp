// levy-ctpe: dataset generation, coefficient recovery, and policy evaluation
// for one-dimensional jump-diffusions with 2alpha-stable noise.
//
// Every command writes a self-describing artifact directory: an effective
// config snapshot plus the numeric outputs.  Rerunning a command from its
// snapshot reproduces every output byte for byte.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "levyctpe/io.hpp"
#include "levyctpe/parallel.hpp"
#include "levyctpe/recovery.hpp"
#include "levyctpe/registry.hpp"
#include "levyctpe/value_pide.hpp"

namespace {

using nlohmann::json;
using namespace levyctpe;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNoConverge = 4;
constexpr int kExitSolver = 5;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// configuration

struct DynamicsConfig {
  std::string fields = "const_543";
  Scalar alpha = 0.6;
};

struct DatasetSection {
  std::string kind = "unbiased";  // unbiased | filtered | mcmc
  Index num_trajectories = 10000;
  Index steps = 40;
  Scalar dt = 0.025;
  Index substeps = 10;
  std::uint64_t seed = 1;
  std::string path;  // nonempty: read <path> (+ sidecar meta) instead
  CensoringParams censoring{20.0, 8.0, 0.5, 5000};
};

struct FitSection {
  FitConfig config;
  Index n_modes = 0;
  Scalar ct = 8.0;
  Scalar trt = 20.0;
  std::uint64_t seed = 101;
  Index history_thin = 10;
};

struct PideSection {
  Scalar beta = 0.1;
  Index resolution = 128;
  std::string reward = "manufactured";  // manufactured | constant
  Scalar reward_value = 0.1;
  std::string exact = "manufactured";  // manufactured | none
  std::string theta_path;              // nonempty: solve with a fitted theta
};

struct StudySection {
  std::vector<Scalar> epsilons = {1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
  Index trials = 10000;
  Scalar alpha = 0.5;
  std::uint64_t seed = 2026;
  std::string shape = "constant";  // constant | harmonic | bump
};

struct KernelSection {
  Scalar alpha = 0.5;
  Scalar t = 0.025;
  Scalar d_o = 4.0;
  Scalar d_f = 3.0;
  Scalar y_max = 20.0;
  Index points = 201;
};

struct RunConfig {
  DynamicsConfig dynamics;
  DatasetSection dataset;
  FitSection fit;
  PideSection pide;
  StudySection study;
  KernelSection kernel;
  Index repeats = 12;  // cmd_reproduce
};

Scalar want_num(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<Scalar>();
}

Index want_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
  return v.get<Index>();
}

std::uint64_t want_u64(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !v.is_number_integer())
    throw ConfigError(path + ": expected an integer");
  return v.get<std::uint64_t>();
}

bool want_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
  return v.get<bool>();
}

std::string want_str(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  return v.get<std::string>();
}

void parse_dynamics(const json& j, DynamicsConfig& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string p = "dynamics." + key;
    if (key == "fields") c.fields = want_str(v, p);
    else if (key == "alpha") c.alpha = want_num(v, p);
    else throw ConfigError(p + ": unknown key");
  }
}

void parse_dataset(const json& j, DatasetSection& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string p = "dataset." + key;
    if (key == "kind") c.kind = want_str(v, p);
    else if (key == "num_trajectories") c.num_trajectories = want_int(v, p);
    else if (key == "steps") c.steps = want_int(v, p);
    else if (key == "dt") c.dt = want_num(v, p);
    else if (key == "substeps") c.substeps = want_int(v, p);
    else if (key == "seed") c.seed = want_u64(v, p);
    else if (key == "path") c.path = want_str(v, p);
    else if (key == "censoring") {
      for (const auto& [ck, cv] : v.items()) {
        const std::string cp = p + "." + ck;
        if (ck == "trt") c.censoring.trt = want_num(cv, cp);
        else if (ck == "ct") c.censoring.ct = want_num(cv, cp);
        else if (ck == "drop_fraction") c.censoring.drop_fraction = want_num(cv, cp);
        else if (ck == "burn_in") c.censoring.burn_in = want_int(cv, cp);
        else throw ConfigError(cp + ": unknown key");
      }
    } else throw ConfigError(p + ": unknown key");
  }
}

void parse_fit(const json& j, FitSection& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string p = "fit." + key;
    if (key == "n_modes") c.n_modes = want_int(v, p);
    else if (key == "ct") c.ct = want_num(v, p);
    else if (key == "trt") c.trt = want_num(v, p);
    else if (key == "seed") c.seed = want_u64(v, p);
    else if (key == "history_thin") c.history_thin = want_int(v, p);
    else if (key == "eta") c.config.eta = want_num(v, p);
    else if (key == "beta1") c.config.beta1 = want_num(v, p);
    else if (key == "beta2") c.config.beta2 = want_num(v, p);
    else if (key == "eps") c.config.eps = want_num(v, p);
    else if (key == "step_limit") c.config.step_limit = want_int(v, p);
    else if (key == "batch") c.config.batch = want_int(v, p);
    else if (key == "tcf_warmup") c.config.tcf_warmup = want_int(v, p);
    else if (key == "ma_window") c.config.ma_window = want_int(v, p);
    else if (key == "fd_mix") c.config.fd_mix = want_num(v, p);
    else if (key == "fd_components") c.config.fd_components = want_int(v, p);
    else if (key == "use_tcf") c.config.use_tcf = want_bool(v, p);
    else throw ConfigError(p + ": unknown key");
  }
}

void parse_pide(const json& j, PideSection& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string p = "pide." + key;
    if (key == "beta") c.beta = want_num(v, p);
    else if (key == "resolution") c.resolution = want_int(v, p);
    else if (key == "reward") c.reward = want_str(v, p);
    else if (key == "reward_value") c.reward_value = want_num(v, p);
    else if (key == "exact") c.exact = want_str(v, p);
    else if (key == "theta_path") c.theta_path = want_str(v, p);
    else throw ConfigError(p + ": unknown key");
  }
}

void parse_study(const json& j, StudySection& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string p = "study." + key;
    if (key == "epsilons") {
      if (!v.is_array() || v.empty())
        throw ConfigError(p + ": expected a nonempty array");
      c.epsilons.clear();
      for (std::size_t i = 0; i < v.size(); ++i)
        c.epsilons.push_back(want_num(v[i], p + "[" + std::to_string(i) + "]"));
    } else if (key == "trials") c.trials = want_int(v, p);
    else if (key == "alpha") c.alpha = want_num(v, p);
    else if (key == "seed") c.seed = want_u64(v, p);
    else if (key == "shape") c.shape = want_str(v, p);
    else throw ConfigError(p + ": unknown key");
  }
}

void parse_kernel(const json& j, KernelSection& c) {
  for (const auto& [key, v] : j.items()) {
    const std::string p = "kernel." + key;
    if (key == "alpha") c.alpha = want_num(v, p);
    else if (key == "t") c.t = want_num(v, p);
    else if (key == "d_o") c.d_o = want_num(v, p);
    else if (key == "d_f") c.d_f = want_num(v, p);
    else if (key == "y_max") c.y_max = want_num(v, p);
    else if (key == "points") c.points = want_int(v, p);
    else throw ConfigError(p + ": unknown key");
  }
}

// Overlay semantics: keys present in `j` replace the current values, the
// rest keep their defaults (or the reproduce preset).
void parse_config(const json& j, RunConfig& cfg) {
  if (!j.is_object()) throw ConfigError("config root: expected an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "dynamics") parse_dynamics(v, cfg.dynamics);
    else if (key == "dataset") parse_dataset(v, cfg.dataset);
    else if (key == "fit") parse_fit(v, cfg.fit);
    else if (key == "pide") parse_pide(v, cfg.pide);
    else if (key == "study") parse_study(v, cfg.study);
    else if (key == "kernel") parse_kernel(v, cfg.kernel);
    else if (key == "repeats") cfg.repeats = want_int(v, "repeats");
    else if (key == "schema_version") (void)want_int(v, "schema_version");
    else throw ConfigError(key + ": unknown key");
  }
}

RunConfig load_config(const std::string& path, RunConfig base = RunConfig{}) {
  if (path.empty()) return base;
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  parse_config(j, base);
  return base;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = io::kSchemaVersion;
  j["dynamics"] = {{"fields", c.dynamics.fields}, {"alpha", c.dynamics.alpha}};
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"num_trajectories", c.dataset.num_trajectories},
                  {"steps", c.dataset.steps},
                  {"dt", c.dataset.dt},
                  {"substeps", c.dataset.substeps},
                  {"seed", c.dataset.seed},
                  {"path", c.dataset.path},
                  {"censoring",
                   {{"trt", c.dataset.censoring.trt},
                    {"ct", c.dataset.censoring.ct},
                    {"drop_fraction", c.dataset.censoring.drop_fraction},
                    {"burn_in", c.dataset.censoring.burn_in}}}};
  j["fit"] = {{"n_modes", c.fit.n_modes},
              {"ct", c.fit.ct},
              {"trt", c.fit.trt},
              {"seed", c.fit.seed},
              {"history_thin", c.fit.history_thin},
              {"eta", c.fit.config.eta},
              {"beta1", c.fit.config.beta1},
              {"beta2", c.fit.config.beta2},
              {"eps", c.fit.config.eps},
              {"step_limit", c.fit.config.step_limit},
              {"batch", c.fit.config.batch},
              {"tcf_warmup", c.fit.config.tcf_warmup},
              {"ma_window", c.fit.config.ma_window},
              {"fd_mix", c.fit.config.fd_mix},
              {"fd_components", c.fit.config.fd_components},
              {"use_tcf", c.fit.config.use_tcf}};
  j["pide"] = {{"beta", c.pide.beta},
               {"resolution", c.pide.resolution},
               {"reward", c.pide.reward},
               {"reward_value", c.pide.reward_value},
               {"exact", c.pide.exact},
               {"theta_path", c.pide.theta_path}};
  j["study"] = {{"epsilons", c.study.epsilons},
                {"trials", c.study.trials},
                {"alpha", c.study.alpha},
                {"seed", c.study.seed},
                {"shape", c.study.shape}};
  j["kernel"] = {{"alpha", c.kernel.alpha},
                 {"t", c.kernel.t},
                 {"d_o", c.kernel.d_o},
                 {"d_f", c.kernel.d_f},
                 {"y_max", c.kernel.y_max},
                 {"points", c.kernel.points}};
  j["repeats"] = c.repeats;
  return j;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void validate_config(const RunConfig& c) {
  require(c.dynamics.alpha > 0.0 && c.dynamics.alpha < 1.0,
          "dynamics.alpha: must lie in (0, 1)");
  if (!c.dynamics.fields.empty()) {
    try {
      lookup_fields(c.dynamics.fields);
    } catch (const SimError&) {
      throw ConfigError("dynamics.fields: unknown coefficient set \"" +
                        c.dynamics.fields + "\"");
    }
  }
  require(c.dataset.kind == "unbiased" || c.dataset.kind == "filtered" ||
              c.dataset.kind == "mcmc",
          "dataset.kind: must be unbiased, filtered, or mcmc");
  require(c.dataset.num_trajectories >= 1, "dataset.num_trajectories: must be >= 1");
  require(c.dataset.steps >= 1, "dataset.steps: must be >= 1");
  require(c.dataset.dt > 0.0, "dataset.dt: must be > 0");
  require(c.dataset.substeps >= 1, "dataset.substeps: must be >= 1");
  require(c.dataset.censoring.drop_fraction >= 0.0 &&
              c.dataset.censoring.drop_fraction <= 1.0,
          "dataset.censoring.drop_fraction: must lie in [0, 1]");
  if (c.dataset.kind == "filtered")
    require(c.dataset.censoring.ct > 0.0 &&
                c.dataset.censoring.ct < c.dataset.censoring.trt,
            "dataset.censoring: need 0 < ct < trt");
  if (c.dataset.kind == "mcmc")
    require(c.dataset.censoring.burn_in >= 1,
            "dataset.censoring.burn_in: must be >= 1");
  if (!c.dataset.path.empty())
    require(fs::exists(c.dataset.path),
            "dataset.path: file does not exist: " + c.dataset.path);
  require(c.fit.n_modes >= 0, "fit.n_modes: must be >= 0");
  require(c.fit.ct > 0.0 && c.fit.ct < c.fit.trt, "fit: need 0 < ct < trt");
  require(c.fit.history_thin >= 1, "fit.history_thin: must be >= 1");
  try {
    c.fit.config.validate();
  } catch (const RecoveryError& e) {
    throw ConfigError(std::string("fit: ") + e.what());
  }
  require(c.pide.beta > 0.0, "pide.beta: must be > 0");
  require(c.pide.resolution >= 4 && c.pide.resolution % 2 == 0,
          "pide.resolution: must be even and >= 4");
  require(c.pide.reward == "manufactured" || c.pide.reward == "constant",
          "pide.reward: must be manufactured or constant");
  require(c.pide.exact == "manufactured" || c.pide.exact == "none",
          "pide.exact: must be manufactured or none");
  if (!c.pide.theta_path.empty())
    require(fs::exists(c.pide.theta_path),
            "pide.theta_path: file does not exist: " + c.pide.theta_path);
  for (Scalar e : c.study.epsilons)
    require(e > 0.0, "study.epsilons: entries must be > 0");
  require(c.study.trials >= 1, "study.trials: must be >= 1");
  require(c.study.alpha > 0.0 && c.study.alpha < 1.0,
          "study.alpha: must lie in (0, 1)");
  require(c.study.shape == "constant" || c.study.shape == "harmonic" ||
              c.study.shape == "bump",
          "study.shape: must be constant, harmonic, or bump");
  require(c.kernel.alpha > 0.0 && c.kernel.alpha < 1.0,
          "kernel.alpha: must lie in (0, 1)");
  require(c.kernel.t > 0.0, "kernel.t: must be > 0");
  require(c.kernel.d_o >= 0.0, "kernel.d_o: must be >= 0");
  require(c.kernel.d_f > 0.0, "kernel.d_f: must be > 0");
  require(c.kernel.y_max > 0.0, "kernel.y_max: must be > 0");
  require(c.kernel.points >= 2, "kernel.points: must be >= 2");
  require(c.repeats >= 1, "repeats: must be >= 1");
}

// ---------------------------------------------------------------------------
// artifact helpers

fs::path prepare_out(const std::string& out, const std::string& fallback) {
  const fs::path dir = out.empty() ? fs::path("runs") / fallback : fs::path(out);
  fs::create_directories(dir);
  return dir;
}

void write_snapshot(const RunConfig& cfg, const fs::path& dir) {
  std::ofstream out(dir / "config.json", std::ios::binary);
  out << config_to_json(cfg).dump(2) << '\n';
}

void write_log(const fs::path& dir, const std::vector<std::string>& lines) {
  std::ofstream out(dir / "log.txt", std::ios::binary);
  for (const auto& l : lines) out << l << '\n';
}

void dump_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
}

const QuadratureTables& tables() {
  static const QuadratureTables t;
  return t;
}

TrajectoryDataset generate_dataset(const RunConfig& cfg) {
  require(!cfg.dynamics.fields.empty(),
          "dynamics.fields: required to generate a dataset");
  const SdeSpec sde = make_sde(cfg.dynamics.fields, cfg.dynamics.alpha);
  const DatasetSection& d = cfg.dataset;
  if (d.kind == "mcmc")
    return generate_mcmc_dataset(sde, uniform_init(), d.num_trajectories,
                                 d.steps, d.dt, d.censoring.burn_in, d.seed,
                                 tables());
  TrajectoryDataset ds =
      generate_unbiased_dataset(sde, uniform_init(), d.num_trajectories,
                                d.steps, d.dt, d.seed, d.substeps);
  if (d.kind == "filtered")
    ds = censor_by_filtering(ds, d.censoring.trt, d.censoring.ct,
                             d.censoring.drop_fraction, d.seed);
  return ds;
}

TrajectoryDataset obtain_dataset(const RunConfig& cfg,
                                 const std::string& dataset_flag) {
  const std::string& path =
      dataset_flag.empty() ? cfg.dataset.path : dataset_flag;
  if (!path.empty()) return io::read_dataset_stem(path);
  return generate_dataset(cfg);
}

std::size_t pair_count(const TrajectoryDataset& ds) {
  if (ds.is_pairs()) return ds.pairs.size();
  std::size_t n = 0;
  for (const Trajectory& t : ds.trajectories)
    n += static_cast<std::size_t>(t.times.size() - 1);
  return n;
}

// relative L2 distance to the named truth on a 1024-point grid
std::array<Scalar, 3> field_errors(const ThetaMatrix& theta,
                                   const FourierBasis& basis,
                                   const NamedFields& truth) {
  const CoefficientFields hat = fields_from_theta(theta, basis);
  const std::function<Scalar(Scalar)>* f_hat[3] = {&hat.b, &hat.d_o, &hat.d_f};
  const std::function<Scalar(Scalar)>* f_ref[3] = {&truth.b, &truth.d_o,
                                                   &truth.d_f};
  std::array<Scalar, 3> err{};
  const Index n = 1024;
  for (int l = 0; l < 3; ++l) {
    Scalar num = 0.0, den = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Scalar x = kTwoPi * static_cast<Scalar>(i + 1) / n;
      const Scalar d = (*f_hat[l])(x) - (*f_ref[l])(x);
      num += d * d;
      den += (*f_ref[l])(x) * (*f_ref[l])(x);
    }
    err[l] = std::sqrt(num / den);
  }
  return err;
}

Scalar manufactured_value(Scalar x) {
  const Scalar c = std::cos(2.0 * x);
  return c * c * c;
}

// ---------------------------------------------------------------------------
// commands

int cmd_simulate(const RunConfig& cfg, const std::string& out) {
  const fs::path dir = prepare_out(out, "simulate");
  write_snapshot(cfg, dir);
  const TrajectoryDataset ds = generate_dataset(cfg);
  io::write_dataset(ds, dir);
  const std::size_t rows =
      ds.is_pairs() ? ds.pairs.size()
                    : ds.trajectories.size() *
                          static_cast<std::size_t>(cfg.dataset.steps + 1);
  write_log(dir, {"command: simulate", "kind: " + cfg.dataset.kind,
                  "fields: " + cfg.dynamics.fields,
                  "rows: " + std::to_string(rows)});
  return kExitOk;
}

int cmd_fit(const RunConfig& cfg, const std::string& dataset_flag,
            const std::string& out) {
  const fs::path dir = prepare_out(out, "fit");
  write_snapshot(cfg, dir);

  const TrajectoryDataset ds = obtain_dataset(cfg, dataset_flag);
  const Scalar alpha =
      ds.meta.alpha > 0.0 ? ds.meta.alpha : cfg.dynamics.alpha;
  const FourierBasis basis(static_cast<int>(cfg.fit.n_modes));

  const FitResult res = fit(ds, basis, alpha, cfg.fit.config, cfg.fit.ct,
                            cfg.fit.trt, cfg.fit.seed, tables());

  io::write_theta_json(res.theta_ma, cfg.fit.n_modes, alpha, &res,
                       dir / "theta.json");
  io::write_history_csv(res.history, cfg.fit.n_modes, dir / "history.csv",
                        cfg.fit.history_thin);

  json metrics;
  metrics["schema_version"] = io::kSchemaVersion;
  metrics["converged"] = res.converged;
  metrics["steps_run"] = res.steps_run;
  metrics["final_tcf"] = res.final_tcf;
  metrics["ct_effective"] = res.ct_effective;
  if (!cfg.dynamics.fields.empty()) {
    const auto err = field_errors(res.theta_ma, basis,
                                  lookup_fields(cfg.dynamics.fields));
    metrics["rel_err_b"] = err[0];
    metrics["rel_err_do"] = err[1];
    metrics["rel_err_df"] = err[2];
  }
  dump_json_file(metrics, dir / "metrics.json");

  write_log(dir, {"command: fit", "pairs: " + std::to_string(pair_count(ds)),
                  "steps_run: " + std::to_string(res.steps_run),
                  std::string("converged: ") + (res.converged ? "yes" : "no")});
  return res.converged ? kExitOk : kExitNoConverge;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& theta_flag,
                 const std::string& out) {
  const fs::path dir = prepare_out(out, "evaluate");
  write_snapshot(cfg, dir);

  PideProblem prob;
  prob.beta = cfg.pide.beta;
  prob.M = cfg.pide.resolution;

  std::string source;
  const std::string& theta_path =
      theta_flag.empty() ? cfg.pide.theta_path : theta_flag;
  if (!theta_path.empty()) {
    const io::ThetaFile tf = io::read_theta_json(theta_path);
    prob.alpha = tf.alpha;
    const CoefficientFields cf =
        fields_from_theta(tf.theta, FourierBasis(static_cast<int>(tf.n_modes)));
    prob.b = cf.b;
    prob.d_o = cf.d_o;
    prob.d_f = cf.d_f;
    source = "theta:" + theta_path;
  } else {
    require(!cfg.dynamics.fields.empty(),
            "dynamics.fields: required when pide.theta_path is empty");
    const NamedFields& nf = lookup_fields(cfg.dynamics.fields);
    prob.alpha = cfg.dynamics.alpha;
    prob.b = nf.b;
    prob.d_o = nf.d_o;
    prob.d_f = nf.d_f;
    source = "fields:" + cfg.dynamics.fields;
  }

  if (cfg.pide.reward == "manufactured") {
    // reward derived from the named ground truth, whatever is being solved
    require(!cfg.dynamics.fields.empty(),
            "dynamics.fields: required for the manufactured reward");
    const NamedFields& nf = lookup_fields(cfg.dynamics.fields);
    PideProblem truth = prob;
    truth.b = nf.b;
    truth.d_o = nf.d_o;
    truth.d_f = nf.d_f;
    const ValueField v_star = sample_field(manufactured_value, prob.M);
    prob.r = interpolant(manufacture_reward(v_star, truth));
  } else {
    const Scalar v = cfg.pide.reward_value;
    prob.r = [v](Scalar) { return v; };
  }

  const ValueField v_hat = solve_pide(prob);
  const Vector grid = collocation_grid(prob.M);

  json metrics;
  metrics["schema_version"] = io::kSchemaVersion;
  metrics["coefficients"] = source;
  if (cfg.pide.exact == "manufactured") {
    const ValueField v_exact = sample_field(manufactured_value, prob.M);
    io::write_value_csv(grid, v_hat.samples, &v_exact.samples,
                        dir / "value.csv");
    metrics["err_sup"] = value_error(v_hat, v_exact, ErrorNorm::sup);
    metrics["err_l2"] = value_error(v_hat, v_exact, ErrorNorm::l2);
  } else {
    io::write_value_csv(grid, v_hat.samples, nullptr, dir / "value.csv");
  }
  dump_json_file(metrics, dir / "metrics.json");

  write_log(dir, {"command: evaluate", "coefficients: " + source,
                  "resolution: " + std::to_string(prob.M)});
  return kExitOk;
}

int cmd_kernel_dump(const RunConfig& cfg, const std::string& out) {
  const fs::path dir = prepare_out(out, "kernel");
  write_snapshot(cfg, dir);
  const KernelSection& k = cfg.kernel;
  const DensityWorkspace ws(tables(), k.alpha, k.t, k.d_o, k.d_f);

  json rows = json::array();
  for (Index i = 0; i < k.points; ++i) {
    const Scalar y = k.y_max * static_cast<Scalar>(i) /
                     static_cast<Scalar>(k.points - 1);
    const DensityWorkspace::Raw raw = ws.raw_all(y);
    json row;
    row["y"] = y;
    row["density"] = raw.v[static_cast<int>(IntegrandKind::density)] / kPi;
    row["grad_b"] = raw.v[static_cast<int>(IntegrandKind::grad_b)];
    row["grad_do"] = raw.v[static_cast<int>(IntegrandKind::grad_do)];
    row["grad_df"] = raw.v[static_cast<int>(IntegrandKind::grad_df)];
    row["branch"] = raw.scaled ? "scaled" : "direct";
    row["flagged"] = raw.flagged;
    rows.push_back(row);
  }
  json j;
  j["schema_version"] = io::kSchemaVersion;
  j["query"] = {{"alpha", k.alpha}, {"t", k.t}, {"d_o", k.d_o},
                {"d_f", k.d_f}};
  j["rows"] = rows;
  dump_json_file(j, dir / "kernel.json");
  write_log(dir, {"command: kernel-dump",
                  "points: " + std::to_string(k.points)});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reproduce

struct Variant {
  std::string name;
  bool use_tcf;
};

RunConfig example_config(const std::string& id) {
  RunConfig c;
  c.dataset.steps = 40;
  c.dataset.dt = 1.0 / 40.0;
  if (id == "4.1") {
    c.dynamics = {"const_543", 0.6};
    c.dataset.kind = "unbiased";
    c.dataset.num_trajectories = 100000;
    c.fit.n_modes = 0;
  } else if (id == "4.2") {
    c.dynamics = {"ex42", 0.3};
    c.dataset.kind = "unbiased";
    c.dataset.num_trajectories = 100000;
    c.dataset.dt = 1.0 / 400.0;
    c.fit.n_modes = 10;
    c.fit.config.use_tcf = false;
  } else if (id == "4.3") {
    c.dynamics = {"const_543", 0.3};
    c.dataset.kind = "filtered";
    c.dataset.num_trajectories = 400000;
    c.fit.n_modes = 0;
  } else if (id == "4.4") {
    c.dynamics = {"ex42", 0.3};
    c.dataset.kind = "filtered";
    c.dataset.num_trajectories = 400000;
    c.fit.n_modes = 10;
  } else if (id == "4.5") {
    c.dynamics = {"const_543", 0.3};
    c.dataset.kind = "mcmc";
    c.dataset.num_trajectories = 400000;
    c.fit.n_modes = 0;
  } else if (id == "study") {
    c.dynamics.fields = "study422";
  } else {
    throw ConfigError("reproduce: unknown example id \"" + id +
                      "\" (want 4.1, 4.2, 4.3, 4.4, 4.5, or study)");
  }
  c.dataset.seed = 8 * static_cast<std::uint64_t>(id == "study" ? 600
                                                                : id[2] - '0');
  return c;
}

int cmd_reproduce(const std::string& id, RunConfig cfg, Scalar scale,
                  bool no_tcf, const std::string& out) {
  const fs::path dir = prepare_out(out, "reproduce-" + id);

  if (id == "study") {
    const Index trials = std::max<Index>(
        1, static_cast<Index>(std::llround(cfg.study.trials * scale)));
    cfg.study.trials = trials;
    write_snapshot(cfg, dir);

    const NamedFields& nf = lookup_fields("study422");
    PideProblem prob;
    prob.beta = cfg.pide.beta;
    prob.alpha = cfg.study.alpha;
    prob.M = cfg.pide.resolution;
    prob.b = nf.b;
    prob.d_o = nf.d_o;
    prob.d_f = nf.d_f;
    const ValueField v_star = sample_field(manufactured_value, prob.M);
    prob.r = interpolant(manufacture_reward(v_star, prob));

    const PerturbationShape shape =
        cfg.study.shape == "harmonic"  ? PerturbationShape::harmonic
        : cfg.study.shape == "bump"    ? PerturbationShape::bump
                                       : PerturbationShape::constant;
    const StudyResult res = perturbation_study(prob, cfg.study.epsilons,
                                               trials, cfg.study.seed, shape);
    io::write_study_csv(res, dir / "study.csv");
    io::write_study_summary(res, cfg.study.epsilons, trials,
                            dir / "study_summary.json");
    write_log(dir, {"command: reproduce study",
                    "trials: " + std::to_string(trials),
                    "slope: " + io::format_number(res.slope)});
    return kExitOk;
  }

  cfg.dataset.num_trajectories = std::max<Index>(
      1, static_cast<Index>(
             std::llround(cfg.dataset.num_trajectories * scale)));
  write_snapshot(cfg, dir);

  std::vector<Variant> variants;
  const bool censored = cfg.dataset.kind != "unbiased";
  if (no_tcf) variants.push_back({"without_tcf", false});
  else if (censored) variants = {{"with_tcf", true}, {"without_tcf", false}};
  else variants.push_back({cfg.fit.config.use_tcf ? "with_tcf" : "without_tcf",
                           cfg.fit.config.use_tcf});

  const NamedFields& truth = lookup_fields(cfg.dynamics.fields);
  const FourierBasis basis(static_cast<int>(cfg.fit.n_modes));
  const Index R = cfg.repeats;

  struct Row {
    Index repeat;
    std::string variant;
    std::array<Scalar, 3> err;
    bool converged;
  };
  std::vector<Row> rows(static_cast<std::size_t>(R) * variants.size());

  parallel_for(R, [&](Index r) {
    RunConfig local = cfg;
    local.dataset.seed = mix_seed(cfg.dataset.seed, static_cast<std::uint64_t>(r));
    const TrajectoryDataset ds = generate_dataset(local);
    char name[32];
    std::snprintf(name, sizeof(name), "repeat_%02lld",
                  static_cast<long long>(r));
    const fs::path rdir = dir / name;
    fs::create_directories(rdir);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      FitConfig fc = cfg.fit.config;
      fc.use_tcf = variants[v].use_tcf;
      const FitResult res =
          fit(ds, basis, cfg.dynamics.alpha, fc, cfg.fit.ct, cfg.fit.trt,
              mix_seed(local.dataset.seed, 1000 + v), tables());
      io::write_theta_json(res.theta_ma, cfg.fit.n_modes, cfg.dynamics.alpha,
                           &res, rdir / ("theta_" + variants[v].name + ".json"));
      rows[r * variants.size() + v] =
          Row{r, variants[v].name, field_errors(res.theta_ma, basis, truth),
              res.converged};
    }
  });

  {
    std::ofstream box(dir / "boxplot.csv", std::ios::binary);
    box << "example,repeat,variant,metric,value\n";
    static const char* metric[3] = {"rel_err_b", "rel_err_do", "rel_err_df"};
    for (const Row& row : rows)
      for (int l = 0; l < 3; ++l)
        box << id << ',' << row.repeat << ',' << row.variant << ','
            << metric[l] << ',' << io::format_number(row.err[l]) << '\n';
  }

  json summary;
  summary["schema_version"] = io::kSchemaVersion;
  summary["example"] = id;
  summary["repeats"] = R;
  summary["num_trajectories"] = cfg.dataset.num_trajectories;
  for (const Variant& v : variants) {
    std::array<std::vector<Scalar>, 3> vals;
    bool all_converged = true;
    for (const Row& row : rows)
      if (row.variant == v.name) {
        for (int l = 0; l < 3; ++l) vals[l].push_back(row.err[l]);
        all_converged = all_converged && row.converged;
      }
    json jm;
    static const char* metric[3] = {"rel_err_b", "rel_err_do", "rel_err_df"};
    for (int l = 0; l < 3; ++l) {
      std::sort(vals[l].begin(), vals[l].end());
      const std::size_t n = vals[l].size();
      const Scalar med = n % 2 ? vals[l][n / 2]
                               : 0.5 * (vals[l][n / 2 - 1] + vals[l][n / 2]);
      jm[std::string("median_") + metric[l]] = med;
    }
    jm["all_converged"] = all_converged;
    summary[v.name] = jm;
  }
  dump_json_file(summary, dir / "summary.json");
  write_log(dir, {"command: reproduce " + id,
                  "repeats: " + std::to_string(R),
                  "trajectories: " +
                      std::to_string(cfg.dataset.num_trajectories)});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jump-diffusion dataset generation, coefficient recovery, and "
               "policy evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_path, theta_path, example_id;
  std::uint64_t seed = 0;
  double scale = 1.0;
  bool no_tcf = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--out", out_dir, "artifact directory");
    cmd->add_option("--seed", seed, "override the command's RNG seed");
  };

  CLI::App* sim = app.add_subcommand("simulate", "generate a dataset");
  add_common(sim);

  CLI::App* fit_cmd = app.add_subcommand("fit", "recover coefficients");
  add_common(fit_cmd);
  fit_cmd->add_option("--dataset", dataset_path,
                      "dataset CSV (with sidecar meta)");
  fit_cmd->add_flag("--no-tcf", no_tcf, "pin the tail correction factor to 0");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "solve the value PIDE");
  add_common(eval_cmd);
  eval_cmd->add_option("--theta", theta_path, "fitted theta JSON");

  CLI::App* rep = app.add_subcommand(
      "reproduce", "run a bundled experiment end to end");
  rep->add_option("id", example_id, "4.1, 4.2, 4.3, 4.4, 4.5, or study")
      ->required();
  add_common(rep);
  rep->add_option("--scale", scale,
                  "multiply trajectory/trial counts (never dt or step limits)");
  rep->add_flag("--no-tcf", no_tcf, "drop the with-TCF variant");

  CLI::App* kdump = app.add_subcommand("kernel-dump",
                                       "dump density and gradient integrals");
  add_common(kdump);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(rep)) {
      RunConfig cfg = load_config(config_path, example_config(example_id));
      if (rep->count("--seed")) cfg.dataset.seed = seed;
      validate_config(cfg);
      require(scale > 0.0, "--scale: must be > 0");
      return cmd_reproduce(example_id, cfg, scale, no_tcf, out_dir);
    }

    RunConfig cfg = load_config(config_path);
    if (app.got_subcommand(sim)) {
      if (sim->count("--seed")) cfg.dataset.seed = seed;
      validate_config(cfg);
      return cmd_simulate(cfg, out_dir);
    }
    if (app.got_subcommand(fit_cmd)) {
      if (fit_cmd->count("--seed")) cfg.fit.seed = seed;
      if (no_tcf) cfg.fit.config.use_tcf = false;
      validate_config(cfg);
      return cmd_fit(cfg, dataset_path, out_dir);
    }
    if (app.got_subcommand(eval_cmd)) {
      validate_config(cfg);
      return cmd_evaluate(cfg, theta_path, out_dir);
    }
    if (app.got_subcommand(kdump)) {
      validate_config(cfg);
      return cmd_kernel_dump(cfg, out_dir);
    }
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const io::IoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const SimError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const RecoveryError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const PideError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitSolver;
  }
}
