#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "levyctpe/io.hpp"
#include "levyctpe/levy_sim.hpp"
#include "levyctpe/recovery.hpp"

using namespace levyctpe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("levyctpe_io_test_" + std::to_string(++counter));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream ss(slurp(p));
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

TrajectoryDataset tiny_dataset() {
  SdeSpec s;
  s.alpha = 0.6;
  s.b = [](Scalar) { return 5.0; };
  s.sigma_brownian = [](Scalar) { return std::sqrt(8.0); };
  s.sigma_levy = [](Scalar) { return std::pow(3.0, 1.0 / 1.2); };
  return generate_unbiased_dataset(s, uniform_init(), 4, 5, 0.025, 99);
}

}  // namespace

TEST_CASE("number formatting survives a parse round trip") {
  for (Scalar v : {0.0, 1.0, -1.0, 0.1, 2.0 / 3.0, 1e-300, -3.5e17,
                   3.141592653589793, 1.0000000000000002}) {
    const std::string s = io::format_number(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(io::format_number(1.0) == "1");
  CHECK(io::format_number(-2.5) == "-2.5");
}

TEST_CASE("trajectory dataset round trip") {
  const fs::path dir = scratch_dir();
  TrajectoryDataset ds = tiny_dataset();
  io::write_dataset(ds, dir);

  const auto header = lines_of(dir / "dataset.csv").front();
  CHECK(header == "traj_id,step,time,state");

  TrajectoryDataset back = io::read_dataset_stem(dir / "dataset.csv");
  REQUIRE(back.trajectories.size() == ds.trajectories.size());
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& a = ds.trajectories[i];
    const auto& b = back.trajectories[i];
    CHECK(a.traj_id == b.traj_id);
    REQUIRE(a.states.size() == b.states.size());
    for (Index j = 0; j < a.states.size(); ++j) {
      CHECK(a.times[j] == b.times[j]);
      CHECK(a.states[j] == b.states[j]);
    }
  }
  CHECK(back.meta.alpha == ds.meta.alpha);
  CHECK(back.meta.dt == ds.meta.dt);
  CHECK(back.meta.seed == ds.meta.seed);
  CHECK(back.meta.generator == GeneratorKind::unbiased);
  fs::remove_all(dir);
}

TEST_CASE("pair dataset round trip keeps censoring metadata") {
  const fs::path dir = scratch_dir();
  TrajectoryDataset ds = censor_by_filtering(tiny_dataset(), 20.0, 8.0, 0.0, 7);
  io::write_dataset(ds, dir, "pairs");

  const auto header = lines_of(dir / "pairs.csv").front();
  CHECK(header == "pair_id,t_current,x_current,t_next,x_next");

  TrajectoryDataset back = io::read_dataset_stem(dir / "pairs.csv");
  CHECK(back.is_pairs());
  REQUIRE(back.pairs.size() == ds.pairs.size());
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    CHECK(back.pairs[i].x_current == ds.pairs[i].x_current);
    CHECK(back.pairs[i].x_next == ds.pairs[i].x_next);
    CHECK(back.pairs[i].t_current == ds.pairs[i].t_current);
    CHECK(back.pairs[i].t_next == ds.pairs[i].t_next);
  }
  CHECK(back.meta.generator == GeneratorKind::filtered);
  CHECK(back.meta.censoring.trt == 20.0);
  CHECK(back.meta.censoring.ct == 8.0);
  CHECK(back.meta.censoring.drop_fraction == 0.0);
  CHECK(back.meta.derived_seed == ds.meta.derived_seed);
  fs::remove_all(dir);
}

TEST_CASE("missing files raise io errors") {
  CHECK_THROWS_AS(io::read_dataset_stem("/nonexistent/nowhere.csv"), io::IoError);
  CHECK_THROWS_AS(io::read_theta_json("/nonexistent/theta.json"), io::IoError);
}

TEST_CASE("theta file round trip") {
  const fs::path dir = scratch_dir();
  ThetaMatrix theta(3);
  theta.coef << 5.0, 0.1, -0.2, 4.0, 0.0, 0.3, 3.0, -0.5, 0.0;

  SUBCASE("without a fit block") {
    io::write_theta_json(theta, 1, 0.6, nullptr, dir / "t.json");
    io::ThetaFile back = io::read_theta_json(dir / "t.json");
    CHECK(back.n_modes == 1);
    CHECK(back.alpha == 0.6);
    CHECK((back.theta.coef - theta.coef).cwiseAbs().maxCoeff() == 0.0);
    CHECK(slurp(dir / "t.json").find("\"fit\"") == std::string::npos);
  }
  SUBCASE("with a fit block") {
    FitResult fit;
    fit.converged = true;
    fit.steps_run = 123;
    fit.final_tcf = 0.015;
    fit.ct_effective = 4.0;
    io::write_theta_json(theta, 1, 0.6, &fit, dir / "t.json");
    const std::string text = slurp(dir / "t.json");
    CHECK(text.find("\"steps_run\": 123") != std::string::npos);
    CHECK(text.find("\"converged\": true") != std::string::npos);
    io::ThetaFile back = io::read_theta_json(dir / "t.json");
    CHECK((back.theta.coef - theta.coef).cwiseAbs().maxCoeff() == 0.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("history csv shape and thinning") {
  const fs::path dir = scratch_dir();
  FitHistory h;
  const Index steps = 10;
  h.theta.resize(3, steps);
  for (Index i = 0; i < steps; ++i) {
    h.tcf.push_back(0.01 * static_cast<Scalar>(i));
    h.pool.push_back(i % 2 == 0 ? 0 : 1);
    h.theta.col(i) << 1.0 + i, 2.0 + i, 3.0 + i;
  }
  io::write_history_csv(h, 0, dir / "h.csv", 4);
  const auto ls = lines_of(dir / "h.csv");
  CHECK(ls.front() == "step,tcf,pool,theta_b_0,theta_do_0,theta_df_0");
  // 1-based steps 1, 5, 9 from the stride plus the forced last step 10
  REQUIRE(ls.size() == 5);
  CHECK(ls[1].substr(0, 2) == "1,");
  CHECK(ls[2].substr(0, 2) == "5,");
  CHECK(ls[3].substr(0, 2) == "9,");
  CHECK(ls[4].substr(0, 3) == "10,");

  io::write_history_csv(h, 0, dir / "h1.csv");
  CHECK(lines_of(dir / "h1.csv").size() == steps + 1);
  fs::remove_all(dir);
}

TEST_CASE("value csv with and without the exact column") {
  const fs::path dir = scratch_dir();
  Vector grid(2), v(2), ex(2);
  grid << 1.0, 2.0;
  v << 0.5, 0.25;
  ex << 0.5, 0.5;
  io::write_value_csv(grid, v, &ex, dir / "v.csv");
  auto ls = lines_of(dir / "v.csv");
  CHECK(ls.front() == "x,v_hat,v_exact,abs_err");
  REQUIRE(ls.size() == 3);
  CHECK(ls[2] == "2,0.25,0.5,0.25");

  io::write_value_csv(grid, v, nullptr, dir / "v2.csv");
  ls = lines_of(dir / "v2.csv");
  CHECK(ls.front() == "x,v_hat");
  fs::remove_all(dir);
}

TEST_CASE("study outputs") {
  const fs::path dir = scratch_dir();
  StudyResult res;
  res.rows = {{1e-3, 0, 0.5e-3, 0.4e-3}, {1e-3, 1, 0.7e-3, 0.6e-3},
              {1e-2, 0, 0.5e-2, 0.4e-2}, {1e-2, 1, 0.7e-2, 0.6e-2}};
  res.slope = 1.02;
  res.intercept = -0.7;
  res.slope_se = 0.01;
  res.rejected = 3;
  io::write_study_csv(res, dir / "s.csv");
  const auto ls = lines_of(dir / "s.csv");
  CHECK(ls.front() == "epsilon,trial,err_sup,err_l2");
  CHECK(ls.size() == 5);

  io::write_study_summary(res, {1e-3, 1e-2}, 2, dir / "s.json");
  const std::string text = slurp(dir / "s.json");
  CHECK(text.find("\"slope\": 1.02") != std::string::npos);
  CHECK(text.find("\"slope_ci95\"") != std::string::npos);
  CHECK(text.find("\"rejected\": 3") != std::string::npos);
  CHECK(text.find("\"trials\": 2") != std::string::npos);
  fs::remove_all(dir);
}

// ---------------- command-line interface ----------------

namespace {

#ifndef LEVY_CTPE_BIN
#error "LEVY_CTPE_BIN must point at the command-line binary"
#endif

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(LEVY_CTPE_BIN) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("cli simulate produces the expected row count") {
  const fs::path dir = scratch_dir();
  write_file(dir / "c.json",
             R"({"dataset": {"num_trajectories": 2, "steps": 3, "seed": 5}})");
  const int rc = run_cli("simulate --config " + (dir / "c.json").string() +
                             " --out " + (dir / "out").string(),
                         dir / "log.txt");
  REQUIRE(rc == 0);
  // 2 trajectories x (3 + 1) recorded states
  CHECK(lines_of(dir / "out" / "dataset.csv").size() == 9);
  CHECK(fs::exists(dir / "out" / "dataset.meta.json"));
  CHECK(fs::exists(dir / "out" / "config.json"));
  fs::remove_all(dir);
}

TEST_CASE("cli rejects malformed configuration") {
  const fs::path dir = scratch_dir();
  write_file(dir / "bad.json", R"({"dataset": {"num_traj": 2}})");
  CHECK(run_cli("simulate --config " + (dir / "bad.json").string() +
                    " --out " + (dir / "o1").string(),
                dir / "l1.txt") == 2);
  const std::string msg = slurp(dir / "l1.txt");
  CHECK(msg.find("dataset.num_traj") != std::string::npos);

  write_file(dir / "bad2.json", R"({"dynamics": {"fields": "nope"}})");
  CHECK(run_cli("simulate --config " + (dir / "bad2.json").string() +
                    " --out " + (dir / "o2").string(),
                dir / "l2.txt") == 2);

  CHECK(run_cli("simulate --config " + (dir / "missing.json").string() +
                    " --out " + (dir / "o3").string(),
                dir / "l3.txt") == 2);

  CHECK(run_cli("reproduce 9.9 --out " + (dir / "o4").string(),
                dir / "l4.txt") == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli fit exits with the data and convergence codes") {
  const fs::path dir = scratch_dir();
  CHECK(run_cli("fit --dataset " + (dir / "nothing.csv").string() + " --out " +
                    (dir / "o1").string(),
                dir / "l1.txt") == 3);

  // a fit too short to settle reports non-convergence
  write_file(dir / "c.json", R"({
    "dataset": {"num_trajectories": 60, "steps": 8, "seed": 3},
    "fit": {"step_limit": 120, "ma_window": 120, "batch": 20,
            "tcf_warmup": 50, "history_thin": 10}
  })");
  const int rc = run_cli("fit --config " + (dir / "c.json").string() +
                             " --out " + (dir / "out").string(),
                         dir / "l2.txt");
  CHECK(rc == 4);
  CHECK(fs::exists(dir / "out" / "theta.json"));
  CHECK(fs::exists(dir / "out" / "history.csv"));
  CHECK(fs::exists(dir / "out" / "metrics.json"));
  fs::remove_all(dir);
}

TEST_CASE("cli evaluate solves the constant problem") {
  const fs::path dir = scratch_dir();
  write_file(dir / "c.json", R"({
    "pide": {"reward": "constant", "reward_value": 0.25, "exact": "none",
             "resolution": 32}
  })");
  REQUIRE(run_cli("evaluate --config " + (dir / "c.json").string() +
                      " --out " + (dir / "out").string(),
                  dir / "log.txt") == 0);
  const auto ls = lines_of(dir / "out" / "value.csv");
  REQUIRE(ls.size() == 33);
  CHECK(ls.front() == "x,v_hat");
  // constant reward r under killing beta = 0.1: value = r / beta = 2.5
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto comma = ls[i].find(',');
    const Scalar v = std::strtod(ls[i].c_str() + comma + 1, nullptr);
    CHECK(v == doctest::Approx(2.5).epsilon(1e-9));
  }
  fs::remove_all(dir);
}

TEST_CASE("cli reruns from the written snapshot are byte-identical") {
  const fs::path dir = scratch_dir();
  write_file(dir / "c.json", R"({
    "dataset": {"num_trajectories": 5, "steps": 6, "seed": 11, "kind": "filtered",
                "censoring": {"trt": 20, "ct": 8, "drop_fraction": 0.5}}
  })");
  REQUIRE(run_cli("simulate --config " + (dir / "c.json").string() +
                      " --out " + (dir / "a").string(),
                  dir / "l1.txt") == 0);
  REQUIRE(run_cli("simulate --config " + (dir / "a" / "config.json").string() +
                      " --out " + (dir / "b").string(),
                  dir / "l2.txt") == 0);
  CHECK(slurp(dir / "a" / "dataset.csv") == slurp(dir / "b" / "dataset.csv"));
  CHECK(slurp(dir / "a" / "dataset.meta.json") ==
        slurp(dir / "b" / "dataset.meta.json"));
  CHECK(slurp(dir / "a" / "config.json") == slurp(dir / "b" / "config.json"));

  // thread count must not leak into any output
  const std::string threads = "LEVY_CTPE_THREADS=3 ";
  const std::string cmd = threads + LEVY_CTPE_BIN + " simulate --config " +
                          (dir / "a" / "config.json").string() + " --out " +
                          (dir / "t").string() + " > /dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(slurp(dir / "a" / "dataset.csv") == slurp(dir / "t" / "dataset.csv"));
  fs::remove_all(dir);
}

TEST_CASE("cli kernel dump round trips") {
  const fs::path dir = scratch_dir();
  write_file(dir / "c.json",
             R"({"kernel": {"alpha": 0.5, "t": 0.025, "d_o": 4, "d_f": 3,
                            "y_max": 20, "points": 5}})");
  REQUIRE(run_cli("kernel-dump --config " + (dir / "c.json").string() +
                      " --out " + (dir / "a").string(),
                  dir / "l1.txt") == 0);
  const std::string text = slurp(dir / "a" / "kernel.json");
  CHECK(text.find("\"density\"") != std::string::npos);
  CHECK(text.find("\"direct\"") != std::string::npos);  // y = 0 row
  CHECK(text.find("\"scaled\"") != std::string::npos);  // y = 20 row

  REQUIRE(run_cli("kernel-dump --config " +
                      (dir / "a" / "config.json").string() + " --out " +
                      (dir / "b").string(),
                  dir / "l2.txt") == 0);
  CHECK(text == slurp(dir / "b" / "kernel.json"));
  fs::remove_all(dir);
}
