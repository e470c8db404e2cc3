#include "levyctpe/io.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace levyctpe::io {

namespace {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

json load_json(const std::filesystem::path& path) {
  auto in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return j;
}

void dump_json(const json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

Scalar parse_number(const std::string& field, const std::string& where) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const Scalar v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw IoError(where + ": bad number \"" + field + "\"");
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

const char* generator_name(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::unbiased: return "unbiased";
    case GeneratorKind::filtered: return "filtered";
    case GeneratorKind::mcmc: return "mcmc";
  }
  throw IoError("unknown generator kind");
}

GeneratorKind generator_from_name(const std::string& name) {
  if (name == "unbiased") return GeneratorKind::unbiased;
  if (name == "filtered") return GeneratorKind::filtered;
  if (name == "mcmc") return GeneratorKind::mcmc;
  throw IoError("unknown generator \"" + name + "\"");
}

}  // namespace

std::string format_number(Scalar v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_dataset_csv(const TrajectoryDataset& ds,
                       const std::filesystem::path& csv) {
  auto out = open_out(csv);
  if (ds.is_pairs()) {
    out << "pair_id,t_current,x_current,t_next,x_next\n";
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
      const TransitionPair& p = ds.pairs[i];
      out << i << ',' << format_number(p.t_current) << ','
          << format_number(p.x_current) << ',' << format_number(p.t_next)
          << ',' << format_number(p.x_next) << '\n';
    }
  } else {
    out << "traj_id,step,time,state\n";
    for (const Trajectory& traj : ds.trajectories)
      for (Index j = 0; j < traj.times.size(); ++j)
        out << traj.traj_id << ',' << j << ','
            << format_number(traj.times[j]) << ','
            << format_number(traj.states[j]) << '\n';
  }
}

void write_dataset_meta(const DatasetMeta& meta,
                        const std::filesystem::path& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["alpha"] = meta.alpha;
  j["dt"] = meta.dt;
  j["generator"] = generator_name(meta.generator);
  j["seed"] = meta.seed;
  if (meta.generator == GeneratorKind::filtered)
    j["derived_seed"] = meta.derived_seed;
  json cens;
  cens["trt"] = meta.censoring.trt;
  cens["ct"] = meta.censoring.ct;
  cens["drop_fraction"] = meta.censoring.drop_fraction;
  cens["burn_in"] = meta.censoring.burn_in;
  j["censoring"] = cens;
  dump_json(j, path);
}

void write_dataset(const TrajectoryDataset& ds,
                   const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  write_dataset_csv(ds, dir / (stem + ".csv"));
  write_dataset_meta(ds.meta, dir / (stem + ".meta.json"));
}

TrajectoryDataset read_dataset(const std::filesystem::path& csv,
                               const std::filesystem::path& meta_json) {
  TrajectoryDataset ds;

  const json meta = load_json(meta_json);
  try {
    ds.meta.alpha = meta.at("alpha").get<Scalar>();
    ds.meta.dt = meta.at("dt").get<Scalar>();
    ds.meta.generator = generator_from_name(meta.at("generator").get<std::string>());
    ds.meta.seed = meta.at("seed").get<std::uint64_t>();
    if (meta.contains("derived_seed"))
      ds.meta.derived_seed = meta.at("derived_seed").get<std::uint64_t>();
    const json& cens = meta.at("censoring");
    ds.meta.censoring.trt = cens.at("trt").get<Scalar>();
    ds.meta.censoring.ct = cens.at("ct").get<Scalar>();
    ds.meta.censoring.drop_fraction = cens.at("drop_fraction").get<Scalar>();
    ds.meta.censoring.burn_in = cens.at("burn_in").get<Index>();
  } catch (const json::exception& e) {
    throw IoError(meta_json.string() + ": " + e.what());
  }

  auto in = open_in(csv);
  std::string line;
  if (!std::getline(in, line)) throw IoError(csv.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::string where = csv.string();
  std::size_t row = 1;
  if (line == "pair_id,t_current,x_current,t_next,x_next") {
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      ++row;
      const auto f = split_csv_line(line);
      if (f.size() != 5)
        throw IoError(where + ":" + std::to_string(row) + ": want 5 fields");
      TransitionPair p;
      p.t_current = parse_number(f[1], where);
      p.x_current = parse_number(f[2], where);
      p.t_next = parse_number(f[3], where);
      p.x_next = parse_number(f[4], where);
      ds.pairs.push_back(p);
    }
  } else if (line == "traj_id,step,time,state") {
    long long current_id = -1;
    std::vector<Scalar> times, states;
    auto flush = [&]() {
      if (current_id < 0) return;
      Trajectory traj;
      traj.traj_id = static_cast<Index>(current_id);
      traj.times = Eigen::Map<const Vector>(times.data(), times.size());
      traj.states = Eigen::Map<const Vector>(states.data(), states.size());
      ds.trajectories.push_back(std::move(traj));
      times.clear();
      states.clear();
    };
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      ++row;
      const auto f = split_csv_line(line);
      if (f.size() != 4)
        throw IoError(where + ":" + std::to_string(row) + ": want 4 fields");
      const long long id = std::stoll(f[0]);
      if (id != current_id) {
        flush();
        current_id = id;
      }
      times.push_back(parse_number(f[2], where));
      states.push_back(parse_number(f[3], where));
    }
    flush();
  } else {
    throw IoError(where + ": unrecognized header \"" + line + "\"");
  }
  if (ds.trajectories.empty() && ds.pairs.empty())
    throw IoError(where + ": no data rows");
  return ds;
}

TrajectoryDataset read_dataset_stem(const std::filesystem::path& csv) {
  std::filesystem::path meta = csv;
  meta.replace_extension(".meta.json");
  return read_dataset(csv, meta);
}

void write_theta_json(const ThetaMatrix& theta, Index n_modes, Scalar alpha,
                      const FitResult* fit, const std::filesystem::path& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["basis"] = {{"n_modes", n_modes}};
  json rows = json::array();
  for (Index l = 0; l < 3; ++l) {
    json r = json::array();
    for (Index k = 0; k < theta.coef.cols(); ++k) r.push_back(theta.coef(l, k));
    rows.push_back(r);
  }
  j["theta"] = rows;
  j["alpha"] = alpha;
  if (fit) {
    j["fit"] = {{"steps_run", fit->steps_run},
                {"converged", fit->converged},
                {"final_tcf", fit->final_tcf},
                {"ct_effective", fit->ct_effective}};
  }
  dump_json(j, path);
}

ThetaFile read_theta_json(const std::filesystem::path& path) {
  const json j = load_json(path);
  ThetaFile f;
  try {
    f.n_modes = j.at("basis").at("n_modes").get<Index>();
    f.alpha = j.at("alpha").get<Scalar>();
    const json& rows = j.at("theta");
    if (rows.size() != 3) throw IoError(path.string() + ": want 3 theta rows");
    const Index K = 2 * f.n_modes + 1;
    if (static_cast<Index>(rows[0].size()) != K)
      throw IoError(path.string() + ": theta row length != 2*n_modes+1");
    f.theta.coef.resize(3, K);
    for (Index l = 0; l < 3; ++l)
      for (Index k = 0; k < K; ++k)
        f.theta.coef(l, k) = rows[l][k].get<Scalar>();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return f;
}

void write_history_csv(const FitHistory& history, Index n_modes,
                       const std::filesystem::path& csv, Index thin) {
  if (thin < 1) thin = 1;
  const Index K = 2 * n_modes + 1;
  const Index steps = history.theta.cols();
  if (history.theta.rows() != 3 * K)
    throw IoError("write_history_csv: theta rows != 3*(2*n_modes+1)");
  auto out = open_out(csv);
  out << "step,tcf,pool";
  static const char* part[3] = {"b", "do", "df"};
  for (int l = 0; l < 3; ++l)
    for (Index k = 0; k < K; ++k) out << ",theta_" << part[l] << '_' << k;
  out << '\n';
  for (Index i = 0; i < steps; ++i) {
    if (i % thin != 0 && i != steps - 1) continue;
    out << (i + 1) << ',' << format_number(history.tcf[i]) << ','
        << history.pool[i];
    for (Index c = 0; c < 3 * K; ++c)
      out << ',' << format_number(history.theta(c, i));
    out << '\n';
  }
}

void write_value_csv(const Vector& grid, const Vector& v_hat,
                     const Vector* v_exact, const std::filesystem::path& csv) {
  if (grid.size() != v_hat.size() ||
      (v_exact && v_exact->size() != grid.size()))
    throw IoError("write_value_csv: size mismatch");
  auto out = open_out(csv);
  out << (v_exact ? "x,v_hat,v_exact,abs_err\n" : "x,v_hat\n");
  for (Index i = 0; i < grid.size(); ++i) {
    out << format_number(grid[i]) << ',' << format_number(v_hat[i]);
    if (v_exact)
      out << ',' << format_number((*v_exact)[i]) << ','
          << format_number(std::abs(v_hat[i] - (*v_exact)[i]));
    out << '\n';
  }
}

void write_study_csv(const StudyResult& study,
                     const std::filesystem::path& csv) {
  auto out = open_out(csv);
  out << "epsilon,trial,err_sup,err_l2\n";
  for (const StudyRow& r : study.rows)
    out << format_number(r.epsilon) << ',' << r.trial << ','
        << format_number(r.err_sup) << ',' << format_number(r.err_l2) << '\n';
}

void write_study_summary(const StudyResult& study,
                         const std::vector<Scalar>& epsilons, Index trials,
                         const std::filesystem::path& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["epsilons"] = epsilons;
  j["trials"] = trials;
  j["rejected"] = study.rejected;
  j["slope"] = study.slope;
  j["intercept"] = study.intercept;
  j["slope_se"] = study.slope_se;
  j["slope_ci95"] = {study.slope - 1.96 * study.slope_se,
                     study.slope + 1.96 * study.slope_se};
  dump_json(j, path);
}

}  // namespace levyctpe::io
