#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "levyctpe/levy_sim.hpp"
#include "levyctpe/recovery.hpp"
#include "levyctpe/value_pide.hpp"

namespace levyctpe::io {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

// Shortest decimal that round-trips to the same double.
std::string format_number(Scalar v);

// Trajectory datasets use `traj_id,step,time,state`, pair-level datasets
// `pair_id,t_current,x_current,t_next,x_next`; the sidecar JSON carries the
// generation metadata.
void write_dataset_csv(const TrajectoryDataset& ds,
                       const std::filesystem::path& csv);
void write_dataset_meta(const DatasetMeta& meta,
                        const std::filesystem::path& json);
TrajectoryDataset read_dataset(const std::filesystem::path& csv,
                               const std::filesystem::path& meta_json);

// Sidecar convention: <dir>/<stem>.csv + <dir>/<stem>.meta.json.
void write_dataset(const TrajectoryDataset& ds,
                   const std::filesystem::path& dir,
                   const std::string& stem = "dataset");
TrajectoryDataset read_dataset_stem(const std::filesystem::path& csv);

struct ThetaFile {
  ThetaMatrix theta;
  Index n_modes = 0;
  Scalar alpha = 0.0;
};

// `fit` may be null (e.g. a truth projection); the fit block is then omitted.
void write_theta_json(const ThetaMatrix& theta, Index n_modes, Scalar alpha,
                      const FitResult* fit, const std::filesystem::path& json);
ThetaFile read_theta_json(const std::filesystem::path& json);

// `step,tcf,pool,theta_b_0,...,theta_do_0,...,theta_df_0,...`; rows thinned
// to every `thin`-th step (the last step is always written).
void write_history_csv(const FitHistory& history, Index n_modes,
                       const std::filesystem::path& csv, Index thin = 1);

void write_value_csv(const Vector& grid, const Vector& v_hat,
                     const Vector* v_exact, const std::filesystem::path& csv);

void write_study_csv(const StudyResult& study, const std::filesystem::path& csv);
void write_study_summary(const StudyResult& study,
                         const std::vector<Scalar>& epsilons, Index trials,
                         const std::filesystem::path& json);

}  // namespace levyctpe::io
