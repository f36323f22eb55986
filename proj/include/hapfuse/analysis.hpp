#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hapfuse/config.hpp"
#include "hapfuse/policy.hpp"
#include "hapfuse/world.hpp"

namespace hapfuse {

/// Air-column analog for the pouring task: container_height * (1 - final
/// fill); a spilled episode scores the full container height. Lower is
/// better.
double pour_metric(const Episode& ep);

/// S = alpha * d_slide + beta * d_disp + gamma * theta_rot. Defaults carry
/// the published weighting (0.3, 0.3, 0.4).
double cabinet_score(double d_slide, double d_disp, double theta_rot,
                     double alpha = 0.3, double beta = 0.3, double gamma = 0.4);

double latch_score(const Episode& ep);

/// Task-appropriate score for any episode.
double episode_metric(const Episode& ep);

struct EvalReport {
  std::string method;
  TaskId task = TaskId::pour;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::string config_hash;

  void finalize();      // recompute mean/std from values
  void check() const;   // mean/std self-consistency within 1e-9
  std::string to_tsv_row() const;
};

/// n_trials policy rollouts under distinct seeds.
EvalReport run_eval(const Checkpoint& ck, const std::optional<WorldCfg>& world,
                    int n_trials, const std::vector<std::uint64_t>& seeds);

/// Evaluation of the scripted expert through the same harness.
EvalReport run_expert_eval(const RunConfig& cfg, int n_trials,
                           const std::vector<std::uint64_t>& seeds);

std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, int n_trials);

struct AblationRow {
  FusionMode mode;
  EvalReport report;
  std::filesystem::path checkpoint;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::map<std::string, bool> orderings;  // e.g. "hierarchical<concat_ps"
};

/// Trains one policy per fusion mode under identical data, seeds and
/// hyperparameters, then evaluates each.
AblationResult ablation_suite(const std::filesystem::path& dataset_dir,
                              const RunConfig& base_cfg,
                              const std::vector<FusionMode>& modes,
                              std::uint64_t seed,
                              const std::filesystem::path& out_dir);

struct GeneralizationRow {
  int variant = 0;  // 0 = base container
  EvalReport report;
  double degradation = 0.0;  // mean - base mean
};

std::vector<GeneralizationRow> generalization_suite(const Checkpoint& ck,
                                                    const std::vector<int>& variants,
                                                    int n_trials, std::uint64_t seed);

// ---------------------------------------------------------------------------
// mutual information

struct Pca {
  Vec mean;
  Mat components;  // d_in x d_out

  static Pca fit(const Mat& samples, int d_out);
  Mat project(const Mat& samples) const;
};

struct MiEstimate {
  double raw = 0.0;      // KSG estimate, may be slightly negative
  double clamped = 0.0;  // max(0, raw)
};

/// Kraskov-Stoegbauer-Grassberger estimator 1 between a d-dimensional X and
/// scalar y, with Chebyshev distances and k nearest neighbors.
MiEstimate ksg_mi(const Mat& x, const Vec& y, int k);

/// PCA to d_reduce dimensions, then KSG. Throws on degenerate y or when
/// n < 2k + 2.
MiEstimate estimate_mi(const Mat& z_samples, const Vec& y_samples, int k, int d_reduce);

struct MiRow {
  std::string method;
  int n_samples = 0;
  double mi = 0.0;
  bool valid = false;
  std::string note;
};

/// Collects (z_t, y) pairs from policy rollouts (one z per decision step,
/// y = the episode metric) and estimates I(z; y) per method.
std::vector<MiRow> mi_suite(const std::vector<std::pair<std::string, Checkpoint>>& methods,
                            int n_rollouts, const MiCfg& mi_cfg, std::uint64_t seed);

double digamma(double x);

// ---------------------------------------------------------------------------
// report files

void write_eval_report(const std::filesystem::path& dir, const EvalReport& report);
void write_ablation_table(const std::filesystem::path& dir, const AblationResult& result);
void write_generalization_table(const std::filesystem::path& dir,
                                const std::vector<GeneralizationRow>& rows);
void write_mi_table(const std::filesystem::path& dir, const std::vector<MiRow>& rows);

}  // namespace hapfuse
