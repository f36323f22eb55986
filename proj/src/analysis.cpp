#include "hapfuse/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hapfuse/tensor_file.hpp"
#include "hapfuse/util.hpp"
#include "json.hpp"

namespace hapfuse {

double pour_metric(const Episode& ep) {
  if (ep.task != TaskId::pour)
    throw std::invalid_argument("pour_metric: episode is not a pour episode");
  if (ep.hidden.empty()) throw std::invalid_argument("pour_metric: no hidden states");
  const Vec& last = ep.hidden.back();
  const bool spilled = last[2] > 0.5;
  if (spilled) return ep.container_height;
  return ep.container_height * (1.0 - last[1]);
}

double cabinet_score(double d_slide, double d_disp, double theta_rot, double alpha,
                     double beta, double gamma) {
  if (d_slide < 0 || d_disp < 0 || theta_rot < 0)
    throw std::invalid_argument("cabinet_score: measurements must be non-negative");
  return alpha * d_slide + beta * d_disp + gamma * theta_rot;
}

double latch_score(const Episode& ep) {
  if (ep.task != TaskId::latch)
    throw std::invalid_argument("latch_score: episode is not a latch episode");
  if (ep.hidden.empty()) throw std::invalid_argument("latch_score: no hidden states");
  const Vec& last = ep.hidden.back();
  return cabinet_score(1.0 - last[0], last[1], last[2]);
}

double episode_metric(const Episode& ep) {
  return ep.task == TaskId::pour ? pour_metric(ep) : latch_score(ep);
}

void EvalReport::finalize() {
  mean = 0.0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  stddev = std::sqrt(var / double(values.size()));
}

void EvalReport::check() const {
  EvalReport copy = *this;
  copy.finalize();
  if (std::abs(copy.mean - mean) > 1e-9 || std::abs(copy.stddev - stddev) > 1e-9)
    throw std::logic_error("EvalReport: stored mean/std inconsistent");
  if (values.size() != seeds.size())
    throw std::logic_error("EvalReport: seed/value count mismatch");
}

std::string EvalReport::to_tsv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << method << "\t" << to_string(task) << "\t" << values.size() << "\t" << mean
     << "\t" << stddev;
  return os.str();
}

std::vector<std::uint64_t> eval_seeds(std::uint64_t seed, int n_trials) {
  std::vector<std::uint64_t> seeds;
  Rng rng = Rng::stream(seed, "eval");
  for (int i = 0; i < n_trials; ++i) seeds.push_back(rng.next_u64());
  return seeds;
}

EvalReport run_eval(const Checkpoint& ck, const std::optional<WorldCfg>& world,
                    int n_trials, const std::vector<std::uint64_t>& seeds) {
  if (n_trials < 1) throw std::invalid_argument("run_eval: n_trials must be >= 1");
  if (int(seeds.size()) != n_trials)
    throw std::invalid_argument("run_eval: seed count must equal n_trials");

  EvalReport report;
  report.method = to_string(ck.cfg.model.fusion_mode);
  report.task = world ? world->task : ck.cfg.world.task;
  report.seeds = seeds;
  report.values.resize(n_trials);
  report.config_hash = hex64(ck.cfg.hash());

  RolloutOptions opts;
  opts.max_steps = -1;
  opts.world_override = world;
  opts.record_latents = false;
  parallel_for(n_trials, [&](int i) {
    report.values[i] = episode_metric(rollout_policy(ck, seeds[i], opts));
  });
  report.finalize();
  return report;
}

EvalReport run_expert_eval(const RunConfig& cfg, int n_trials,
                           const std::vector<std::uint64_t>& seeds) {
  EvalReport report;
  report.method = "scripted_expert";
  report.task = cfg.world.task;
  report.seeds = seeds;
  report.values.resize(n_trials);
  report.config_hash = hex64(cfg.hash());
  parallel_for(n_trials, [&](int i) {
    report.values[i] = episode_metric(rollout_expert(cfg, seeds[i]));
  });
  report.finalize();
  return report;
}

AblationResult ablation_suite(const std::filesystem::path& dataset_dir,
                              const RunConfig& base_cfg,
                              const std::vector<FusionMode>& modes,
                              std::uint64_t seed,
                              const std::filesystem::path& out_dir) {
  AblationResult result;
  const auto seeds = eval_seeds(seed, base_cfg.eval.trials);
  for (FusionMode mode : modes) {
    RunConfig cfg = base_cfg;
    cfg.model.fusion_mode = mode;
    const auto mode_dir = out_dir / to_string(mode);
    TrainResult tr = train_policy(dataset_dir, cfg, seed, mode_dir);
    Checkpoint ck = load_checkpoint(tr.checkpoint);
    AblationRow row;
    row.mode = mode;
    row.checkpoint = tr.checkpoint;
    row.report = run_eval(ck, std::nullopt, base_cfg.eval.trials, seeds);
    result.rows.push_back(std::move(row));
  }
  // pairwise orderings on the mean metric (lower is better)
  for (const auto& a : result.rows)
    for (const auto& b : result.rows) {
      if (a.mode == b.mode) continue;
      result.orderings[to_string(a.mode) + "<" + to_string(b.mode)] =
          a.report.mean < b.report.mean;
    }
  return result;
}

std::vector<GeneralizationRow> generalization_suite(const Checkpoint& ck,
                                                    const std::vector<int>& variants,
                                                    int n_trials, std::uint64_t seed) {
  std::vector<GeneralizationRow> rows;
  const auto seeds = eval_seeds(seed, n_trials);

  GeneralizationRow base;
  base.variant = 0;
  base.report = run_eval(ck, std::nullopt, n_trials, seeds);
  base.degradation = 0.0;
  rows.push_back(base);

  for (int v : variants) {
    const RunConfig shifted = shift_container(ck.cfg, v);
    GeneralizationRow row;
    row.variant = v;
    row.report = run_eval(ck, shifted.world, n_trials, seeds);
    row.degradation = row.report.mean - base.report.mean;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// PCA + KSG

Pca Pca::fit(const Mat& samples, int d_out) {
  const int n = int(samples.rows());
  const int d = int(samples.cols());
  if (n < 2) throw std::invalid_argument("pca: need at least two samples");
  d_out = std::min({d_out, d, n - 1});

  Pca pca;
  pca.mean = samples.colwise().mean().transpose();
  Mat centered = samples.rowwise() - pca.mean.transpose();
  Mat cov = centered.transpose() * centered / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  // eigenvalues ascending; take the top d_out, sign-fixed for determinism
  pca.components = Mat(d, d_out);
  for (int j = 0; j < d_out; ++j) {
    Vec v = eig.eigenvectors().col(d - 1 - j);
    int imax = 0;
    for (int i = 1; i < d; ++i)
      if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
    if (v[imax] < 0) v = -v;
    pca.components.col(j) = v;
  }
  return pca;
}

Mat Pca::project(const Mat& samples) const {
  return (samples.rowwise() - mean.transpose()) * components;
}

double digamma(double x) {
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  // asymptotic series through 1/x^8; error below 1e-12 for x >= 10
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 -
                 inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)));
}

MiEstimate ksg_mi(const Mat& x_raw, const Vec& y_raw, int k) {
  const int n = int(x_raw.rows());
  if (n != int(y_raw.size())) throw std::invalid_argument("ksg: sample count mismatch");
  if (n < 2 * k + 2) throw std::invalid_argument("ksg: too few samples");

  // standardize every marginal so the joint Chebyshev metric weighs the
  // spaces comparably; this also makes the estimate invariant to invertible
  // affine maps of y
  Mat x = x_raw;
  for (int j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - mu).square().mean());
    if (sd > 1e-12) x.col(j) = (x.col(j).array() - mu) / sd;
  }
  Vec y = y_raw;
  {
    const double mu = y.mean();
    const double sd = std::sqrt((y.array() - mu).square().mean());
    if (sd > 1e-12) y = (y.array() - mu) / sd;
  }

  std::vector<double> psi_nx(n), psi_ny(n);
  parallel_for(n, [&](int i) {
    // k-th nearest neighbor under the joint Chebyshev metric
    std::vector<double> dist(n);
    for (int j = 0; j < n; ++j) {
      if (j == i) {
        dist[j] = std::numeric_limits<double>::infinity();
        continue;
      }
      double dx = (x.row(i) - x.row(j)).cwiseAbs().maxCoeff();
      double dy = std::abs(y[i] - y[j]);
      dist[j] = std::max(dx, dy);
    }
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
    const double eps = sorted[k - 1];

    int nx = 0, ny = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if ((x.row(i) - x.row(j)).cwiseAbs().maxCoeff() < eps) ++nx;
      if (std::abs(y[i] - y[j]) < eps) ++ny;
    }
    psi_nx[i] = digamma(nx + 1.0);
    psi_ny[i] = digamma(ny + 1.0);
  });

  double avg = 0.0;
  for (int i = 0; i < n; ++i) avg += psi_nx[i] + psi_ny[i];
  avg /= double(n);

  MiEstimate est;
  est.raw = digamma(double(k)) + digamma(double(n)) - avg;
  est.clamped = std::max(0.0, est.raw);
  return est;
}

MiEstimate estimate_mi(const Mat& z_samples, const Vec& y_samples, int k, int d_reduce) {
  const int n = int(z_samples.rows());
  if (n < 2 * k + 2) throw std::invalid_argument("estimate_mi: too few samples");
  double ymean = y_samples.mean();
  double yvar = (y_samples.array() - ymean).square().mean();
  if (yvar < 1e-18)
    throw std::invalid_argument("estimate_mi: target variable has zero variance");
  const Pca pca = Pca::fit(z_samples, d_reduce);
  return ksg_mi(pca.project(z_samples), y_samples, k);
}

std::vector<MiRow> mi_suite(const std::vector<std::pair<std::string, Checkpoint>>& methods,
                            int n_rollouts, const MiCfg& mi_cfg, std::uint64_t seed) {
  std::vector<MiRow> rows;
  const auto seeds = eval_seeds(seed, n_rollouts);
  for (const auto& [name, ck] : methods) {
    std::vector<Episode> eps(n_rollouts);
    RolloutOptions opts;
    opts.max_steps = -1;
    opts.record_latents = true;
    parallel_for(n_rollouts, [&, ckp = &ck](int i) {
      eps[i] = rollout_policy(*ckp, seeds[i], opts);
    });

    std::vector<Vec> zs;
    std::vector<double> ys;
    for (const auto& ep : eps) {
      const double y = episode_metric(ep);
      for (const auto& z : ep.fused_latents) {
        zs.push_back(z);
        ys.push_back(y);
      }
    }
    MiRow row;
    row.method = name;
    row.n_samples = int(zs.size());
    if (!zs.empty()) {
      Mat z_mat(zs.size(), zs[0].size());
      for (std::size_t i = 0; i < zs.size(); ++i) z_mat.row(i) = zs[i].transpose();
      Vec y_vec = Eigen::Map<Vec>(ys.data(), long(ys.size()));
      try {
        row.mi = estimate_mi(z_mat, y_vec, mi_cfg.k, mi_cfg.d_reduce).clamped;
        row.valid = true;
      } catch (const std::exception& e) {
        row.valid = false;
        row.note = e.what();
      }
    } else {
      row.note = "no latent samples collected";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// report files

namespace {

void write_seeds_json(nlohmann::json& j, const EvalReport& r) {
  j["method"] = r.method;
  j["task"] = to_string(r.task);
  j["n_trials"] = r.values.size();
  j["mean"] = r.mean;
  j["std"] = r.stddev;
  j["values"] = r.values;
  j["seeds"] = r.seeds;
  j["config_hash"] = r.config_hash;
}

}  // namespace

void write_eval_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  std::ofstream tsv(dir / "eval.tsv");
  tsv << "method\ttask\tn\tmean\tstd\n" << report.to_tsv_row() << "\n";

  nlohmann::json j;
  write_seeds_json(j, report);
  std::ofstream js(dir / "eval.json");
  js << j.dump(2) << "\n";
}

void write_ablation_table(const std::filesystem::path& dir, const AblationResult& result) {
  std::filesystem::create_directories(dir);
  std::ofstream tsv(dir / "ablation.tsv");
  tsv << "method\ttask\tn\tmean\tstd\n";
  for (const auto& row : result.rows) tsv << row.report.to_tsv_row() << "\n";

  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : result.rows) {
    nlohmann::json r;
    write_seeds_json(r, row.report);
    r["checkpoint"] = row.checkpoint.string();
    j["rows"].push_back(r);
  }
  j["orderings"] = result.orderings;
  std::ofstream js(dir / "ablation.json");
  js << j.dump(2) << "\n";
}

void write_generalization_table(const std::filesystem::path& dir,
                                const std::vector<GeneralizationRow>& rows) {
  std::filesystem::create_directories(dir);
  std::ofstream tsv(dir / "generalization.tsv");
  tsv << "variant\tmethod\tn\tmean\tstd\tdegradation\n";
  tsv.precision(9);
  for (const auto& row : rows)
    tsv << row.variant << "\t" << row.report.method << "\t" << row.report.values.size()
        << "\t" << row.report.mean << "\t" << row.report.stddev << "\t"
        << row.degradation << "\n";

  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r;
    write_seeds_json(r, row.report);
    r["variant"] = row.variant;
    r["degradation"] = row.degradation;
    j.push_back(r);
  }
  std::ofstream js(dir / "generalization.json");
  js << j.dump(2) << "\n";
}

void write_mi_table(const std::filesystem::path& dir, const std::vector<MiRow>& rows) {
  std::filesystem::create_directories(dir);
  std::ofstream tsv(dir / "mi.tsv");
  tsv << "method\tn_samples\tmi_nats\tvalid\tnote\n";
  tsv.precision(9);
  for (const auto& row : rows)
    tsv << row.method << "\t" << row.n_samples << "\t" << row.mi << "\t"
        << (row.valid ? "yes" : "no") << "\t" << row.note << "\n";

  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : rows) {
    j.push_back({{"method", row.method},
                 {"n_samples", row.n_samples},
                 {"mi_nats", row.mi},
                 {"valid", row.valid},
                 {"note", row.note}});
  }
  std::ofstream js(dir / "mi.json");
  js << j.dump(2) << "\n";
}

}  // namespace hapfuse
