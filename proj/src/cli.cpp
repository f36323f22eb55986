#include "hapfuse/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hapfuse/analysis.hpp"
#include "hapfuse/episode_io.hpp"
#include "hapfuse/plotting.hpp"
#include "hapfuse/policy.hpp"
#include "hapfuse/tensor_file.hpp"

namespace hapfuse {

namespace {

constexpr const char* kVersion = "hapfuse 0.1.0";

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

Checkpoint load_ckpt_or_usage(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw UsageError("checkpoint not found: " + path.string());
  return load_checkpoint(path);
}

}  // namespace

RunConfig load_config_or_default(const std::filesystem::path& path, TaskId fallback) {
  if (path.empty()) return default_config(fallback);
  try {
    return load_config_file(path);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

void write_run_meta(const std::filesystem::path& out_dir, const std::string& command,
                    const RunConfig& cfg, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  std::ofstream meta(out_dir / "run.meta");
  meta << "command = " << command << "\n";
  meta << "version = " << kVersion << "\n";
  meta << "config_hash = " << hex64(cfg.hash()) << "\n";
  meta << "seed = " << seed << "\n";
  meta << "timestamp = " << now_iso8601() << "\n";
  // full config snapshot for provenance
  std::ofstream cfg_out(out_dir / "config.used");
  cfg_out << cfg.serialize();
}

void cmd_gen_data(const CommonArgs& args, int n_episodes) {
  const RunConfig cfg = load_config_or_default(args.config_path, TaskId::pour);
  if (n_episodes < 1) throw UsageError("gen-data: --n must be >= 1");
  write_run_meta(args.out_dir, "gen-data", cfg, args.seed);
  const DatasetInfo info = generate_dataset(cfg, n_episodes, args.seed, args.out_dir);
  std::cout << "generated " << info.n_episodes << " episodes (digest " << info.digest
            << ") in " << args.out_dir.string() << "\n";
}

void cmd_pretrain(const CommonArgs& args, const std::filesystem::path& data_dir) {
  const RunConfig cfg = load_config_or_default(args.config_path, TaskId::pour);
  write_run_meta(args.out_dir, "pretrain", cfg, args.seed);
  const TrainResult res = pretrain_encoders(data_dir, cfg, args.seed, args.out_dir);
  std::cout << "pretrained encoders: final loss " << res.final_loss << " (ema "
            << res.final_loss_ema << ") -> " << res.checkpoint.string() << "\n";
}

void cmd_train(const CommonArgs& args, const std::filesystem::path& data_dir,
               const std::string& mode_override, const std::string& exec_slice_override,
               const std::filesystem::path& resume, int stop_after) {
  RunConfig cfg = load_config_or_default(args.config_path, TaskId::pour);
  try {
    if (!mode_override.empty()) cfg.model.fusion_mode = parse_fusion_mode(mode_override);
    if (!exec_slice_override.empty())
      cfg.model.exec_slice = parse_exec_slice(exec_slice_override);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  write_run_meta(args.out_dir, "train", cfg, args.seed);
  const TrainResult res =
      train_policy(data_dir, cfg, args.seed, args.out_dir, resume, stop_after);
  std::cout << "trained " << to_string(cfg.model.fusion_mode) << ": final loss "
            << res.final_loss << " (ema " << res.final_loss_ema << ") -> "
            << res.checkpoint.string() << "\n";
}

void cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& out_dir,
              int trials, std::uint64_t seed, int variant) {
  const Checkpoint ck = load_ckpt_or_usage(ckpt);
  if (trials < 1) throw UsageError("eval: --trials must be >= 1");
  write_run_meta(out_dir, "eval", ck.cfg, seed);

  std::optional<WorldCfg> world;
  if (variant != 0) world = shift_container(ck.cfg, variant).world;
  const auto seeds = eval_seeds(seed, trials);
  EvalReport report = run_eval(ck, world, trials, seeds);
  report.check();
  write_eval_report(out_dir, report);
  std::cout << report.method << " on " << to_string(report.task)
            << (variant ? " variant " + std::to_string(variant) : std::string())
            << ": " << report.mean << " +- " << report.stddev << " over " << trials
            << " trials\n";
}

void cmd_ablate(const CommonArgs& args, const std::filesystem::path& data_dir,
                const std::vector<std::string>& mode_names) {
  const RunConfig cfg = load_config_or_default(args.config_path, TaskId::pour);
  std::vector<FusionMode> modes;
  try {
    for (const auto& m : mode_names) modes.push_back(parse_fusion_mode(m));
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (modes.empty()) throw UsageError("ablate: no fusion modes given");
  write_run_meta(args.out_dir, "ablate", cfg, args.seed);
  const AblationResult result = ablation_suite(data_dir, cfg, modes, args.seed, args.out_dir);
  write_ablation_table(args.out_dir, result);
  for (const auto& row : result.rows)
    std::cout << row.report.to_tsv_row() << "\n";
}

void cmd_generalize(const std::filesystem::path& ckpt, const std::filesystem::path& out_dir,
                    const std::vector<int>& variants, int trials, std::uint64_t seed) {
  const Checkpoint ck = load_ckpt_or_usage(ckpt);
  write_run_meta(out_dir, "generalize", ck.cfg, seed);
  const auto rows = generalization_suite(ck, variants, trials, seed);
  write_generalization_table(out_dir, rows);
  for (const auto& row : rows)
    std::cout << "variant " << row.variant << ": " << row.report.mean << " +- "
              << row.report.stddev << " (degradation " << row.degradation << ")\n";
}

void cmd_mi(const std::vector<std::string>& method_ckpts,
            const std::filesystem::path& out_dir, int rollouts, std::uint64_t seed) {
  std::vector<std::pair<std::string, Checkpoint>> methods;
  for (const auto& spec : method_ckpts) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw UsageError("mi: --ckpt expects NAME=PATH, got '" + spec + "'");
    methods.emplace_back(spec.substr(0, eq), load_ckpt_or_usage(spec.substr(eq + 1)));
  }
  if (methods.empty()) throw UsageError("mi: no checkpoints given");
  write_run_meta(out_dir, "mi", methods.front().second.cfg, seed);
  const auto rows =
      mi_suite(methods, rollouts, methods.front().second.cfg.mi, seed);
  write_mi_table(out_dir, rows);
  for (const auto& row : rows)
    std::cout << row.method << ": " << (row.valid ? std::to_string(row.mi) : "invalid")
              << " nats (" << row.n_samples << " samples)"
              << (row.note.empty() ? "" : " [" + row.note + "]") << "\n";
}

void cmd_plot(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir) {
  if (!std::filesystem::exists(in_dir))
    throw UsageError("plot: input directory not found: " + in_dir.string());
  std::filesystem::create_directories(out_dir);
  bool produced = false;

  const auto metrics = in_dir / "metrics.tsv";
  if (std::filesystem::exists(metrics)) {
    std::ifstream f(metrics);
    std::vector<double> xs, ys;
    double step, loss, lr;
    while (f >> step >> loss >> lr) {
      xs.push_back(step);
      ys.push_back(loss);
    }
    if (xs.size() >= 2) {
      svg_line_chart(out_dir / "loss_curve.svg", "training loss", xs, ys);
      produced = true;
    }
  }

  auto plot_table = [&](const std::filesystem::path& file, const std::string& title,
                        const std::string& out_name, int label_col, int value_col) {
    if (!std::filesystem::exists(file)) return;
    std::ifstream f(file);
    std::string line;
    std::getline(f, line);  // header
    std::vector<std::string> labels;
    std::vector<double> values;
    while (std::getline(f, line)) {
      std::istringstream is(line);
      std::vector<std::string> cols;
      std::string c;
      while (std::getline(is, c, '\t')) cols.push_back(c);
      if (int(cols.size()) <= std::max(label_col, value_col)) continue;
      labels.push_back(cols[label_col]);
      values.push_back(std::stod(cols[value_col]));
    }
    if (!labels.empty()) {
      svg_bar_chart(out_dir / out_name, title, labels, values);
      produced = true;
    }
  };

  plot_table(in_dir / "ablation.tsv", "metric by fusion mode", "ablation.svg", 0, 3);
  plot_table(in_dir / "eval.tsv", "evaluation metric", "eval.svg", 0, 3);
  plot_table(in_dir / "mi.tsv", "mutual information (nats)", "mi.svg", 0, 2);
  plot_table(in_dir / "generalization.tsv", "metric by container variant",
             "generalization.svg", 0, 3);

  if (!produced)
    throw UsageError("plot: no plottable files under " + in_dir.string());
  std::cout << "plots written to " << out_dir.string() << "\n";
}

void cmd_metric(double d_slide, double d_disp, double theta_rot, double alpha,
                double beta, double gamma) {
  double score;
  try {
    score = cabinet_score(d_slide, d_disp, theta_rot, alpha, beta, gamma);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  std::printf("%.4f\n", score);
}

}  // namespace hapfuse
