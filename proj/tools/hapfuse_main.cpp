#include <iostream>

#include "CLI11.hpp"
#include "hapfuse/cli.hpp"

using namespace hapfuse;

int main(int argc, char** argv) {
  CLI::App app{"hierarchical audio-visual-proprioceptive fusion policy toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt, mode, exec_slice, resume, in_dir;
  std::uint64_t seed = 0;
  int n_episodes = 50, trials = 20, variant = 0, rollouts = 30;
  std::vector<std::string> modes, method_ckpts;
  std::vector<int> variants = {1, 2, 3, 4};
  double d_slide = 0, d_disp = 0, theta_rot = 0;
  double alpha = 0.3, beta = 0.3, gamma = 0.4;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file");
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed", seed, "master seed");
  };

  auto* gen = app.add_subcommand("gen-data", "generate an expert dataset");
  add_common(gen);
  gen->add_option("--n", n_episodes, "number of episodes");

  auto* pre = app.add_subcommand("pretrain", "audio-proprio encoder pretraining");
  add_common(pre);
  pre->add_option("--data", data_dir, "dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a diffusion policy");
  add_common(train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--mode", mode,
                    "fusion mode {hierarchical,bbfm_only,imm_only,concat_ps,"
                    "concat_aps,transformer_maniwav}");
  train->add_option("--exec-slice", exec_slice, "executed chunk slice {first,last}");
  train->add_option("--resume", resume, "checkpoint to resume from");
  int stop_after = 0;
  train->add_option("--stop-after", stop_after,
                    "interrupt after this step (0 = run to completion)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "policy checkpoint")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--trials", trials, "number of rollouts");
  eval->add_option("--seed", seed, "master seed");
  eval->add_option("--variant", variant, "container variant (0 = base)");

  auto* ablate = app.add_subcommand("ablate", "train and compare fusion modes");
  add_common(ablate);
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--modes", modes, "fusion modes to compare")->required();

  auto* gen17 = app.add_subcommand("generalize", "zero-shot container variants");
  gen17->add_option("--ckpt", ckpt, "policy checkpoint")->required();
  gen17->add_option("--out", out_dir, "output directory")->required();
  gen17->add_option("--variants", variants, "variant ids");
  gen17->add_option("--trials", trials, "number of rollouts per variant");
  gen17->add_option("--seed", seed, "master seed");

  auto* mi = app.add_subcommand("mi", "mutual information between z and outcome");
  mi->add_option("--ckpt", method_ckpts, "NAME=PATH checkpoint specs")->required();
  mi->add_option("--out", out_dir, "output directory")->required();
  mi->add_option("--rollouts", rollouts, "rollouts per method");
  mi->add_option("--seed", seed, "master seed");

  auto* plot = app.add_subcommand("plot", "render report files as SVG charts");
  plot->add_option("--in", in_dir, "run or report directory")->required();
  plot->add_option("--out", out_dir, "output directory")->required();

  auto* metric = app.add_subcommand("metric", "cabinet score calculator");
  metric->add_option("d_slide", d_slide, "remaining sliding distance")->required();
  metric->add_option("d_disp", d_disp, "base displacement")->required();
  metric->add_option("theta_rot", theta_rot, "base rotation")->required();
  metric->add_option("--alpha", alpha, "weight of d_slide");
  metric->add_option("--beta", beta, "weight of d_disp");
  metric->add_option("--gamma", gamma, "weight of theta_rot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  CommonArgs args{config_path, out_dir, seed};
  try {
    if (gen->parsed()) cmd_gen_data(args, n_episodes);
    if (pre->parsed()) cmd_pretrain(args, data_dir);
    if (train->parsed()) cmd_train(args, data_dir, mode, exec_slice, resume, stop_after);
    if (eval->parsed()) cmd_eval(ckpt, out_dir, trials, seed, variant);
    if (ablate->parsed()) cmd_ablate(args, data_dir, modes);
    if (gen17->parsed()) cmd_generalize(ckpt, out_dir, variants, trials, seed);
    if (mi->parsed()) cmd_mi(method_ckpts, out_dir, rollouts, seed);
    if (plot->parsed()) cmd_plot(in_dir, out_dir);
    if (metric->parsed()) cmd_metric(d_slide, d_disp, theta_rot, alpha, beta, gamma);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
