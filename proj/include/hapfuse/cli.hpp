#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hapfuse/config.hpp"

namespace hapfuse {

/// Command misuse or invalid configuration (exit code 1); other failures
/// exit with 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonArgs {
  std::filesystem::path config_path;  // empty -> built-in defaults
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
};

RunConfig load_config_or_default(const std::filesystem::path& path, TaskId fallback);

/// Writes out_dir/run.meta (the only artifact allowed to carry timestamps).
void write_run_meta(const std::filesystem::path& out_dir, const std::string& command,
                    const RunConfig& cfg, std::uint64_t seed);

void cmd_gen_data(const CommonArgs& args, int n_episodes);
void cmd_pretrain(const CommonArgs& args, const std::filesystem::path& data_dir);
void cmd_train(const CommonArgs& args, const std::filesystem::path& data_dir,
               const std::string& mode_override, const std::string& exec_slice_override,
               const std::filesystem::path& resume, int stop_after = 0);
void cmd_eval(const std::filesystem::path& ckpt, const std::filesystem::path& out_dir,
              int trials, std::uint64_t seed, int variant);
void cmd_ablate(const CommonArgs& args, const std::filesystem::path& data_dir,
                const std::vector<std::string>& modes);
void cmd_generalize(const std::filesystem::path& ckpt, const std::filesystem::path& out_dir,
                    const std::vector<int>& variants, int trials, std::uint64_t seed);
void cmd_mi(const std::vector<std::string>& method_ckpts,
            const std::filesystem::path& out_dir, int rollouts, std::uint64_t seed);
void cmd_plot(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir);
void cmd_metric(double d_slide, double d_disp, double theta_rot, double alpha,
                double beta, double gamma);

}  // namespace hapfuse
