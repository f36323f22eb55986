#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hapfuse/config.hpp"
#include "hapfuse/world.hpp"

namespace hapfuse {

/// One directory per episode: waveform / pointclouds / proprio / actions /
/// hidden as MMEP float32 arrays plus a `meta` key=value file. Arrays round-
/// trip bit-exactly.
void save_episode(const std::filesystem::path& dir, const Episode& ep);
Episode load_episode(const std::filesystem::path& dir);

/// Digest over the episode's files in a fixed order.
std::string episode_digest(const std::filesystem::path& dir);

struct DatasetInfo {
  TaskId task = TaskId::pour;
  int n_episodes = 0;
  int episode_length = 0;
  std::string digest;
  std::vector<std::string> episode_dirs;  // relative names, in order
};

/// Generates n successful scripted-expert episodes. Episodes that fail the
/// task are regenerated from perturbed seeds and never stored; throws if the
/// expert succeeds on fewer than half of its attempts.
DatasetInfo generate_dataset(const RunConfig& cfg, int n_episodes,
                             std::uint64_t seed, const std::filesystem::path& out_dir);

DatasetInfo read_manifest(const std::filesystem::path& dataset_dir);
std::vector<Episode> load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace hapfuse
