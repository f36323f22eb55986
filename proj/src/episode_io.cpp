#include "hapfuse/episode_io.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "hapfuse/tensor_file.hpp"

namespace hapfuse {

namespace {

const char* kStreamFiles[] = {"waveform.mmep", "pointclouds.mmep", "proprio.mmep",
                              "actions.mmep", "hidden.mmep", "meta"};

ArrayF32 pack_rows(const std::vector<Vec>& rows) {
  ArrayF32 a;
  const std::uint32_t n = std::uint32_t(rows.size());
  const std::uint32_t d = n ? std::uint32_t(rows[0].size()) : 0;
  a.dims = {n, d};
  a.data.reserve(std::size_t(n) * d);
  for (const auto& r : rows)
    for (int j = 0; j < r.size(); ++j) a.data.push_back(float(r[j]));
  return a;
}

std::vector<Vec> unpack_rows(const ArrayF32& a) {
  if (a.dims.size() != 2) throw std::runtime_error("expected rank-2 array");
  std::vector<Vec> rows(a.dims[0]);
  for (std::uint32_t i = 0; i < a.dims[0]; ++i) {
    Vec v(a.dims[1]);
    for (std::uint32_t j = 0; j < a.dims[1]; ++j)
      v[j] = a.data[std::size_t(i) * a.dims[1] + j];
    rows[i] = v;
  }
  return rows;
}

std::map<std::string, std::string> read_kv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string k = line.substr(0, eq);
    std::string v = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    };
    strip(k);
    strip(v);
    kv[k] = v;
  }
  return kv;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void save_episode(const std::filesystem::path& dir, const Episode& ep) {
  std::filesystem::create_directories(dir);

  ArrayF32 wav;
  wav.dims = {std::uint32_t(ep.waveform.size())};
  wav.data.assign(ep.waveform.begin(), ep.waveform.end());
  write_array_file(dir / "waveform.mmep", wav);

  ArrayF32 clouds;
  const std::uint32_t L = std::uint32_t(ep.clouds.size());
  const std::uint32_t K = L ? std::uint32_t(ep.clouds[0].rows()) : 0;
  clouds.dims = {L, K, 3};
  clouds.data.reserve(std::size_t(L) * K * 3);
  for (const auto& c : ep.clouds)
    for (int i = 0; i < c.rows(); ++i)
      for (int j = 0; j < 3; ++j) clouds.data.push_back(float(c(i, j)));
  write_array_file(dir / "pointclouds.mmep", clouds);

  write_array_file(dir / "proprio.mmep", pack_rows(ep.proprio));
  write_array_file(dir / "actions.mmep", pack_rows(ep.actions));
  write_array_file(dir / "hidden.mmep", pack_rows(ep.hidden));

  std::ofstream meta(dir / "meta");
  meta << "task = " << to_string(ep.task) << "\n";
  meta << "seed = " << ep.seed << "\n";
  meta << "length = " << ep.length << "\n";
  meta << "success = " << (ep.success ? "true" : "false") << "\n";
  meta << "container_height = " << fmt17(ep.container_height) << "\n";
  meta << "container_radius_top = " << fmt17(ep.container_radius_top) << "\n";
  meta << "container_radius_bottom = " << fmt17(ep.container_radius_bottom) << "\n";
  meta << "f_min = " << fmt17(ep.f_min) << "\n";
  meta << "f_max = " << fmt17(ep.f_max) << "\n";
  meta << "hidden_legend = "
       << (ep.task == TaskId::pour
               ? "tilt fill spilled ee[7] time"
               : "door disp rot click ee[7] grip")
       << "\n";
}

Episode load_episode(const std::filesystem::path& dir) {
  Episode ep;
  const auto kv = read_kv(dir / "meta");
  ep.task = parse_task(kv.at("task"));
  ep.seed = std::stoull(kv.at("seed"));
  ep.length = std::stoi(kv.at("length"));
  ep.success = kv.at("success") == "true";
  ep.container_height = std::stod(kv.at("container_height"));
  ep.container_radius_top = std::stod(kv.at("container_radius_top"));
  ep.container_radius_bottom = std::stod(kv.at("container_radius_bottom"));
  ep.f_min = std::stod(kv.at("f_min"));
  ep.f_max = std::stod(kv.at("f_max"));

  const ArrayF32 wav = read_array_file_f32(dir / "waveform.mmep");
  ep.waveform.assign(wav.data.begin(), wav.data.end());

  const ArrayF32 clouds = read_array_file_f32(dir / "pointclouds.mmep");
  if (clouds.dims.size() != 3 || clouds.dims[2] != 3)
    throw std::runtime_error("bad pointclouds array in " + dir.string());
  for (std::uint32_t t = 0; t < clouds.dims[0]; ++t) {
    Mat c(clouds.dims[1], 3);
    for (std::uint32_t i = 0; i < clouds.dims[1]; ++i)
      for (std::uint32_t j = 0; j < 3; ++j)
        c(i, j) = clouds.data[(std::size_t(t) * clouds.dims[1] + i) * 3 + j];
    ep.clouds.push_back(std::move(c));
  }

  ep.proprio = unpack_rows(read_array_file_f32(dir / "proprio.mmep"));
  ep.actions = unpack_rows(read_array_file_f32(dir / "actions.mmep"));
  ep.hidden = unpack_rows(read_array_file_f32(dir / "hidden.mmep"));
  return ep;
}

std::string episode_digest(const std::filesystem::path& dir) {
  std::string acc;
  for (const char* name : kStreamFiles) acc += file_digest(dir / name);
  return hex64(fnv1a64(acc));
}

DatasetInfo generate_dataset(const RunConfig& cfg, int n_episodes,
                             std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (n_episodes < 1)
    throw std::invalid_argument("generate_dataset: n_episodes must be >= 1");
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  DatasetInfo info;
  info.task = cfg.world.task;
  info.n_episodes = n_episodes;
  info.episode_length = cfg.world.episode_length;

  int attempts = 0, successes = 0;
  std::string digest_acc;
  for (int i = 0; i < n_episodes; ++i) {
    Episode ep;
    for (int attempt = 0;; ++attempt) {
      ++attempts;
      Rng stream = Rng::stream(seed, "world", std::uint64_t(i) * 1000003 + attempt);
      ep = run_scripted_episode(cfg, stream.next_u64());
      if (ep.success) {
        ++successes;
        break;
      }
      if (attempts >= std::max(10, 2 * n_episodes) &&
          successes * 2 < attempts)
        throw std::runtime_error(
            "generate_dataset: scripted expert success rate below 50%; "
            "world configuration is unsound");
    }
    char name[16];
    std::snprintf(name, sizeof(name), "ep%05d", i);
    save_episode(out_dir / name, ep);
    info.episode_dirs.push_back(name);
    digest_acc += episode_digest(out_dir / name);
  }
  info.digest = hex64(fnv1a64(digest_acc));

  std::ofstream m(out_dir / "manifest");
  m << "format = hapfuse-dataset-v1\n";
  m << "task = " << to_string(cfg.world.task) << "\n";
  m << "episodes = " << n_episodes << "\n";
  m << "episode_length = " << cfg.world.episode_length << "\n";
  m << "config_hash = " << hex64(cfg.hash()) << "\n";
  m << "dataset_digest = " << info.digest << "\n";
  for (const auto& name : info.episode_dirs)
    m << "episode " << name << " " << episode_digest(out_dir / name) << "\n";
  return info;
}

DatasetInfo read_manifest(const std::filesystem::path& dataset_dir) {
  std::ifstream f(dataset_dir / "manifest");
  if (!f) throw std::runtime_error("missing manifest in " + dataset_dir.string());
  DatasetInfo info;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string a, b, c;
    is >> a;
    if (a == "episode") {
      is >> b >> c;
      info.episode_dirs.push_back(b);
    } else {
      is >> b >> c;  // "= value"
      if (a == "task") info.task = parse_task(c);
      if (a == "episodes") info.n_episodes = std::stoi(c);
      if (a == "episode_length") info.episode_length = std::stoi(c);
      if (a == "dataset_digest") info.digest = c;
    }
  }
  if (int(info.episode_dirs.size()) != info.n_episodes)
    throw std::runtime_error("manifest episode count mismatch");
  return info;
}

std::vector<Episode> load_dataset(const std::filesystem::path& dataset_dir) {
  const DatasetInfo info = read_manifest(dataset_dir);
  std::vector<Episode> eps;
  eps.reserve(info.episode_dirs.size());
  for (const auto& name : info.episode_dirs)
    eps.push_back(load_episode(dataset_dir / name));
  return eps;
}

}  // namespace hapfuse
