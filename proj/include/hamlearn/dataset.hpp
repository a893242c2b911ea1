#pragma once

// Parameter grids, train/validation/test splits, trajectory grouping and
// sub-sampling, and the on-disk dataset format: a directory holding
// manifest.json plus one little-endian float32 tensor [N, N_t, 2] per
// (parameter pair, measurement configuration).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hamlearn/error.hpp"
#include "hamlearn/parallel.hpp"
#include "hamlearn/quantum.hpp"
#include "hamlearn/simulator.hpp"
#include "json.hpp"

namespace hamlearn {

inline constexpr double kDefaultOmega = 1.395;     // radians/us
inline constexpr double kDefaultEpsilon = 1.0;     // radians/us
inline constexpr double kDefaultKappa = 3.326;     // radians/us
inline constexpr double kDefaultEta = 0.1469;
inline constexpr double kDefaultGammaS = 0.1;      // radians/us
inline constexpr double kDefaultDt = 1.0 / 256.0;  // us
inline constexpr double kDefaultTotalTime = 4.0;   // us

struct GridPoint {
  double omega = 0.0;
  double epsilon = 0.0;
  bool operator==(const GridPoint&) const = default;
};

struct ParameterGrid {
  std::vector<GridPoint> pairs;
  std::vector<std::size_t> sweeps;  // consecutive sweep lengths, summing to pairs.size()

  std::size_t size() const { return pairs.size(); }

  /// K/2 epsilon values on [0, 2) at the fixed drive, then K/2 omega values on
  /// [1, 5) at epsilon = 1.  K = 80 is the full grid.
  static ParameterGrid main(std::size_t k = 80) {
    if (k % 2 != 0 || k == 0) throw InvalidInput("main grid size must be even and positive");
    const std::size_t half = k / 2;
    ParameterGrid g;
    for (std::size_t i = 0; i < half; ++i)
      g.pairs.push_back({kDefaultOmega, 2.0 * static_cast<double>(i) / static_cast<double>(half)});
    for (std::size_t i = 0; i < half; ++i)
      g.pairs.push_back({1.0 + 4.0 * static_cast<double>(i) / static_cast<double>(half), kDefaultEpsilon});
    g.sweeps = {half, half};
    return g;
  }

  /// Single sweep of K epsilon values on [0, 2) at fixed omega.
  static ParameterGrid epsilon_sweep(std::size_t k, double omega = kDefaultOmega) {
    if (k == 0) throw InvalidInput("grid size must be positive");
    ParameterGrid g;
    for (std::size_t i = 0; i < k; ++i)
      g.pairs.push_back({omega, 2.0 * static_cast<double>(i) / static_cast<double>(k)});
    g.sweeps = {k};
    return g;
  }

  void validate() const {
    if (pairs.empty()) throw InvalidInput("empty parameter grid");
    if (std::accumulate(sweeps.begin(), sweeps.end(), std::size_t{0}) != pairs.size())
      throw InvalidInput("grid sweep lengths do not sum to the number of pairs");
    for (const auto& p : pairs)
      if (!std::isfinite(p.omega) || !std::isfinite(p.epsilon)) throw InvalidInput("non-finite grid value");
  }
};

struct SplitSpec {
  std::vector<std::size_t> train;  // pair indices
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;  // same pairs as val; disjoint trajectories
  std::size_t n = 0;               // trajectories per pair
  std::size_t d = 1;               // group size

  /// Trajectory indices used at a held-out pair.
  std::vector<std::size_t> val_trajectories() const { return range(0, n == 1 ? 1 : n / 2); }
  std::vector<std::size_t> test_trajectories() const { return n == 1 ? range(0, 1) : range(n / 2, n); }
  std::vector<std::size_t> train_trajectories(std::size_t limit = 0) const {
    return range(0, limit == 0 ? n : std::min(limit, n));
  }
  std::size_t groups_per_pair() const { return n / d; }

  SplitSpec with_group_size(std::size_t group) const {
    if (group == 0 || n % group != 0)
      throw InvalidInput("group size " + std::to_string(group) + " does not divide N = " + std::to_string(n));
    SplitSpec s = *this;
    s.d = group;
    return s;
  }

 private:
  static std::vector<std::size_t> range(std::size_t a, std::size_t b) {
    std::vector<std::size_t> v(b - a);
    std::iota(v.begin(), v.end(), a);
    return v;
  }
};

/// Even pairs train; odd pairs are held out, minus the first and last odd
/// index of every sweep.  Held-out trajectories split in halves: val | test.
inline SplitSpec make_splits(const ParameterGrid& grid, std::size_t n) {
  grid.validate();
  if (grid.size() < 8) throw GridTooSmall("grid has " + std::to_string(grid.size()) + " pairs; need at least 8");
  if (grid.size() % 2 != 0) throw InvalidInput("grid size must be even");
  if (n == 0) throw InvalidInput("N must be positive");
  SplitSpec s;
  s.n = n;
  std::size_t offset = 0;
  for (std::size_t len : grid.sweeps) {
    if (len % 2 != 0) throw InvalidInput("every sweep must have an even number of values");
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < len; ++i) (i % 2 == 0 ? s.train : held).push_back(offset + i);
    if (held.size() > 2)
      for (std::size_t i = 1; i + 1 < held.size(); ++i) s.val.push_back(held[i]);
    offset += len;
  }
  if (s.val.empty()) throw GridTooSmall("grid leaves no held-out pairs after endpoint trimming");
  s.test = s.val;
  return s;
}

/// Mean of d records, possibly over several channels.  mean_voltages is
/// step-major: mean_voltages[channels * t + c].
struct GroupedSample {
  std::vector<double> mean_voltages;
  std::size_t channels = 2;
  std::optional<GridPoint> label;
  std::optional<std::vector<double>> clean_target;

  std::size_t steps() const { return channels == 0 ? 0 : mean_voltages.size() / channels; }
};

inline GroupedSample group_average(std::span<const TrajectoryRecord> records) {
  if (records.empty()) throw InvalidInput("group_average: empty group");
  const std::size_t len = records.front().voltages.size();
  const auto& label = records.front().label;
  GroupedSample g;
  g.mean_voltages.assign(len, 0.0);
  for (const auto& r : records) {
    if (r.voltages.size() != len) throw InconsistentGroup("group_average: records differ in length");
    if (r.label != label) throw InconsistentGroup("group_average: records carry different parameter labels");
    for (std::size_t i = 0; i < len; ++i) g.mean_voltages[i] += r.voltages[i];
  }
  const double inv = 1.0 / static_cast<double>(records.size());
  for (double& v : g.mean_voltages) v *= inv;
  if (label) g.label = GridPoint{label->first, label->second};
  return g;
}

/// Block average of `factor` consecutive steps of a step-major series.
inline std::vector<double> subsample_series(std::span<const double> series, std::size_t channels,
                                            std::size_t factor) {
  if (factor == 0 || channels == 0) throw InvalidInput("subsample: factor and channels must be positive");
  const std::size_t steps = series.size() / channels;
  if (steps % factor != 0)
    throw InvalidInput("subsample: factor " + std::to_string(factor) + " does not divide " + std::to_string(steps));
  const std::size_t out_steps = steps / factor;
  std::vector<double> out(out_steps * channels, 0.0);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t t = 0; t < out_steps; ++t)
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < factor; ++j) acc += series[channels * (t * factor + j) + c];
      out[channels * t + c] = acc * inv;
    }
  return out;
}

inline TrajectoryRecord subsample(const TrajectoryRecord& rec, std::size_t factor) {
  TrajectoryRecord out = rec;
  out.voltages = subsample_series(rec.voltages, 2, factor);
  return out;
}

/// Random partition of `indices` into groups of d; every index used once.
inline std::vector<std::vector<std::size_t>> epoch_partition(std::vector<std::size_t> indices, std::size_t d,
                                                             std::mt19937_64& rng) {
  if (d == 0 || indices.size() % d != 0) throw InvalidInput("epoch_partition: d must divide the index count");
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<std::size_t>> groups(indices.size() / d);
  for (std::size_t g = 0; g < groups.size(); ++g)
    groups[g].assign(indices.begin() + static_cast<std::ptrdiff_t>(g * d),
                     indices.begin() + static_cast<std::ptrdiff_t>((g + 1) * d));
  return groups;
}

// ---------------------------------------------------------------------------
// Persistence

struct DatasetManifest {
  std::string name = "custom";
  ParameterGrid grid;
  double kappa = kDefaultKappa;
  double eta = kDefaultEta;
  double gamma_s = 0.0;
  double dt_us = kDefaultDt;
  double T_us = kDefaultTotalTime;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  bool include_relaxation = false;
  bool noise_free = false;
  std::vector<std::array<Axis, 2>> axes;  // one entry per measurement configuration
  std::array<Axis, 2> initial_spin_up{Axis::X, Axis::Y};
  bool initial_along_measurement = true;  // spin-up along each configuration's axes

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(T_us / dt_us)); }
  std::size_t configs() const { return axes.size(); }
  std::size_t channels() const { return 2 * axes.size(); }

  MeasurementConfig measurement(std::size_t config) const {
    const auto& a = axes.at(config);
    if (initial_along_measurement) return MeasurementConfig::spin_up_along_measurement(a[0], a[1]);
    return MeasurementConfig{a, DensityMatrix::pure(spin_up(initial_spin_up[0], initial_spin_up[1]))};
  }

  PhysicalParams params(std::size_t pair) const {
    const auto& p = grid.pairs.at(pair);
    return PhysicalParams{p.omega, p.epsilon, kappa, eta, gamma_s};
  }

  SimConfig sim_config(std::size_t pair, std::size_t config) const {
    SimConfig c;
    c.dt = dt_us;
    c.total_time = T_us;
    c.params = params(pair);
    c.meas = measurement(config);
    c.include_relaxation = include_relaxation;
    return c;
  }

  static std::string file_name(std::size_t pair, std::size_t config) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "pair_%03zu_cfg%zu.f32", pair, config);
    return buf;
  }

  nlohmann::json to_json() const {
    using nlohmann::json;
    json grid_json = json::array();
    for (const auto& p : grid.pairs) grid_json.push_back({p.omega, p.epsilon});
    json axes_json = json::array();
    for (const auto& a : axes) axes_json.push_back({std::string(1, axis_name(a[0])), std::string(1, axis_name(a[1]))});
    json init;
    if (initial_along_measurement) {
      init["spin_up"] = "measurement_axes";
    } else {
      init["spin_up"] = {std::string(1, axis_name(initial_spin_up[0])), std::string(1, axis_name(initial_spin_up[1]))};
    }
    json files = json::array();
    for (std::size_t k = 0; k < grid.size(); ++k)
      for (std::size_t c = 0; c < configs(); ++c) files.push_back(file_name(k, c));
    return json{{"name", name},
                {"grid", grid_json},
                {"sweeps", grid.sweeps},
                {"kappa", kappa},
                {"eta", eta},
                {"gamma_s", gamma_s},
                {"dt_us", dt_us},
                {"T_us", T_us},
                {"N", n},
                {"seed", seed},
                {"include_relaxation", include_relaxation},
                {"noise_free", noise_free},
                {"axes", axes_json},
                {"initial_state", init},
                {"format",
                 {{"dtype", "float32"},
                  {"endianness", "little"},
                  {"shape", {n, steps(), 2}},
                  {"layout", "[trajectory][step][qubit]"}}},
                {"files", files}};
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
      m.name = j.value("name", "custom");
      for (const auto& p : j.at("grid")) m.grid.pairs.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      m.grid.sweeps = j.value("sweeps", std::vector<std::size_t>{m.grid.pairs.size()});
      m.kappa = j.at("kappa").get<double>();
      m.eta = j.at("eta").get<double>();
      m.gamma_s = j.value("gamma_s", 0.0);
      m.dt_us = j.at("dt_us").get<double>();
      m.T_us = j.at("T_us").get<double>();
      m.n = j.at("N").get<std::size_t>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.include_relaxation = j.at("include_relaxation").get<bool>();
      m.noise_free = j.value("noise_free", false);
      for (const auto& a : j.at("axes"))
        m.axes.push_back({parse_axis(a.at(0).get<std::string>()), parse_axis(a.at(1).get<std::string>())});
      const auto& init = j.at("initial_state").at("spin_up");
      if (init.is_string()) {
        m.initial_along_measurement = true;
      } else {
        m.initial_along_measurement = false;
        m.initial_spin_up = {parse_axis(init.at(0).get<std::string>()), parse_axis(init.at(1).get<std::string>())};
      }
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(std::string("malformed dataset manifest: ") + e.what());
    }
    m.grid.validate();
    return m;
  }
};

namespace detail {

inline void write_f32_le(std::ofstream& out, std::span<const float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[4 * i + static_cast<std::size_t>(b)] = static_cast<unsigned char>(bits >> (8 * b));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline std::vector<float> read_f32_le(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf(count * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError("truncated tensor file " + path.string());
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace detail

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  return DatasetManifest::from_json(j);
}

/// Reads one (pair, configuration) tensor: N * N_t * 2 floats.
inline std::vector<float> read_block(const std::filesystem::path& dir, const DatasetManifest& m, std::size_t pair,
                                     std::size_t config) {
  return detail::read_f32_le(dir / DatasetManifest::file_name(pair, config), m.n * m.steps() * 2);
}

/// Fully loaded dataset.  Large datasets are better consumed block by block
/// through read_block.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& dir) {
    Dataset d;
    d.manifest_ = read_manifest(dir);
    for (std::size_t k = 0; k < d.manifest_.grid.size(); ++k)
      for (std::size_t c = 0; c < d.manifest_.configs(); ++c) d.blocks_.push_back(read_block(dir, d.manifest_, k, c));
    return d;
  }

  const DatasetManifest& manifest() const { return manifest_; }

  std::span<const float> record(std::size_t pair, std::size_t config, std::size_t traj) const {
    const std::size_t len = manifest_.steps() * 2;
    const auto& b = blocks_.at(pair * manifest_.configs() + config);
    return std::span<const float>(b).subspan(traj * len, len);
  }

  TrajectoryRecord trajectory(std::size_t pair, std::size_t config, std::size_t traj) const {
    const auto r = record(pair, config, traj);
    TrajectoryRecord t;
    t.voltages.assign(r.begin(), r.end());
    const auto& p = manifest_.grid.pairs.at(pair);
    t.label = std::make_pair(p.omega, p.epsilon);
    SimConfig cfg = manifest_.sim_config(pair, config);
    cfg.seed = derive_seed(manifest_.seed, pair, config, traj);
    t.config_digest = cfg.digest();
    return t;
  }

 private:
  DatasetManifest manifest_;
  std::vector<std::vector<float>> blocks_;
};

struct GenerateOptions {
  unsigned threads = 1;
};

/// Simulates every (pair, configuration, trajectory) described by `m` and
/// writes the dataset directory.  Trajectory seeds derive from (seed, pair,
/// configuration, index) so output does not depend on the thread count.
inline void write_dataset(const DatasetManifest& m, const std::filesystem::path& dir, GenerateOptions opt = {}) {
  m.grid.validate();
  if (m.axes.empty()) throw InvalidInput("dataset needs at least one measurement configuration");
  if (m.n == 0) throw InvalidInput("N must be positive");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t steps = m.steps();
  const std::size_t len = steps * 2;

  for (std::size_t k = 0; k < m.grid.size(); ++k)
    for (std::size_t c = 0; c < m.configs(); ++c) {
      std::vector<float> block(m.n * len);
      const SimConfig base = m.sim_config(k, c);
      if (m.noise_free) {
        const auto v = expected_record(base);
        for (std::size_t traj = 0; traj < m.n; ++traj)
          std::transform(v.begin(), v.end(), block.begin() + static_cast<std::ptrdiff_t>(traj * len),
                         [](double x) { return static_cast<float>(x); });
      } else {
        parallel_for(m.n, opt.threads, [&](std::size_t traj) {
          SimConfig cfg = base;
          cfg.seed = derive_seed(m.seed, k, c, traj);
          const TrajectoryRecord rec = simulate_trajectory(cfg);
          std::transform(rec.voltages.begin(), rec.voltages.end(),
                         block.begin() + static_cast<std::ptrdiff_t>(traj * len),
                         [](double x) { return static_cast<float>(x); });
        });
      }
      std::ofstream out(dir / DatasetManifest::file_name(k, c), std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write tensor file in " + dir.string());
      detail::write_f32_le(out, block);
      if (!out) throw IoError("write failed in " + dir.string());
    }

  std::ofstream man(dir / "manifest.json", std::ios::trunc);
  if (!man) throw IoError("cannot write manifest in " + dir.string());
  man << m.to_json().dump(2) << '\n';
}

/// Main-protocol dataset: qubit 1 measured along X, qubit 2 along Y, each
/// starting spin-up along its measurement axis.
inline DatasetManifest grid_manifest(const ParameterGrid& grid, std::size_t n, std::uint64_t seed,
                                     bool noise_free = false) {
  DatasetManifest m;
  m.name = "main";
  m.grid = grid;
  m.n = noise_free ? 1 : n;
  m.seed = seed;
  m.noise_free = noise_free;
  m.axes = {{Axis::X, Axis::Y}};
  m.initial_along_measurement = true;
  return m;
}

inline DatasetManifest generate_grid_dataset(const ParameterGrid& grid, std::size_t n, std::uint64_t seed,
                                             const std::filesystem::path& dir, bool noise_free = false,
                                             GenerateOptions opt = {}) {
  const DatasetManifest m = grid_manifest(grid, n, seed, noise_free);
  write_dataset(m, dir, opt);
  return m;
}

/// Relaxation scenario: both qubits measured along X, Y or Z (one
/// configuration each), reduced measurement strength, gamma_s = 0.1, both
/// qubits initially spin-up along Z.
inline DatasetManifest gamma_manifest(std::size_t k = 40, std::size_t n = 10000, std::uint64_t seed = 0,
                                      bool noise_free = false) {
  DatasetManifest m;
  m.name = "gamma";
  m.grid = ParameterGrid::epsilon_sweep(k);
  m.kappa = kDefaultKappa / 4.0;
  m.gamma_s = kDefaultGammaS;
  m.include_relaxation = true;
  m.n = noise_free ? 1 : n;
  m.seed = seed;
  m.noise_free = noise_free;
  m.axes = {{Axis::X, Axis::X}, {Axis::Y, Axis::Y}, {Axis::Z, Axis::Z}};
  m.initial_along_measurement = false;
  m.initial_spin_up = {Axis::Z, Axis::Z};
  return m;
}

inline DatasetManifest gamma_dataset(const std::filesystem::path& dir, std::size_t k = 40, std::size_t n = 10000,
                                     std::uint64_t seed = 0, bool noise_free = false, GenerateOptions opt = {}) {
  const DatasetManifest m = gamma_manifest(k, n, seed, noise_free);
  write_dataset(m, dir, opt);
  return m;
}

/// One epoch's groups for pair k of a loaded dataset (train trajectories).
inline std::vector<GroupedSample> epoch_batches(const Dataset& data, const SplitSpec& split, std::size_t pair,
                                                std::mt19937_64& rng) {
  const auto& m = data.manifest();
  const std::size_t steps = m.steps();
  const std::size_t channels = m.channels();
  std::vector<GroupedSample> out;
  for (const auto& group : epoch_partition(split.train_trajectories(), split.d, rng)) {
    GroupedSample g;
    g.channels = channels;
    g.mean_voltages.assign(steps * channels, 0.0);
    for (std::size_t c = 0; c < m.configs(); ++c)
      for (std::size_t idx : group) {
        const auto r = data.record(pair, c, idx);
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t q = 0; q < 2; ++q) g.mean_voltages[channels * t + 2 * c + q] += r[2 * t + q];
      }
    for (double& v : g.mean_voltages) v /= static_cast<double>(group.size());
    g.label = m.grid.pairs[pair];
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace hamlearn
