#pragma once

// Euler-Maruyama integration of the conditioned two-qubit SME with its
// measurement records, and Euler integration of the unconditioned master
// equation.  Every step is followed by projection onto density matrices.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hamlearn/pauli_coords.hpp"
#include "hamlearn/quantum.hpp"

namespace hamlearn {

struct SimConfig {
  double dt = 1.0 / 256.0;  // us
  double total_time = 4.0;  // us
  PhysicalParams params{};
  MeasurementConfig meas{};
  std::uint64_t seed = 0;
  bool include_relaxation = false;

  std::size_t steps() const {
    if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
    const double n = total_time / dt;
    const double rounded = std::round(n);
    if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, n))
      throw InvalidInput("total_time must be a positive integer multiple of dt");
    return static_cast<std::size_t>(rounded);
  }

  void validate() const {
    params.validate();
    (void)steps();
  }

  /// FNV-1a over the configuration fields that determine a record.
  std::string digest() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (double v : {dt, total_time, params.omega, params.epsilon, params.kappa, params.eta, params.gamma_s})
      mix(&v, sizeof v);
    for (Axis a : meas.axes) {
      const char c = axis_name(a);
      mix(&c, 1);
    }
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const Complex z = meas.initial_state(i, j);
        const double re = z.real(), im = z.imag();
        mix(&re, sizeof re);
        mix(&im, sizeof im);
      }
    mix(&seed, sizeof seed);
    const unsigned char rel = include_relaxation ? 1 : 0;
    mix(&rel, 1);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

/// Per-qubit voltage samples dr_i/dt, stored step-major: voltages[2*n + i].
struct TrajectoryRecord {
  std::vector<double> voltages;
  std::string config_digest;
  std::optional<std::pair<double, double>> label;  // (omega, epsilon)

  std::size_t steps() const { return voltages.size() / 2; }
  double at(std::size_t step, std::size_t qubit) const { return voltages[2 * step + qubit]; }
};

/// Operators of one SimConfig, precomputed for the step loops.
struct StepOperators {
  RealGenerator drift;
  std::array<RealGenerator, 2> backaction;
  std::array<Coords, 2> signal;  // a_i with a_i . r = tr(rho (L_i + L_i^dag))
  double dt = 0.0;
  double record_gain = 0.0;  // sqrt(eta / 2)

  static StepOperators build(const SimConfig& cfg) { return build(cfg, cfg.params); }

  static StepOperators build(const SimConfig& cfg, const PhysicalParams& p) {
    const ModelOperators ops = ModelOperators::build(cfg.meas);
    StepOperators s;
    s.drift = ops.generator(p, cfg.include_relaxation);
    const double root_kappa = std::sqrt(p.kappa);
    for (std::size_t i = 0; i < 2; ++i) {
      s.backaction[i] = root_kappa * ops.unit_backaction[i];
      s.signal[i] = root_kappa * ops.unit_signal[i];
    }
    s.dt = cfg.dt;
    s.record_gain = std::sqrt(p.eta / 2.0);
    return s;
  }
};

/// One Euler step of the unconditioned master equation on coordinates,
/// followed by projection.  Shared by the integrator and the decoder.
inline void euler_step(Coords& r, const RealGenerator& drift, double dt) {
  r += dt * (drift * r);
  project_coords(r);
}

/// One Euler-Maruyama step in coordinates; returns the record increments dr_i.
inline std::array<double, 2> em_step_coords(Coords& r, const StepOperators& ops, const std::array<double, 2>& dW) {
  std::array<double, 2> dr{};
  Coords delta = ops.dt * (ops.drift * r);
  for (std::size_t i = 0; i < 2; ++i) {
    const double mean = ops.signal[i].dot(r);
    dr[i] = ops.record_gain * mean * ops.dt + dW[i];
    delta += (ops.record_gain * dW[i]) * (ops.backaction[i] * r - mean * r);
  }
  r += delta;
  project_coords(r);
  return dr;
}

/// Single Euler-Maruyama step of the conditioned SME.  The same Wiener
/// increments drive both the state update and the returned record increments.
inline std::pair<DensityMatrix, std::array<double, 2>> em_step(const DensityMatrix& rho, const SimConfig& cfg,
                                                                const std::array<double, 2>& dW) {
  const StepOperators ops = StepOperators::build(cfg);
  Coords r = to_coords(rho);
  std::array<double, 2> dr{};
  try {
    dr = em_step_coords(r, ops, dW);
  } catch (const InvalidInput& e) {
    throw IntegrationDiverged(0, e.what());
  }
  if (!std::isfinite(dr[0]) || !std::isfinite(dr[1])) throw IntegrationDiverged(0, "non-finite record increment");
  return {DensityMatrix::trusted(PauliBasis::instance().from_coords(r)), dr};
}

struct NoObserver {
  void operator()(std::size_t, const Coords&) const {}
};

/// Simulates one conditioned trajectory.  Deterministic given cfg.seed.
/// `observer(step, coords)` sees the state before each step.
template <class Observer = NoObserver>
TrajectoryRecord simulate_trajectory(const SimConfig& cfg, Observer&& observer = {}) {
  cfg.validate();
  const std::size_t n = cfg.steps();
  const StepOperators ops = StepOperators::build(cfg);
  std::mt19937_64 engine(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double root_dt = std::sqrt(cfg.dt);

  TrajectoryRecord rec;
  rec.voltages.resize(2 * n);
  rec.config_digest = cfg.digest();
  rec.label = std::make_pair(cfg.params.omega, cfg.params.epsilon);

  Coords r = to_coords(cfg.meas.initial_state);
  for (std::size_t step = 0; step < n; ++step) {
    observer(step, r);
    const std::array<double, 2> dW{root_dt * normal(engine), root_dt * normal(engine)};
    std::array<double, 2> dr{};
    try {
      dr = em_step_coords(r, ops, dW);
    } catch (const InvalidInput& e) {
      throw IntegrationDiverged(step, e.what());
    }
    for (std::size_t i = 0; i < 2; ++i) {
      const double v = dr[i] / cfg.dt;
      if (!std::isfinite(v)) throw IntegrationDiverged(step, "non-finite voltage");
      rec.voltages[2 * step + i] = v;
    }
  }
  return rec;
}

struct UnconditionedPoint {
  DensityMatrix rho;
  std::array<double, 2> voltage;
};

/// Euler integration of the unconditioned master equation over the time
/// points excluding the initial condition: element n holds the state at
/// t = (n + 1) dt and sqrt(eta/2) tr(rho (L_i + L_i^dag)) on that state.
inline std::vector<UnconditionedPoint> integrate_unconditioned(const SimConfig& cfg, const PhysicalParams& params) {
  SimConfig local = cfg;
  local.params = params;
  local.validate();
  const std::size_t n = local.steps();
  const StepOperators ops = StepOperators::build(local, params);
  const auto& basis = PauliBasis::instance();

  std::vector<UnconditionedPoint> out;
  out.reserve(n);
  Coords r = to_coords(local.meas.initial_state);
  for (std::size_t step = 0; step < n; ++step) {
    try {
      euler_step(r, ops.drift, ops.dt);
    } catch (const InvalidInput& e) {
      throw IntegrationDiverged(step, e.what());
    }
    std::array<double, 2> v{};
    for (std::size_t i = 0; i < 2; ++i) v[i] = ops.record_gain * ops.signal[i].dot(r);
    out.push_back({DensityMatrix::trusted(basis.from_coords(r)), v});
  }
  return out;
}

/// Expected value of a conditioned record: sample n of simulate_trajectory has
/// mean sqrt(eta/2) tr(rho_n (L + L^dag)) with rho_n the averaged state at
/// t = n dt, i.e. the initial state followed by all but the last integrator
/// point.  This is the noise-free ("infinite d") record.
inline std::vector<double> expected_record(const SimConfig& cfg) {
  const auto points = integrate_unconditioned(cfg, cfg.params);
  const StepOperators ops = StepOperators::build(cfg);
  const Coords r0 = to_coords(cfg.meas.initial_state);
  std::vector<double> v(2 * points.size());
  for (std::size_t i = 0; i < 2; ++i) v[i] = ops.record_gain * ops.signal[i].dot(r0);
  for (std::size_t n = 1; n < points.size(); ++n) {
    v[2 * n] = points[n - 1].voltage[0];
    v[2 * n + 1] = points[n - 1].voltage[1];
  }
  return v;
}

}  // namespace hamlearn
