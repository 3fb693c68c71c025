#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dsovt/field.hpp"
#include "dsovt/manifest.hpp"

namespace dsovt::swe {

/// Primitive shallow-water state on an nx * ny grid (x-major like Field).
struct SWEState {
  int nx = 0;
  int ny = 0;
  std::vector<double> h;
  std::vector<double> u;
  std::vector<double> v;

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(x) * ny + y; }
  friend bool operator==(const SWEState&, const SWEState&) = default;
};

struct SWEScenario {
  int nx = 64;
  int ny = 64;
  double base_depth = 1.0;
  double delta_h = 0.5;
  double radius = 8.0;
  double cx = 32.0;
  double cy = 32.0;
  double g = 1.0;
  double dt = 0.1;
  int total_steps = 3500;
  int equilibrium_steps = 500;
  int snapshot_interval = 10;
  std::uint64_t seed = 0;

  int snapshot_count() const { return (total_steps - equilibrium_steps) / snapshot_interval; }
  /// Range, CFL and step-count checks. Placement is checked by init_disturbance.
  void validate() const;
};

SWEScenario scenario_from(const SolverParams& solver, const SimRecord& sim);

/// Cylindrical bump of height delta_h and the given radius on a flat base.
SWEState init_disturbance(const SWEScenario& scenario);

/// One explicit local Lax-Friedrichs update of (h, hu, hv) with reflective
/// walls. `step_index` is only used in error messages.
SWEState step(const SWEState& state, const SWEScenario& scenario, int step_index = 0);

double total_mass(const SWEState& state);

/// (u, v, h) frame of a state.
Field to_field(const SWEState& state);

/// Runs total_steps, drops the equilibration phase and records every
/// snapshot_interval-th state afterwards.
FieldSequence simulate(const SWEScenario& scenario);

/// Samples train_count + test_count scenarios from `seed`, simulates each into
/// `out_dir/sim_%03d.dsvt` and returns the manifest describing them (also
/// written as `out_dir/manifest.toml`).
ExperimentManifest generate_dataset(const std::filesystem::path& out_dir, int train_count,
                                    int test_count, std::uint64_t seed,
                                    const SolverParams& solver = {});

}  // namespace dsovt::swe
