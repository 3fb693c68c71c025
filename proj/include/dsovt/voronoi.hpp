#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dsovt/field.hpp"

namespace dsovt {

struct GridPoint {
  int i = 0;  // x cell
  int j = 0;  // y cell
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct Sensor {
  GridPoint pos;
  std::vector<float> values;  // one per channel
  friend bool operator==(const Sensor&, const Sensor&) = default;
};

using SensorFrame = std::vector<Sensor>;

/// Per-timestep sensor records; K may differ between timesteps and positions
/// move over time but are shared by all channels.
struct SensorSeries {
  int nx = 0;
  int ny = 0;
  int nc = 0;
  std::vector<SensorFrame> frames;

  int t() const { return static_cast<int>(frames.size()); }
  void validate() const;
  friend bool operator==(const SensorSeries&, const SensorSeries&) = default;
};

/// Tessellated observation field plus the owning sensor index of every cell.
struct VoronoiField {
  Field field;
  std::vector<int> owner;  // nx * ny, x-major

  int owner_at(int x, int y) const { return owner[static_cast<std::size_t>(x) * field.ny() + y]; }
};

/// o_k = x(i_k, j_k) for every channel, in position order.
std::vector<std::vector<float>> observe(const Field& field, std::span<const GridPoint> positions);

/// k distinct valid cells per timestep, drawn independently for each frame.
SensorSeries sample_sensors_random(const FieldSequence& seq, int k, std::uint64_t seed,
                                   const OptionalMask& mask = std::nullopt);

/// A near-square lattice of `base_count` sensors, each displaced per timestep
/// by integer offsets in [-jitter, jitter]^2 and clamped to the grid.
SensorSeries sample_sensors_jittered(const FieldSequence& seq, int base_count, int jitter,
                                     std::uint64_t seed);

/// Lattice points used by sample_sensors_jittered.
std::vector<GridPoint> sensor_lattice(int nx, int ny, int base_count);

/// Nearest-sensor owner of every cell (Euclidean, lowest index wins ties).
/// Bucketed search; must agree exactly with a brute-force scan.
std::vector<int> nearest_owner_map(std::span<const GridPoint> positions, int nx, int ny);

VoronoiField tessellate(const SensorFrame& sensors, int nx, int ny, int nc);

/// Tessellates every timestep of a series.
FieldSequence tessellate_series(const SensorSeries& series);

/// Text format: header `dsovt-sensors <T> <nx> <ny> <nc>`, then per timestep
/// a line `t <index> <K>` followed by K lines `i j v1 ... v_nc`.
void write_sensors(const std::filesystem::path& path, const SensorSeries& series);
SensorSeries read_sensors(const std::filesystem::path& path);

}  // namespace dsovt
