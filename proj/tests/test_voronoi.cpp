#include <cmath>
#include <limits>
#include <set>

#include "dsovt/voronoi.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dsovt;
using dsovt::test::TempDir;

namespace {

std::vector<GridPoint> random_positions(Rng& rng, int nx, int ny, int k) {
  std::set<std::pair<int, int>> used;
  std::vector<GridPoint> pos;
  while (static_cast<int>(pos.size()) < k) {
    const int i = static_cast<int>(rng.uniform_int(0, nx - 1));
    const int j = static_cast<int>(rng.uniform_int(0, ny - 1));
    if (used.insert({i, j}).second) pos.push_back({i, j});
  }
  return pos;
}

}  // namespace

TEST_CASE("bucketed owner map equals a brute-force nearest scan") {
  Rng rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int nx = static_cast<int>(rng.uniform_int(8, 40));
    const int ny = static_cast<int>(rng.uniform_int(8, 40));
    const int k = static_cast<int>(rng.uniform_int(1, std::min(60, nx * ny - 1)));
    const auto pos = random_positions(rng, nx, ny, k);
    mismatches += nearest_owner_map(pos, nx, ny) != oracle::brute_owner(pos, nx, ny);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("ties go to the lowest sensor index") {
  const std::vector<GridPoint> pos{{0, 0}, {0, 2}};
  const auto owner = nearest_owner_map(pos, 8, 8);
  CHECK(owner[1] == 0);
}

TEST_CASE("a single sensor yields a constant field") {
  const SensorFrame f{{{3, 4}, {1.5f, -2.0f}}};
  const VoronoiField v = tessellate(f, 8, 10, 2);
  for (int x = 0; x < 8; ++x) {
    for (int y = 0; y < 10; ++y) {
      CHECK(v.field.at(x, y, 0) == 1.5f);
      CHECK(v.field.at(x, y, 1) == -2.0f);
    }
  }
}

TEST_CASE("sensors at every cell reproduce the field") {
  Rng rng(9);
  const Field truth = test::random_field(rng, 8, 8, 3);
  std::vector<GridPoint> pos;
  for (int x = 0; x < 8; ++x) {
    for (int y = 0; y < 8; ++y) pos.push_back({x, y});
  }
  const auto vals = observe(truth, pos);
  SensorFrame f;
  for (std::size_t k = 0; k < pos.size(); ++k) f.push_back({pos[k], vals[k]});
  CHECK(tessellate(f, 8, 8, 3).field == truth);
}

TEST_CASE("observe reads every channel and rejects out-of-grid positions") {
  Rng rng(1);
  const Field truth = test::random_field(rng, 8, 8, 2);
  const std::vector<GridPoint> pos{{7, 0}, {2, 5}};
  const auto vals = observe(truth, pos);
  CHECK(vals[1][0] == truth.at(2, 5, 0));
  CHECK(vals[1][1] == truth.at(2, 5, 1));
  const std::vector<GridPoint> bad{{8, 0}};
  CHECK(test::error_kind_of([&] { observe(truth, bad); }) == ErrorKind::Bounds);
}

TEST_CASE("jittered sensors stay near the lattice and are distinct") {
  Rng rng(4);
  const FieldSequence seq = test::random_sequence(rng, 20, 64, 64, 3);
  const auto lattice = sensor_lattice(64, 64, 200);
  CHECK(lattice.size() == 200);

  const SensorSeries still = sample_sensors_jittered(seq, 200, 0, 5);
  for (const auto& frame : still.frames) {
    for (std::size_t k = 0; k < frame.size(); ++k) CHECK(frame[k].pos == lattice[k]);
  }

  const SensorSeries moving = sample_sensors_jittered(seq, 200, 2, 5);
  bool moved = false;
  for (int t = 0; t < moving.t(); ++t) {
    const auto& frame = moving.frames[static_cast<std::size_t>(t)];
    REQUIRE(frame.size() == 200);
    std::set<std::pair<int, int>> cells;
    for (std::size_t k = 0; k < frame.size(); ++k) {
      const auto& p = frame[k].pos;
      CHECK(std::max(std::abs(p.i - lattice[k].i), std::abs(p.j - lattice[k].j)) <= 2);
      cells.insert({p.i, p.j});
      moved = moved || !(p == lattice[k]);
      CHECK(frame[k].values[2] == seq[t].at(p.i, p.j, 2));
    }
    CHECK(cells.size() == 200);
  }
  CHECK(moved);
  CHECK(sample_sensors_jittered(seq, 200, 2, 5) == moving);
}

TEST_CASE("random sensors are distinct valid cells with a capacity limit") {
  Rng rng(6);
  const FieldSequence seq = test::random_sequence(rng, 5, 8, 8, 1);
  Mask mask = Mask::all_valid(8, 8);
  mask.valid[0] = 0;
  const SensorSeries s = sample_sensors_random(seq, 30, 3, mask);
  for (const auto& frame : s.frames) {
    std::set<std::pair<int, int>> cells;
    for (const auto& sensor : frame) {
      CHECK_FALSE((sensor.pos.i == 0 && sensor.pos.j == 0));
      cells.insert({sensor.pos.i, sensor.pos.j});
    }
    CHECK(cells.size() == 30);
  }
  CHECK(test::error_kind_of([&] { sample_sensors_random(seq, 64, 3); }) == ErrorKind::Capacity);
}

TEST_CASE("sensor files round trip exactly") {
  Rng rng(8);
  const FieldSequence seq = test::random_sequence(rng, 4, 16, 12, 3, -1e4, 1e4);
  const SensorSeries s = sample_sensors_random(seq, 17, 11);
  TempDir dir("voronoi");
  write_sensors(dir / "s.txt", s);
  CHECK(read_sensors(dir / "s.txt") == s);
}

TEST_CASE("series validation rejects duplicates and out-of-grid sensors") {
  SensorSeries s{8, 8, 1, {{{{1, 1}, {0.0f}}, {{1, 1}, {1.0f}}}}};
  CHECK(test::error_kind_of([&] { s.validate(); }) == ErrorKind::Validation);
  s.frames[0][1].pos = {9, 1};
  CHECK(test::error_kind_of([&] { s.validate(); }) == ErrorKind::Bounds);
}
