#include "dsovt/voronoi.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "dsovt/error.hpp"
#include "dsovt/random.hpp"

namespace fs = std::filesystem;

namespace dsovt {

void SensorSeries::validate() const {
  require(nx >= 1 && ny >= 1 && nc >= 1, ErrorKind::Shape, "sensor series shape must be positive");
  const std::size_t cells = static_cast<std::size_t>(nx) * ny;
  for (int t = 0; t < this->t(); ++t) {
    const auto& f = frames[static_cast<std::size_t>(t)];
    require(!f.empty() && f.size() < cells, ErrorKind::Validation,
            "timestep " + std::to_string(t) + " needs 1 <= K < nx*ny sensors, has " +
                std::to_string(f.size()));
    std::vector<unsigned char> seen(cells, 0);
    for (const auto& s : f) {
      require(s.pos.i >= 0 && s.pos.i < nx && s.pos.j >= 0 && s.pos.j < ny, ErrorKind::Bounds,
              "sensor (" + std::to_string(s.pos.i) + ", " + std::to_string(s.pos.j) +
                  ") outside the grid at timestep " + std::to_string(t));
      require(static_cast<int>(s.values.size()) == nc, ErrorKind::Shape,
              "sensor value count differs from channel count");
      auto& flag = seen[static_cast<std::size_t>(s.pos.i) * ny + s.pos.j];
      require(flag == 0, ErrorKind::Validation,
              "duplicate sensor position at timestep " + std::to_string(t));
      flag = 1;
    }
  }
}

std::vector<std::vector<float>> observe(const Field& field, std::span<const GridPoint> positions) {
  std::vector<std::vector<float>> out;
  out.reserve(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto& p = positions[k];
    require(p.i >= 0 && p.i < field.nx() && p.j >= 0 && p.j < field.ny(), ErrorKind::Bounds,
            "position " + std::to_string(k) + " (" + std::to_string(p.i) + ", " +
                std::to_string(p.j) + ") outside " + std::to_string(field.nx()) + "x" +
                std::to_string(field.ny()));
    std::vector<float> v(static_cast<std::size_t>(field.nc()));
    for (int c = 0; c < field.nc(); ++c) v[static_cast<std::size_t>(c)] = field.at(p.i, p.j, c);
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

SensorFrame make_frame(const Field& field, const std::vector<GridPoint>& positions) {
  auto values = observe(field, positions);
  SensorFrame frame;
  frame.reserve(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) frame.push_back({positions[k], std::move(values[k])});
  return frame;
}

}  // namespace

SensorSeries sample_sensors_random(const FieldSequence& seq, int k, std::uint64_t seed,
                                   const OptionalMask& mask) {
  const int nx = seq.nx();
  const int ny = seq.ny();
  std::vector<GridPoint> valid;
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      if (!mask || mask->at(x, y)) valid.push_back({x, y});
    }
  }
  require(k >= 1 && static_cast<std::size_t>(k) < valid.size(), ErrorKind::Capacity,
          "cannot place " + std::to_string(k) + " sensors: need 1 <= k < " +
              std::to_string(valid.size()) + " valid cells");
  Rng rng(seed);
  SensorSeries series{nx, ny, seq.nc(), {}};
  std::vector<GridPoint> pool = valid;
  for (int t = 0; t < seq.t(); ++t) {
    // Partial Fisher-Yates over the valid cells.
    for (int m = 0; m < k; ++m) {
      const auto r = static_cast<std::size_t>(
          rng.uniform_int(m, static_cast<std::int64_t>(pool.size()) - 1));
      std::swap(pool[static_cast<std::size_t>(m)], pool[r]);
    }
    std::vector<GridPoint> chosen(pool.begin(), pool.begin() + k);
    series.frames.push_back(make_frame(seq[t], chosen));
  }
  return series;
}

std::vector<GridPoint> sensor_lattice(int nx, int ny, int base_count) {
  require(base_count >= 1 && base_count < nx * ny, ErrorKind::Capacity,
          "lattice of " + std::to_string(base_count) + " sensors does not fit the grid");
  int a = static_cast<int>(std::sqrt(static_cast<double>(base_count)));
  while (base_count % a != 0) --a;
  const int b = base_count / a;
  const int count_x = nx >= ny ? b : a;
  const int count_y = nx >= ny ? a : b;
  require(count_x <= nx && count_y <= ny, ErrorKind::Capacity,
          "lattice " + std::to_string(count_x) + "x" + std::to_string(count_y) +
              " does not fit the grid");
  std::vector<GridPoint> pts;
  pts.reserve(static_cast<std::size_t>(base_count));
  for (int p = 0; p < count_x; ++p) {
    for (int q = 0; q < count_y; ++q) {
      pts.push_back({static_cast<int>(std::floor((p + 0.5) * nx / count_x)),
                     static_cast<int>(std::floor((q + 0.5) * ny / count_y))});
    }
  }
  return pts;
}

SensorSeries sample_sensors_jittered(const FieldSequence& seq, int base_count, int jitter,
                                     std::uint64_t seed) {
  require(jitter >= 0, ErrorKind::Argument, "jitter must be non-negative");
  const int nx = seq.nx();
  const int ny = seq.ny();
  const auto lattice = sensor_lattice(nx, ny, base_count);
  constexpr int kMaxRetries = 32;
  Rng rng(seed);
  SensorSeries series{nx, ny, seq.nc(), {}};
  std::vector<unsigned char> taken(static_cast<std::size_t>(nx) * ny);
  for (int t = 0; t < seq.t(); ++t) {
    std::fill(taken.begin(), taken.end(), 0);
    std::vector<GridPoint> pos;
    pos.reserve(lattice.size());
    auto is_taken = [&](GridPoint p) { return taken[static_cast<std::size_t>(p.i) * ny + p.j] != 0; };
    for (const auto& base : lattice) {
      GridPoint p{};
      bool placed = false;
      for (int attempt = 0; attempt <= kMaxRetries && !placed; ++attempt) {
        p = {std::clamp(base.i + static_cast<int>(rng.uniform_int(-jitter, jitter)), 0, nx - 1),
             std::clamp(base.j + static_cast<int>(rng.uniform_int(-jitter, jitter)), 0, ny - 1)};
        placed = !is_taken(p);
      }
      if (!placed) {
        // Lattice point first, then the nearest free cell in the jitter box.
        p = base;
        for (int r = 0; r <= jitter && is_taken(p); ++r) {
          for (int di = -r; di <= r && is_taken(p); ++di) {
            for (int dj = -r; dj <= r; ++dj) {
              const GridPoint c{std::clamp(base.i + di, 0, nx - 1), std::clamp(base.j + dj, 0, ny - 1)};
              if (!is_taken(c)) {
                p = c;
                break;
              }
            }
          }
        }
        require(!is_taken(p), ErrorKind::Capacity, "no free cell near lattice point");
      }
      taken[static_cast<std::size_t>(p.i) * ny + p.j] = 1;
      pos.push_back(p);
    }
    series.frames.push_back(make_frame(seq[t], pos));
  }
  return series;
}

std::vector<int> nearest_owner_map(std::span<const GridPoint> positions, int nx, int ny) {
  require(!positions.empty(), ErrorKind::Argument, "tessellation needs at least one sensor");
  const int k = static_cast<int>(positions.size());
  const int bucket = std::max(
      1, static_cast<int>(std::sqrt(static_cast<double>(nx) * ny / static_cast<double>(k))));
  const int bx_count = (nx + bucket - 1) / bucket;
  const int by_count = (ny + bucket - 1) / bucket;
  std::vector<std::vector<int>> buckets(static_cast<std::size_t>(bx_count) * by_count);
  for (int s = 0; s < k; ++s) {
    const auto& p = positions[static_cast<std::size_t>(s)];
    buckets[static_cast<std::size_t>(p.i / bucket) * by_count + p.j / bucket].push_back(s);
  }
  const int max_ring = std::max(bx_count, by_count);

  std::vector<int> owner(static_cast<std::size_t>(nx) * ny, -1);
  for (int x = 0; x < nx; ++x) {
    const int bx = x / bucket;
    for (int y = 0; y < ny; ++y) {
      const int by = y / bucket;
      std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
      int best = -1;
      auto visit = [&](int cbx, int cby) {
        if (cbx < 0 || cby < 0 || cbx >= bx_count || cby >= by_count) return;
        for (int s : buckets[static_cast<std::size_t>(cbx) * by_count + cby]) {
          const auto& p = positions[static_cast<std::size_t>(s)];
          const std::int64_t dx = p.i - x;
          const std::int64_t dy = p.j - y;
          const std::int64_t d2 = dx * dx + dy * dy;
          if (d2 < best_d2 || (d2 == best_d2 && s < best)) {
            best_d2 = d2;
            best = s;
          }
        }
      };
      for (int r = 0; r <= max_ring; ++r) {
        if (r >= 1 && best >= 0) {
          // Any sensor in ring r is at least (r-1)*bucket+1 cells away on one axis.
          const std::int64_t lb = static_cast<std::int64_t>(r - 1) * bucket + 1;
          if (lb * lb > best_d2) break;
        }
        if (r == 0) {
          visit(bx, by);
          continue;
        }
        for (int d = -r; d <= r; ++d) {
          visit(bx + d, by - r);
          visit(bx + d, by + r);
        }
        for (int d = -r + 1; d <= r - 1; ++d) {
          visit(bx - r, by + d);
          visit(bx + r, by + d);
        }
      }
      owner[static_cast<std::size_t>(x) * ny + y] = best;
    }
  }
  return owner;
}

VoronoiField tessellate(const SensorFrame& sensors, int nx, int ny, int nc) {
  require(!sensors.empty(), ErrorKind::Argument, "tessellation needs at least one sensor");
  std::vector<GridPoint> pos;
  pos.reserve(sensors.size());
  for (const auto& s : sensors) {
    require(static_cast<int>(s.values.size()) == nc, ErrorKind::Shape,
            "sensor carries " + std::to_string(s.values.size()) + " values, expected " +
                std::to_string(nc));
    pos.push_back(s.pos);
  }
  VoronoiField out{Field(nx, ny, nc), nearest_owner_map(pos, nx, ny)};
  auto dst = out.field.values();
  for (std::size_t cell = 0; cell < out.owner.size(); ++cell) {
    const auto& vals = sensors[static_cast<std::size_t>(out.owner[cell])].values;
    std::copy(vals.begin(), vals.end(), dst.begin() + static_cast<std::ptrdiff_t>(cell * nc));
  }
  return out;
}

FieldSequence tessellate_series(const SensorSeries& series) {
  std::vector<Field> frames;
  frames.reserve(series.frames.size());
  for (const auto& f : series.frames) {
    frames.push_back(tessellate(f, series.nx, series.ny, series.nc).field);
  }
  return FieldSequence(std::move(frames));
}

void write_sensors(const fs::path& path, const SensorSeries& series) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "dsovt-sensors " << series.t() << ' ' << series.nx << ' ' << series.ny << ' '
      << series.nc << '\n';
  char buf[64];
  for (int t = 0; t < series.t(); ++t) {
    const auto& f = series.frames[static_cast<std::size_t>(t)];
    out << "t " << t << ' ' << f.size() << '\n';
    for (const auto& s : f) {
      out << s.pos.i << ' ' << s.pos.j;
      for (float v : s.values) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
        (void)ec;
        out << ' ';
        out.write(buf, ptr - buf);
      }
      out << '\n';
    }
  }
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

SensorSeries read_sensors(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::string tag;
  int t = 0;
  SensorSeries series;
  in >> tag >> t >> series.nx >> series.ny >> series.nc;
  require(in && tag == "dsovt-sensors" && t >= 0, ErrorKind::Format,
          path.string() + ": not a sensor series file");
  for (int k = 0; k < t; ++k) {
    int idx = 0;
    std::size_t count = 0;
    in >> tag >> idx >> count;
    require(in && tag == "t" && idx == k, ErrorKind::Format,
            path.string() + ": expected block 't " + std::to_string(k) + "'");
    SensorFrame frame(count);
    for (auto& s : frame) {
      in >> s.pos.i >> s.pos.j;
      s.values.resize(static_cast<std::size_t>(series.nc));
      for (auto& v : s.values) {
        std::string tok;
        in >> tok;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        require(ec == std::errc() && ptr == tok.data() + tok.size(), ErrorKind::Format,
                path.string() + ": bad value '" + tok + "'");
      }
      require(static_cast<bool>(in), ErrorKind::Format, path.string() + ": truncated block");
    }
    series.frames.push_back(std::move(frame));
  }
  series.validate();
  return series;
}

}  // namespace dsovt
