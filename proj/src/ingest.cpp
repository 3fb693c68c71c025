#include "dsovt/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dsovt/error.hpp"
#include "dsovt/tensor_io.hpp"

namespace fs = std::filesystem;

namespace dsovt {
namespace {

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.csv", index);
  return buf;
}

std::vector<std::vector<float>> read_csv_rows(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + file.string());
  std::vector<std::vector<float>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<float> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      require(first != std::string::npos, ErrorKind::Format,
              file.string() + ": empty value in row " + std::to_string(rows.size()));
      const std::string token = cell.substr(first, last - first + 1);
      float v = 0.0f;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      require(ec == std::errc() && ptr == token.data() + token.size(), ErrorKind::Format,
              file.string() + ": cannot parse '" + token + "'");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

FieldSequence read_csv_dir(const fs::path& dir, int nc) {
  require(nc >= 1, ErrorKind::Argument, "csv channel count must be >= 1");
  std::vector<Field> frames;
  int nx = -1;
  int ny = -1;
  for (int k = 0;; ++k) {
    const fs::path file = dir / frame_name(k);
    if (!fs::exists(file)) break;
    const auto rows = read_csv_rows(file);
    const int rows_ny = static_cast<int>(rows.size());
    require(rows_ny > 0, ErrorKind::Format, file.string() + ": no rows");
    const std::size_t width = rows.front().size();
    for (const auto& r : rows) {
      require(r.size() == width, ErrorKind::Shape, file.string() + ": ragged rows");
    }
    require(width % static_cast<std::size_t>(nc) == 0, ErrorKind::Shape,
            file.string() + ": row width " + std::to_string(width) +
                " not divisible by channel count " + std::to_string(nc));
    const int frame_nx = static_cast<int>(width) / nc;
    if (nx < 0) {
      nx = frame_nx;
      ny = rows_ny;
    }
    require(frame_nx == nx && rows_ny == ny, ErrorKind::Shape,
            file.string() + ": frame shape " + std::to_string(frame_nx) + "x" +
                std::to_string(rows_ny) + " differs from " + std::to_string(nx) + "x" +
                std::to_string(ny));
    Field f(nx, ny, nc);
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        for (int c = 0; c < nc; ++c) f.at(x, y, c) = rows[y][static_cast<std::size_t>(x) * nc + c];
      }
    }
    f.validate();
    frames.push_back(std::move(f));
  }
  require(!frames.empty(), ErrorKind::Io, dir.string() + ": no frame_00000.csv found");
  return FieldSequence(std::move(frames));
}

}  // namespace

IngestResult ingest_grid_series(const fs::path& path, const MaskPolicy& policy,
                                int csv_channels) {
  require(fs::exists(path), ErrorKind::Io, path.string() + " does not exist");
  FieldSequence seq = fs::is_directory(path) ? read_csv_dir(path, csv_channels) : read_tensor(path);
  Mask mask = Mask::all_valid(seq.nx(), seq.ny());
  if (policy.sentinel) {
    const float s = *policy.sentinel;
    for (const auto& f : seq.frames()) {
      for (int x = 0; x < f.nx(); ++x) {
        for (int y = 0; y < f.ny(); ++y) {
          for (int c = 0; c < f.nc(); ++c) {
            if (f.at(x, y, c) == s) mask.valid[static_cast<std::size_t>(x) * f.ny() + y] = 0;
          }
        }
      }
    }
    for (int t = 0; t < seq.t(); ++t) {
      Field& f = seq[t];
      for (int x = 0; x < f.nx(); ++x) {
        for (int y = 0; y < f.ny(); ++y) {
          if (mask.at(x, y)) continue;
          for (int c = 0; c < f.nc(); ++c) f.at(x, y, c) = 0.0f;
        }
      }
    }
  }
  return {std::move(seq), std::move(mask)};
}

void write_csv_frames(const fs::path& dir, const FieldSequence& seq) {
  fs::create_directories(dir);
  for (int t = 0; t < seq.t(); ++t) {
    const fs::path file = dir / frame_name(t);
    std::ofstream out(file);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + file.string());
    const Field& f = seq[t];
    char buf[64];
    for (int y = 0; y < f.ny(); ++y) {
      for (int x = 0; x < f.nx(); ++x) {
        for (int c = 0; c < f.nc(); ++c) {
          // Shortest round-trip representation keeps CSV and DSVT bit-identical.
          auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, f.at(x, y, c));
          (void)ec;
          if (x > 0 || c > 0) out << ',';
          out.write(buf, ptr - buf);
        }
      }
      out << '\n';
    }
  }
}

}  // namespace dsovt
