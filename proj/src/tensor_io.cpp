#include "dsovt/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dsovt/error.hpp"

namespace dsovt {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

void write_tensor(const std::filesystem::path& path, const FieldSequence& seq) {
  require(!seq.empty(), ErrorKind::Shape, "cannot write an empty sequence");
  for (int t = 0; t < seq.t(); ++t) {
    for (float v : seq[t].values()) {
      require(std::isfinite(v), ErrorKind::Validation,
              "frame " + std::to_string(t) + " holds a non-finite value; " + path.string() +
                  " not written");
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(kTensorMagic.data()), 4);
  const unsigned char meta[4] = {kTensorVersion, kDtypeFloat32, 4, 0};
  out.write(reinterpret_cast<const char*>(meta), 4);
  put_u32(out, static_cast<std::uint32_t>(seq.t()));
  put_u32(out, static_cast<std::uint32_t>(seq.nx()));
  put_u32(out, static_cast<std::uint32_t>(seq.ny()));
  put_u32(out, static_cast<std::uint32_t>(seq.nc()));

  std::vector<unsigned char> buf;
  for (const auto& frame : seq.frames()) {
    buf.resize(frame.size() * 4);
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(frame.values()[i]);
      buf[4 * i] = static_cast<unsigned char>(bits);
      buf[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
      buf[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
      buf[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

FieldSequence read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= kTensorHeaderBytes, ErrorKind::Length,
          path.string() + ": header truncated (" + std::to_string(bytes.size()) + " bytes)");
  require(std::memcmp(bytes.data(), kTensorMagic.data(), 4) == 0, ErrorKind::Format,
          path.string() + ": bad magic");
  require(bytes[4] == kTensorVersion, ErrorKind::Format,
          path.string() + ": unsupported version " + std::to_string(bytes[4]));
  require(bytes[5] == kDtypeFloat32, ErrorKind::Format,
          path.string() + ": unsupported dtype " + std::to_string(bytes[5]));
  require(bytes[6] == 4, ErrorKind::Format,
          path.string() + ": expected ndim 4, got " + std::to_string(bytes[6]));

  const std::uint32_t t = get_u32(bytes.data() + 8);
  const std::uint32_t nx = get_u32(bytes.data() + 12);
  const std::uint32_t ny = get_u32(bytes.data() + 16);
  const std::uint32_t nc = get_u32(bytes.data() + 20);
  const std::uint64_t per_frame = static_cast<std::uint64_t>(nx) * ny * nc;
  const std::uint64_t expected = kTensorHeaderBytes + 4 * per_frame * t;
  require(bytes.size() == expected, ErrorKind::Length,
          path.string() + ": payload length mismatch, expected " + std::to_string(expected) +
              " bytes, got " + std::to_string(bytes.size()));
  require(t >= 1, ErrorKind::Format, path.string() + ": zero frames");

  std::vector<Field> frames;
  frames.reserve(t);
  const unsigned char* p = bytes.data() + kTensorHeaderBytes;
  for (std::uint32_t k = 0; k < t; ++k) {
    std::vector<float> values(per_frame);
    for (std::uint64_t i = 0; i < per_frame; ++i, p += 4) values[i] = get_f32(p);
    frames.emplace_back(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nc),
                        std::move(values));
  }
  return FieldSequence(std::move(frames));
}

}  // namespace dsovt
