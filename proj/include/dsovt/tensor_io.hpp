#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "dsovt/field.hpp"

namespace dsovt {

// DSVT container layout (all little-endian):
//   bytes 0..3   magic "DSVT"
//   byte  4      version (1)
//   byte  5      dtype   (1 = float32)
//   byte  6      ndim    (4)
//   byte  7      reserved (0)
//   bytes 8..23  dims T, Nx, Ny, Nc as uint32
//   payload      float32 values ordered (t, x, y, c)
inline constexpr std::array<unsigned char, 4> kTensorMagic{0x44, 0x53, 0x56, 0x54};
inline constexpr std::uint8_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::size_t kTensorHeaderBytes = 24;

void write_tensor(const std::filesystem::path& path, const FieldSequence& seq);
FieldSequence read_tensor(const std::filesystem::path& path);

// Little-endian helpers shared with the model container.
void put_u32(std::ostream& out, std::uint32_t v);
void put_f32(std::ostream& out, float v);
std::uint32_t get_u32(const unsigned char* p);
float get_f32(const unsigned char* p);

}  // namespace dsovt
