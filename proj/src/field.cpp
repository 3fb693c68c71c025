#include "dsovt/field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dsovt/error.hpp"

namespace dsovt {

std::string_view kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Length: return "length";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Range: return "range";
    case ErrorKind::Bounds: return "bounds";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Placement: return "placement";
    case ErrorKind::Positivity: return "positivity";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Conditioning: return "conditioning";
    case ErrorKind::Compatibility: return "compatibility";
    case ErrorKind::Argument: return "argument";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

namespace {

void check_shape(int nx, int ny, int nc) {
  require(nx >= 8 && ny >= 8 && nc >= 1, ErrorKind::Shape,
          "field shape " + std::to_string(nx) + "x" + std::to_string(ny) + "x" +
              std::to_string(nc) + " violates nx >= 8, ny >= 8, nc >= 1");
}

}  // namespace

Field::Field(int nx, int ny, int nc) : nx_(nx), ny_(ny), nc_(nc) {
  check_shape(nx, ny, nc);
  values_.assign(static_cast<std::size_t>(nx) * ny * nc, 0.0f);
}

Field::Field(int nx, int ny, int nc, std::vector<float> values)
    : nx_(nx), ny_(ny), nc_(nc), values_(std::move(values)) {
  check_shape(nx, ny, nc);
  require(values_.size() == static_cast<std::size_t>(nx) * ny * nc, ErrorKind::Shape,
          "field payload has " + std::to_string(values_.size()) + " values, expected " +
              std::to_string(static_cast<std::size_t>(nx) * ny * nc));
  validate();
}

void Field::validate() const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      fail(ErrorKind::Validation, "non-finite value at flat index " + std::to_string(i));
    }
  }
}

FieldSequence::FieldSequence(std::vector<Field> frames, int dt_index)
    : frames_(std::move(frames)), dt_index_(dt_index) {
  require(!frames_.empty(), ErrorKind::Shape, "field sequence needs at least one frame");
  for (const auto& f : frames_) {
    require(f.same_shape(frames_.front()), ErrorKind::Shape,
            "field sequence frames differ in shape");
  }
}

void FieldSequence::push_back(Field frame) {
  if (!frames_.empty()) {
    require(frame.same_shape(frames_.front()), ErrorKind::Shape,
            "appended frame differs in shape");
  }
  frames_.push_back(std::move(frame));
}

FieldSequence FieldSequence::slice(int begin, int count) const {
  require(begin >= 0 && count >= 1 && begin + count <= t(), ErrorKind::Bounds,
          "slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") outside sequence of length " + std::to_string(t()));
  std::vector<Field> out(frames_.begin() + begin, frames_.begin() + begin + count);
  return FieldSequence(std::move(out), dt_index_);
}

Mask Mask::all_valid(int nx, int ny) {
  return Mask{nx, ny, std::vector<unsigned char>(static_cast<std::size_t>(nx) * ny, 1)};
}

std::size_t Mask::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

}  // namespace dsovt
