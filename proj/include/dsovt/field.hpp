#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace dsovt {

/// Non-owning view of a grid snapshot laid out x-major, then y, then channel.
/// Unlike Field it carries no minimum-size invariant, so metrics can be
/// exercised on toy grids.
struct FieldView {
  std::span<const float> values;
  int nx = 0;
  int ny = 0;
  int nc = 0;

  std::size_t cells() const { return static_cast<std::size_t>(nx) * ny; }
  float at(int x, int y, int c) const {
    return values[(static_cast<std::size_t>(x) * ny + y) * nc + c];
  }
};

/// Dense grid snapshot x_t of shape nx * ny * nc. Values are finite and the
/// grid is at least 8x8 with one channel.
class Field {
 public:
  Field() = default;
  /// Zero-filled field.
  Field(int nx, int ny, int nc);
  Field(int nx, int ny, int nc, std::vector<float> values);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nc() const { return nc_; }
  std::size_t cells() const { return static_cast<std::size_t>(nx_) * ny_; }
  std::size_t size() const { return values_.size(); }

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(x) * ny_ + y) * nc_ + c;
  }
  float at(int x, int y, int c) const { return values_[index(x, y, c)]; }
  /// Writes must keep values finite; `validate()` re-checks.
  float& at(int x, int y, int c) { return values_[index(x, y, c)]; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }
  FieldView view() const { return {values_, nx_, ny_, nc_}; }

  bool same_shape(const Field& other) const {
    return nx_ == other.nx_ && ny_ == other.ny_ && nc_ == other.nc_;
  }
  void validate() const;

  friend bool operator==(const Field&, const Field&) = default;

 private:
  int nx_ = 0;
  int ny_ = 0;
  int nc_ = 0;
  std::vector<float> values_;
};

/// Ordered frames sharing one shape.
class FieldSequence {
 public:
  FieldSequence() = default;
  explicit FieldSequence(std::vector<Field> frames, int dt_index = 1);

  int t() const { return static_cast<int>(frames_.size()); }
  int nx() const { return frames_.front().nx(); }
  int ny() const { return frames_.front().ny(); }
  int nc() const { return frames_.front().nc(); }
  int dt_index() const { return dt_index_; }
  bool empty() const { return frames_.empty(); }

  const Field& operator[](int i) const { return frames_[static_cast<std::size_t>(i)]; }
  Field& operator[](int i) { return frames_[static_cast<std::size_t>(i)]; }
  const std::vector<Field>& frames() const { return frames_; }

  void push_back(Field frame);
  FieldSequence slice(int begin, int count) const;

  friend bool operator==(const FieldSequence&, const FieldSequence&) = default;

 private:
  std::vector<Field> frames_;
  int dt_index_ = 1;
};

/// Validity grid (true = cell counts in losses and metrics).
struct Mask {
  int nx = 0;
  int ny = 0;
  std::vector<unsigned char> valid;

  static Mask all_valid(int nx, int ny);
  bool at(int x, int y) const { return valid[static_cast<std::size_t>(x) * ny + y] != 0; }
  std::size_t valid_count() const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

using OptionalMask = std::optional<Mask>;

}  // namespace dsovt
