#pragma once

#include <utility>
#include <vector>

#include "dsovt/field.hpp"

namespace dsovt {

/// Per-channel min-max statistics. A channel with max == min is constant and
/// maps to 0.5.
struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  int channels() const { return static_cast<int>(min.size()); }
  bool constant(int c) const { return max[c] == min[c]; }
  double range(int c) const { return max[c] - min[c]; }
  void validate() const;
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

/// Statistics over every valid cell of every frame.
NormStats compute_stats(const FieldSequence& seq, const OptionalMask& mask = std::nullopt);

std::pair<FieldSequence, NormStats> normalize(const FieldSequence& seq,
                                              const std::optional<NormStats>& stats,
                                              const OptionalMask& mask = std::nullopt);
FieldSequence denormalize(const FieldSequence& seq, const NormStats& stats);

Field normalize_field(const Field& field, const NormStats& stats);
Field denormalize_field(const Field& field, const NormStats& stats);

}  // namespace dsovt
