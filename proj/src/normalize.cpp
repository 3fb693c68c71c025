#include "dsovt/normalize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dsovt/error.hpp"

namespace dsovt {

void NormStats::validate() const {
  require(min.size() == max.size() && !min.empty(), ErrorKind::Shape,
          "norm stats need matching non-empty min/max");
  for (std::size_t c = 0; c < min.size(); ++c) {
    require(max[c] >= min[c], ErrorKind::Validation,
            "norm stats channel " + std::to_string(c) + " has max < min");
  }
}

NormStats compute_stats(const FieldSequence& seq, const OptionalMask& mask) {
  const int nc = seq.nc();
  NormStats s{std::vector<double>(nc, std::numeric_limits<double>::infinity()),
              std::vector<double>(nc, -std::numeric_limits<double>::infinity())};
  for (const auto& f : seq.frames()) {
    for (int x = 0; x < f.nx(); ++x) {
      for (int y = 0; y < f.ny(); ++y) {
        if (mask && !mask->at(x, y)) continue;
        for (int c = 0; c < nc; ++c) {
          const double v = f.at(x, y, c);
          s.min[c] = std::min(s.min[c], v);
          s.max[c] = std::max(s.max[c], v);
        }
      }
    }
  }
  for (int c = 0; c < nc; ++c) {
    require(std::isfinite(s.min[c]), ErrorKind::Validation, "no valid cells to compute stats");
  }
  return s;
}

Field normalize_field(const Field& field, const NormStats& stats) {
  require(stats.channels() == field.nc(), ErrorKind::Shape,
          "norm stats have " + std::to_string(stats.channels()) + " channels, field has " +
              std::to_string(field.nc()));
  Field out(field.nx(), field.ny(), field.nc());
  auto src = field.values();
  auto dst = out.values();
  const int nc = field.nc();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const int c = static_cast<int>(i % nc);
    dst[i] = stats.constant(c)
                 ? 0.5f
                 : static_cast<float>((src[i] - stats.min[c]) / stats.range(c));
  }
  return out;
}

Field denormalize_field(const Field& field, const NormStats& stats) {
  require(stats.channels() == field.nc(), ErrorKind::Shape, "norm stats channel mismatch");
  Field out(field.nx(), field.ny(), field.nc());
  auto src = field.values();
  auto dst = out.values();
  const int nc = field.nc();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const int c = static_cast<int>(i % nc);
    dst[i] = static_cast<float>(stats.min[c] + static_cast<double>(src[i]) * stats.range(c));
  }
  return out;
}

std::pair<FieldSequence, NormStats> normalize(const FieldSequence& seq,
                                              const std::optional<NormStats>& stats,
                                              const OptionalMask& mask) {
  NormStats s = stats ? *stats : compute_stats(seq, mask);
  s.validate();
  require(s.channels() == seq.nc(), ErrorKind::Shape,
          "norm stats have " + std::to_string(s.channels()) + " channels, sequence has " +
              std::to_string(seq.nc()));
  std::vector<Field> frames;
  frames.reserve(seq.t());
  for (const auto& f : seq.frames()) frames.push_back(normalize_field(f, s));
  return {FieldSequence(std::move(frames), seq.dt_index()), s};
}

FieldSequence denormalize(const FieldSequence& seq, const NormStats& stats) {
  std::vector<Field> frames;
  frames.reserve(seq.t());
  for (const auto& f : seq.frames()) frames.push_back(denormalize_field(f, stats));
  return FieldSequence(std::move(frames), seq.dt_index());
}

}  // namespace dsovt
