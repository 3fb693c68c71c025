#pragma once

#include <filesystem>
#include <optional>

#include "dsovt/field.hpp"

namespace dsovt {

/// `sentinel` unset means every cell is valid.
struct MaskPolicy {
  std::optional<float> sentinel;
};

struct IngestResult {
  FieldSequence seq;
  Mask mask;
};

/// Loads a gridded series from either a DSVT tensor file or a directory of
/// frame_%05d.csv files (ny rows of nx*nc values, channels contiguous per
/// cell). `csv_channels` is only consulted for CSV input. A cell that equals
/// the sentinel in any frame or channel is invalid everywhere and zeroed.
IngestResult ingest_grid_series(const std::filesystem::path& path, const MaskPolicy& policy,
                                int csv_channels = 1);

/// Writes `seq` in the CSV-per-frame layout read by ingest_grid_series.
void write_csv_frames(const std::filesystem::path& dir, const FieldSequence& seq);

}  // namespace dsovt
