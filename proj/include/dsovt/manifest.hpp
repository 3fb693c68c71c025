#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsovt/normalize.hpp"

namespace dsovt {

/// Ordered key-value document in a TOML subset: `key = value` lines,
/// optional `[section]` headers (prefixing keys with "section."), `#`
/// comments, quoted strings, numbers, booleans and single-line arrays.
/// Values are kept as their literal text so a write/read round trip is exact.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueDoc load(const std::filesystem::path& path);
  std::string dump() const;
  void save(const std::filesystem::path& path) const;

  bool has(const std::string& key) const;
  /// Raw literal text, e.g. `"abc"` or `[1, 2]`.
  const std::string& raw(const std::string& key) const;
  /// Inserts or replaces; `literal` must already be valid value syntax.
  void set_raw(const std::string& key, std::string literal);
  /// Applies a `key=value` override; bare words are quoted as strings.
  void apply_override(const std::string& assignment);

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, double value);
  void set(const std::string& key, const std::vector<std::string>& values);
  void set(const std::string& key, const std::vector<double>& values);
  void set(const std::string& key, const std::vector<int>& values);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Literal formatting shared by every writer so numbers round-trip exactly.
std::string format_double(double v);

struct SolverParams {
  int nx = 64;
  int ny = 64;
  double base_depth = 1.0;
  double g = 1.0;
  double dt = 0.1;
  int total_steps = 3500;
  int equilibrium_steps = 500;
  int snapshot_interval = 10;
};

struct SimRecord {
  std::string path;   // relative to the manifest directory
  std::string split;  // "train" or "test"
  double delta_h = 0.0;
  double radius = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  std::uint64_t seed = 0;
};

struct SensorSpec {
  std::string kind = "jittered";  // "jittered" or "random"
  int count = 100;
  int jitter = 2;
  std::uint64_t seed = 0;
};

struct ModelSpecParams {
  int latent = 128;
  std::vector<int> ced_filters{32, 64, 128};
  int lstm_layers = 2;
  int lstm_hidden = 256;
  int convlstm_layers = 2;
  int convlstm_filters = 64;
  int convlstm_kernel = 3;
  std::string activation = "bounded,bounded,nonneg";
};

struct TrainingSpec {
  int s_in = 5;
  int s_out = 5;
  double lambda_energy = 0.0;
  int n_init = 50;
  int epochs = 100;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int window_stride = 1;
  int frame_stride = 1;
};

/// Seeded, reproducible description of a dataset and run.
struct ExperimentManifest {
  std::optional<std::uint64_t> seed;
  int train_count = 0;
  int test_count = 0;
  SolverParams solver;
  std::vector<SimRecord> sims;
  SensorSpec sensors;
  ModelSpecParams model;
  TrainingSpec training;
  std::optional<NormStats> norm;
  /// Directory that relative dataset paths resolve against.
  std::filesystem::path base_dir;

  std::vector<std::string> dataset_paths() const;
  std::filesystem::path resolve(const std::string& relative) const;
  std::vector<const SimRecord*> split(const std::string& which) const;

  /// Checks the numeric invariants; with `check_paths`, every dataset path
  /// must exist.
  void validate(bool check_paths) const;

  KeyValueDoc to_doc() const;
  static ExperimentManifest from_doc(const KeyValueDoc& doc, const std::filesystem::path& base_dir);
  static ExperimentManifest load(const std::filesystem::path& path, bool check_paths = true);
  void save(const std::filesystem::path& path) const;
};

}  // namespace dsovt
