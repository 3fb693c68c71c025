#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsovt/field.hpp"
#include "dsovt/manifest.hpp"
#include "dsovt/models.hpp"
#include "dsovt/training.hpp"

namespace dsovt {

// ---------------------------------------------------------------------------
// Metrics
//
// `ranges` holds one data range per channel, or a single value shared by all
// channels. Errors of channel c are divided by its range, so R-RMSE and PSNR
// are scale free per channel and pooled over cells and channels. Masked
// cells are excluded everywhere.

/// Mean squared difference over valid cells and channels (no scaling).
double mse(FieldView a, FieldView b, const OptionalMask& mask = std::nullopt);

/// Mean of (a - b)^2 / range_c^2 over valid cells and channels.
double range_mse(FieldView a, FieldView b, std::span<const double> ranges,
                 const OptionalMask& mask = std::nullopt);

/// Mean local SSIM: Gaussian window (11 x 11, sigma 1.5; shrunk to the
/// largest odd size that fits smaller grids) placed only where it lies
/// inside the grid and its centre cell is valid; weights renormalized over
/// the valid cells of the window; C1 = (0.01 range)^2, C2 = (0.03 range)^2.
/// Averaged over windows, then channels.
double ssim(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask = std::nullopt);
double ssim(FieldView a, FieldView b, double range, const OptionalMask& mask = std::nullopt);

/// 10 log10(1 / range_mse); +inf for identical inputs.
double psnr(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask = std::nullopt);
double psnr(FieldView a, FieldView b, double range, const OptionalMask& mask = std::nullopt);

/// sqrt(range_mse).
double rrmse(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask = std::nullopt);
double rrmse(FieldView a, FieldView b, double range, const OptionalMask& mask = std::nullopt);

struct FrameMetrics {
  double ssim = 0.0;
  double psnr = 0.0;
  double rrmse = 0.0;
  double mse = 0.0;
};

/// Per-frame metrics and their means (PSNR mean is +inf if any frame is).
struct MetricReport {
  double ssim = 0.0;
  double psnr = 0.0;
  double rrmse = 0.0;
  double mse = 0.0;
  std::vector<FrameMetrics> frames;

  static MetricReport from_frames(std::vector<FrameMetrics> frames);
};

/// Per-channel (max - min) of the ground truth over every valid cell of
/// every frame. A constant channel is a degenerate error.
std::vector<double> truth_ranges(std::span<const Field> truth, const OptionalMask& mask = std::nullopt);

MetricReport evaluate_frames(std::span<const Field> predicted, std::span<const Field> truth,
                             std::span<const double> ranges, const OptionalMask& mask = std::nullopt);

/// "inf" for +inf, shortest round-trip text otherwise.
std::string format_metric(double v);

// ---------------------------------------------------------------------------
// Rolling forecasts

/// Iteration k consumes the window emitted by iteration k - 1 (the first
/// consumes the observed window at `start`) and emits S_out frames that are
/// scored against truth[start + S_in + k S_out + s].
struct RollingRun {
  int start = 0;
  int iterations = 0;
  std::vector<MetricReport> reports;          // [iteration]
  std::vector<std::vector<Field>> predicted;  // [iteration][s], normalized
  // Model inputs and outputs per iteration, one flattened vector per step.
  std::vector<std::vector<std::vector<float>>> inputs;
  std::vector<std::vector<std::vector<float>>> outputs;

  /// Metrics over every predicted frame of the run.
  MetricReport overall() const;
};

/// Latent rolling forecast: latents of the S_in tessellated frames at
/// `start` seed the LSTM, every predicted latent window is fed back as the
/// next input and decoded for scoring. Requires S_in == S_out.
RollingRun rolling_forecast_ced(const Ced<float>& ced, const LatentLstm<float>& lstm, const SimSeries& sim,
                                int start, int iterations, const OptionalMask& mask = std::nullopt);

/// ConvLSTM rolling forecast on dense predictions: the tessellated window at
/// `start` seeds the model and every predicted window is the next input.
/// Requires S_in == S_out.
RollingRun rolling_forecast_convlstm(const ConvLstm<float>& model, const SimSeries& sim, int start,
                                     int iterations, const OptionalMask& mask = std::nullopt);

// ---------------------------------------------------------------------------
// Evaluation suite

struct SuiteOptions {
  std::optional<std::filesystem::path> ced;
  std::optional<std::filesystem::path> lstm;
  std::optional<std::filesystem::path> convlstm;
  /// Any of: kriging2d, kriging3d, oracle (copies the ground truth).
  std::vector<std::string> baselines;
  int nlags = 20;
  double time_scale = 1.0;
  /// Window starts advance by this much; 0 means S_in + S_out.
  int window_stride = 0;
  int rolling_start = 75;
  int ced_iterations = 42;
  int convlstm_iterations = 32;
  int hist_bins = 20;
  bool verbose = false;
};

struct MethodResult {
  std::string method;
  MetricReport report;
  double infer_s = 0.0;
  std::vector<double> window_mse;  // one per evaluated window
};

struct RollingResult {
  std::string variant;
  /// Mean over test simulations of each iteration's metrics.
  std::vector<MetricReport> iterations;
};

struct SuiteResult {
  std::vector<MethodResult> methods;
  std::vector<RollingResult> rolling;
};

/// Multi-step prediction (S_in observed frames -> S_out frames) for every
/// method over the windows of the test split, plus rolling forecasts of the
/// learned models. Writes metrics.csv, rolling.csv and hist.csv into
/// `out_dir` when it is non-empty. Metrics are computed on normalized
/// fields; per-channel range scaling makes them identical to metrics on
/// physical fields.
SuiteResult evaluate_suite(const ExperimentManifest& manifest, const SuiteOptions& options,
                           const std::filesystem::path& out_dir);

/// Equal-width histogram over [0, max] shared by all variants; counts sum
/// to the number of windows of each variant.
struct HistBin {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> counts;  // one per variant
};
std::vector<HistBin> mse_histogram(const std::vector<std::vector<double>>& samples, int bins);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MethodResult>& methods);
void write_rolling_csv(const std::filesystem::path& path, const std::vector<RollingResult>& rolling);
void write_hist_csv(const std::filesystem::path& path, const std::vector<MethodResult>& methods, int bins);

}  // namespace dsovt
