#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsovt/field.hpp"
#include "dsovt/manifest.hpp"
#include "dsovt/models.hpp"
#include "dsovt/normalize.hpp"
#include "dsovt/voronoi.hpp"

namespace dsovt {

// ---------------------------------------------------------------------------
// Energy

/// Shallow-water total energy sum(0.5 h (u^2 + v^2) + 0.5 g h^2) over the
/// cells of a (u, v, h) field.
struct EnergySpec {
  double g = 1.0;
};

double energy(const Field& field, const EnergySpec& spec = {});

/// |mean input energy - mean output energy|; requires equal lengths.
double energy_loss(std::span<const Field> inputs, std::span<const Field> outputs,
                   const EnergySpec& spec = {});

/// Energy of one normalized (u, v, h) frame stored as 3 x cells column-major
/// data, evaluated after denormalization with `norm`. When `grad` is given,
/// adds `scale * dE/d(normalized value)` into it.
template <typename T>
double energy_normalized(const T* frame, std::size_t cells, const NormStats& norm, const EnergySpec& spec,
                         T* grad = nullptr, double scale = 0.0);

// ---------------------------------------------------------------------------
// Data

/// One simulation, normalized: dense ground truth and its tessellated
/// sensor observation, frame for frame.
struct SimSeries {
  std::string name;
  FieldSequence truth;
  FieldSequence tessellated;
  SensorSeries sensors;  // normalized values
};

struct PreparedData {
  NormStats norm;
  std::vector<SimSeries> sims;
};

/// Per-channel min/max over every frame of the training split.
NormStats training_stats(const ExperimentManifest& manifest);

/// One sensor seed per simulation, in manifest order, derived from sensors.seed.
std::vector<std::uint64_t> sensor_seeds(const ExperimentManifest& manifest);

/// Samples sensors of the kind the manifest names.
SensorSeries sample_manifest_sensors(const SensorSpec& spec, const FieldSequence& seq, std::uint64_t seed);

/// Loads every simulation of `split`, normalizes it (statistics from `norm`,
/// else the manifest, else the training split), samples
/// sensors as the manifest describes and tessellates. Sensor seeds derive
/// from sensors.seed by simulation position in the manifest.
PreparedData prepare_split(const ExperimentManifest& manifest, const std::string& split,
                           const std::optional<NormStats>& norm = std::nullopt);

/// Training windows (sim, start) with start in [0, T - s_in - s_out],
/// advancing by `stride`; windows never cross simulations.
struct Window {
  int sim = 0;
  int start = 0;
};
std::vector<Window> make_windows(const std::vector<int>& lengths, int s_in, int s_out, int stride);

// ---------------------------------------------------------------------------
// Reports

struct EpochRecord {
  int epoch = 0;  // 1-based
  double data_term = 0.0;
  double energy_term = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;
  bool energy_active = false;
};

struct TrainReport {
  std::uint64_t seed = 0;
  double lambda_energy = 0.0;
  /// Data loss over the training set before the first update.
  double initial_loss = 0.0;
  std::vector<EpochRecord> epochs;
  /// First epoch with the energy term active, or -1.
  int switch_epoch = -1;
  double wall_s = 0.0;
  std::string params_path;

  /// epoch,data_term,energy_term,total,wall_ms
  void write_csv(const std::filesystem::path& path) const;
};

enum class TrainMode {
  DataOnly,  // plain MSE; energy never evaluated
  Physics,   // composite loss; the energy term and its gradient are always formed
};

struct TrainOptions {
  int epochs = 100;
  double learning_rate = 1e-3;
  int batch_size = 16;
  double lambda_energy = 0.0;
  /// ConvLSTM only: epochs 1..n_init train on the data term alone.
  int n_init = 0;
  int window_stride = 1;
  int frame_stride = 1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::DataOnly;
  /// Zeroes the final layer after initialization, so initial outputs are act(0).
  bool zero_head = false;
  EnergySpec energy;
  /// Called after every epoch with the current parameters.
  std::function<void(int epoch, const std::vector<float>& params)> on_epoch;
  /// Progress lines on stderr.
  bool verbose = false;
};

TrainOptions train_options_from(const TrainingSpec& spec, std::uint64_t seed, TrainMode mode);

// ---------------------------------------------------------------------------
// Batch losses, shared by the trainers and the gradient checker.

struct BatchLoss {
  double data = 0.0;
  double energy = 0.0;
  double total = 0.0;
};

/// MSE of decode(encode(x_r)) against x over the batch; with `backward`,
/// accumulates encoder and decoder gradients.
template <typename T>
BatchLoss ced_batch(Ced<T>& ced, const nn::Mat<T>& xr, const nn::Mat<T>& x, int n, bool backward);

/// Latent MSE of the LSTM predictions plus, when `energy_on`, lambda times
/// the mean over windows of |mean E(ground-truth input frames) - mean
/// E(decoded predictions)|. `e_in` holds the per-window input energies.
/// The decoder stays frozen.
template <typename T>
BatchLoss lstm_batch(LatentLstm<T>& lstm, Ced<T>& decoder, const std::vector<nn::Mat<T>>& inputs,
                     const std::vector<nn::Mat<T>>& targets, std::span<const double> e_in,
                     const NormStats& norm, double lambda, bool energy_on, const EnergySpec& es,
                     bool backward);

/// Frame MSE of the ConvLSTM predictions plus the energy term as above.
template <typename T>
BatchLoss convlstm_batch(ConvLstm<T>& model, const std::vector<nn::Mat<T>>& inputs,
                         const std::vector<nn::Mat<T>>& targets, int n, std::span<const double> e_in,
                         const NormStats& norm, double lambda, bool energy_on, const EnergySpec& es,
                         bool backward);

// ---------------------------------------------------------------------------
// Trainers

struct CedResult {
  Ced<float> model;
  TrainReport report;
};
CedResult train_ced(const PreparedData& data, const CedSpec& spec, const TrainOptions& opts);

/// Encodes every tessellated frame of every simulation: one Z x T matrix each.
std::vector<nn::Mat<float>> encode_all(const Ced<float>& ced, const PreparedData& data);

struct LstmResult {
  LatentLstm<float> model;
  TrainReport report;
};
LstmResult train_ced_lstm(const PreparedData& data, const Ced<float>& ced, const LatentSeqSpec& spec,
                          const TrainOptions& opts);

struct ConvLstmResult {
  ConvLstm<float> model;
  TrainReport report;
};
ConvLstmResult train_convlstm(const PreparedData& data, const ConvLstmSpec& spec, const TrainOptions& opts);

// ---------------------------------------------------------------------------
// Gradient checking

enum class GradLoss {
  CedMse,
  CedLstmComposite,
  ConvLstmComposite,
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
};

/// Compares analytic gradients of every parameter of a tiny double-precision
/// model against central differences with step `h`. Relative error is
/// |a - n| / max(|a|, |n|, 1e-6). The step must stay small enough that no
/// difference straddles a ReLU or max-pool kink.
GradCheckResult grad_check(GradLoss loss, double lambda, std::uint64_t seed, double h = 1e-6);

}  // namespace dsovt
