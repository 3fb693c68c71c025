#include "dsovt/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dsovt/error.hpp"
#include "dsovt/random.hpp"
#include "dsovt/tensor_io.hpp"
#include "dsovt/voronoi.hpp"

namespace dsovt {

using nn::Mat;

// ---------------------------------------------------------------------------
// Energy

double energy(const Field& f, const EnergySpec& spec) {
  require(f.nc() == 3, ErrorKind::Shape,
          "energy needs (u, v, h) fields, got " + std::to_string(f.nc()) + " channels");
  double e = 0.0;
  auto v = f.values();
  for (std::size_t p = 0; p < f.cells(); ++p) {
    const double u = v[3 * p];
    const double w = v[3 * p + 1];
    const double h = v[3 * p + 2];
    e += 0.5 * h * (u * u + w * w) + 0.5 * spec.g * h * h;
  }
  return e;
}

double energy_loss(std::span<const Field> inputs, std::span<const Field> outputs, const EnergySpec& spec) {
  require(inputs.size() == outputs.size() && !inputs.empty(), ErrorKind::Contract,
          "energy loss needs equal, non-empty input and output windows (got " +
              std::to_string(inputs.size()) + " and " + std::to_string(outputs.size()) + ")");
  double ein = 0.0, eout = 0.0;
  for (const auto& f : inputs) ein += energy(f, spec);
  for (const auto& f : outputs) eout += energy(f, spec);
  const double n = static_cast<double>(inputs.size());
  return std::abs(ein / n - eout / n);
}

template <typename T>
double energy_normalized(const T* frame, std::size_t cells, const NormStats& norm, const EnergySpec& spec,
                         T* grad, double scale) {
  require(norm.channels() == 3, ErrorKind::Shape, "energy needs (u, v, h) normalization stats");
  const double r0 = norm.range(0), r1 = norm.range(1), r2 = norm.range(2);
  const double m0 = norm.min[0], m1 = norm.min[1], m2 = norm.min[2];
  double e = 0.0;
  for (std::size_t p = 0; p < cells; ++p) {
    const double u = m0 + static_cast<double>(frame[3 * p]) * r0;
    const double v = m1 + static_cast<double>(frame[3 * p + 1]) * r1;
    const double h = m2 + static_cast<double>(frame[3 * p + 2]) * r2;
    const double ke = u * u + v * v;
    e += 0.5 * h * ke + 0.5 * spec.g * h * h;
    if (grad) {
      grad[3 * p] += static_cast<T>(scale * h * u * r0);
      grad[3 * p + 1] += static_cast<T>(scale * h * v * r1);
      grad[3 * p + 2] += static_cast<T>(scale * (0.5 * ke + spec.g * h) * r2);
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Data

namespace {

NormStats merged_stats(const std::vector<FieldSequence>& raw) {
  NormStats s = compute_stats(raw.front());
  for (std::size_t i = 1; i < raw.size(); ++i) {
    const NormStats o = compute_stats(raw[i]);
    for (int c = 0; c < s.channels(); ++c) {
      s.min[c] = std::min(s.min[c], o.min[c]);
      s.max[c] = std::max(s.max[c], o.max[c]);
    }
  }
  return s;
}

}  // namespace

NormStats training_stats(const ExperimentManifest& m) {
  std::vector<FieldSequence> raw;
  for (const auto& sim : m.sims) {
    if (sim.split == "train") raw.push_back(read_tensor(m.resolve(sim.path)));
  }
  require(!raw.empty(), ErrorKind::Validation, "manifest has no 'train' simulations to derive normalization from");
  return merged_stats(raw);
}

std::vector<std::uint64_t> sensor_seeds(const ExperimentManifest& m) {
  Rng seeds(m.sensors.seed);
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < m.sims.size(); ++i) out.push_back(seeds.derive_seed());
  return out;
}

SensorSeries sample_manifest_sensors(const SensorSpec& spec, const FieldSequence& seq, std::uint64_t seed) {
  if (spec.kind == "jittered") return sample_sensors_jittered(seq, spec.count, spec.jitter, seed);
  if (spec.kind == "random") return sample_sensors_random(seq, spec.count, seed);
  fail(ErrorKind::Validation, "unknown sensors.kind '" + spec.kind + "'");
}

PreparedData prepare_split(const ExperimentManifest& m, const std::string& split,
                           const std::optional<NormStats>& norm) {
  std::vector<FieldSequence> raw;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> names;
  const auto all_seeds = sensor_seeds(m);
  for (std::size_t i = 0; i < m.sims.size(); ++i) {
    if (m.sims[i].split != split) continue;
    raw.push_back(read_tensor(m.resolve(m.sims[i].path)));
    seeds.push_back(all_seeds[i]);
    names.push_back(m.sims[i].path);
  }
  require(!raw.empty(), ErrorKind::Validation, "manifest has no '" + split + "' simulations");

  PreparedData out;
  if (norm) {
    out.norm = *norm;
  } else if (m.norm) {
    out.norm = *m.norm;
  } else {
    out.norm = split == "train" ? merged_stats(raw) : training_stats(m);
  }

  for (std::size_t i = 0; i < raw.size(); ++i) {
    SimSeries ss;
    ss.name = names[i];
    ss.truth = normalize(raw[i], out.norm).first;
    ss.sensors = sample_manifest_sensors(m.sensors, ss.truth, seeds[i]);
    ss.tessellated = tessellate_series(ss.sensors);
    out.sims.push_back(std::move(ss));
  }
  return out;
}

std::vector<Window> make_windows(const std::vector<int>& lengths, int s_in, int s_out, int stride) {
  require(s_in >= 1 && s_out >= 1 && stride >= 1, ErrorKind::Argument, "invalid window parameters");
  std::vector<Window> w;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    for (int start = 0; start + s_in + s_out <= lengths[s]; start += stride) {
      w.push_back({static_cast<int>(s), start});
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Reports

void TrainReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << "epoch,data_term,energy_term,total,wall_ms\n";
  char line[160];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.data_term, e.energy_term,
                  e.total, e.wall_ms);
    out << line;
  }
}

TrainOptions train_options_from(const TrainingSpec& spec, std::uint64_t seed, TrainMode mode) {
  TrainOptions o;
  o.epochs = spec.epochs;
  o.learning_rate = spec.learning_rate;
  o.batch_size = spec.batch_size;
  o.lambda_energy = spec.lambda_energy;
  o.n_init = spec.n_init;
  o.window_stride = spec.window_stride;
  o.frame_stride = spec.frame_stride;
  o.seed = seed;
  o.mode = mode;
  return o;
}

// ---------------------------------------------------------------------------
// Batch losses

template <typename T>
BatchLoss ced_batch(Ced<T>& ced, const Mat<T>& xr, const Mat<T>& x, int n, bool backward) {
  typename Ced<T>::EncoderCache ec;
  typename Ced<T>::DecoderCache dc;
  const Mat<T> z = ced.encode(xr, n, backward ? &ec : nullptr);
  const Mat<T> y = ced.decode(z, backward ? &dc : nullptr);
  const Mat<T> diff = y - x;
  const double numel = static_cast<double>(diff.size());
  BatchLoss l;
  l.data = static_cast<double>(diff.squaredNorm()) / numel;
  l.total = l.data;
  if (backward) {
    Mat<T> dz = ced.backward_decode(dc, diff * static_cast<T>(2.0 / numel), true);
    ced.backward_encode(ec, std::move(dz));
  }
  return l;
}

namespace {

/// Per-window mean energy of S_out decoded/predicted frame batches.
template <typename T>
std::vector<double> window_energies(const std::vector<Mat<T>>& ys, int batch, std::size_t cells,
                                    const NormStats& norm, const EnergySpec& es) {
  std::vector<double> e(batch, 0.0);
  for (const auto& y : ys) {
    for (int b = 0; b < batch; ++b) {
      e[b] += energy_normalized(y.data() + 3 * cells * b, cells, norm, es);
    }
  }
  for (double& v : e) v /= static_cast<double>(ys.size());
  return e;
}

/// Adds lambda * d(mean_b |e_in - e_out|)/dy into dys.
template <typename T>
void energy_grad(const std::vector<Mat<T>>& ys, std::span<const double> e_in, const std::vector<double>& e_out,
                 std::size_t cells, const NormStats& norm, const EnergySpec& es, double lambda,
                 std::vector<Mat<T>>& dys) {
  const int batch = static_cast<int>(e_out.size());
  const double denom = static_cast<double>(batch) * static_cast<double>(ys.size());
  for (std::size_t s = 0; s < ys.size(); ++s) {
    for (int b = 0; b < batch; ++b) {
      const double diff = e_in[b] - e_out[b];
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      energy_normalized(ys[s].data() + 3 * cells * b, cells, norm, es, dys[s].data() + 3 * cells * b,
                        lambda * -sgn / denom);
    }
  }
}

double mean_abs_diff(std::span<const double> a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(b.size());
}

}  // namespace

template <typename T>
BatchLoss lstm_batch(LatentLstm<T>& lstm, Ced<T>& decoder, const std::vector<Mat<T>>& inputs,
                     const std::vector<Mat<T>>& targets, std::span<const double> e_in, const NormStats& norm,
                     double lambda, bool energy_on, const EnergySpec& es, bool backward) {
  typename LatentLstm<T>::Cache cache;
  const std::vector<Mat<T>> preds = lstm.forward(inputs, backward ? &cache : nullptr);
  require(targets.size() == preds.size(), ErrorKind::Shape, "target window length mismatch");
  const int batch = static_cast<int>(preds.front().cols());
  const double numel = static_cast<double>(preds.size() * preds.front().size());
  BatchLoss l;
  std::vector<Mat<T>> dpred;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const Mat<T> diff = preds[s] - targets[s];
    l.data += static_cast<double>(diff.squaredNorm()) / numel;
    if (backward) dpred.push_back(diff * static_cast<T>(2.0 / numel));
  }
  if (energy_on) {
    const auto& spec = decoder.spec();
    const std::size_t cells = static_cast<std::size_t>(spec.nx) * spec.ny;
    std::vector<typename Ced<T>::DecoderCache> dcs(preds.size());
    std::vector<Mat<T>> ys;
    for (std::size_t s = 0; s < preds.size(); ++s) ys.push_back(decoder.decode(preds[s], &dcs[s]));
    const auto e_out = window_energies(ys, batch, cells, norm, es);
    l.energy = mean_abs_diff(e_in, e_out);
    if (backward) {
      std::vector<Mat<T>> dys;
      for (const auto& y : ys) dys.push_back(Mat<T>::Zero(y.rows(), y.cols()));
      energy_grad(ys, e_in, e_out, cells, norm, es, lambda, dys);
      for (std::size_t s = 0; s < preds.size(); ++s) {
        dpred[s] += decoder.backward_decode(dcs[s], std::move(dys[s]), false);
      }
    }
  }
  l.total = l.data + lambda * l.energy;
  if (backward) lstm.backward(cache, dpred);
  return l;
}

template <typename T>
BatchLoss convlstm_batch(ConvLstm<T>& model, const std::vector<Mat<T>>& inputs,
                         const std::vector<Mat<T>>& targets, int n, std::span<const double> e_in,
                         const NormStats& norm, double lambda, bool energy_on, const EnergySpec& es,
                         bool backward) {
  typename ConvLstm<T>::Cache cache;
  const std::vector<Mat<T>> ys = model.forward(inputs, n, backward ? &cache : nullptr);
  require(targets.size() == ys.size(), ErrorKind::Shape, "target window length mismatch");
  const double numel = static_cast<double>(ys.size() * ys.front().size());
  BatchLoss l;
  std::vector<Mat<T>> dys;
  for (std::size_t s = 0; s < ys.size(); ++s) {
    const Mat<T> diff = ys[s] - targets[s];
    l.data += static_cast<double>(diff.squaredNorm()) / numel;
    if (backward) dys.push_back(diff * static_cast<T>(2.0 / numel));
  }
  if (energy_on) {
    const auto& spec = model.spec();
    const std::size_t cells = static_cast<std::size_t>(spec.nx) * spec.ny;
    const auto e_out = window_energies(ys, n, cells, norm, es);
    l.energy = mean_abs_diff(e_in, e_out);
    if (backward) energy_grad(ys, e_in, e_out, cells, norm, es, lambda, dys);
  }
  l.total = l.data + lambda * l.energy;
  if (backward) model.backward(cache, dys);
  return l;
}

// ---------------------------------------------------------------------------
// Trainers

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Runs the shared epoch loop over `count` samples. `step(indices, backward,
/// epoch)` returns the batch loss; gradients are zeroed before and consumed
/// after every backward batch.
template <typename Model, typename Step>
TrainReport run_epochs(Model& model, std::size_t count, const TrainOptions& opts, Rng& shuffle_rng,
                       const std::string& what, Step&& step) {
  require(count > 0, ErrorKind::Validation, what + ": no training samples");
  require(opts.epochs >= 1 && opts.batch_size >= 1, ErrorKind::Argument,
          what + ": epochs and batch size must be positive");
  TrainReport report;
  report.seed = opts.seed;
  report.lambda_energy = opts.lambda_energy;
  const auto t_start = Clock::now();
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(opts.batch_size);

  {
    double acc = 0.0;
    for (std::size_t i = 0; i < count; i += bs) {
      const std::span<const std::size_t> idx(order.data() + i, std::min(bs, count - i));
      acc += step(idx, false, 0).first.data * static_cast<double>(idx.size());
    }
    report.initial_loss = acc / static_cast<double>(count);
  }

  nn::Adam<float> adam(opts.learning_rate);
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto t0 = Clock::now();
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double data = 0.0, en = 0.0;
    bool active = false;
    for (std::size_t i = 0; i < count; i += bs) {
      const std::span<const std::size_t> idx(order.data() + i, std::min(bs, count - i));
      model.params().zero_grad();
      const auto [l, on] = step(idx, true, epoch);
      if (!std::isfinite(l.total)) {
        fail(ErrorKind::Divergence, what + ": non-finite loss in epoch " + std::to_string(epoch));
      }
      adam.step(std::span<float>(model.params().values()), std::span<const float>(model.params().grads()));
      data += l.data * static_cast<double>(idx.size());
      en += l.energy * static_cast<double>(idx.size());
      active = active || on;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.data_term = data / static_cast<double>(count);
    rec.energy_term = en / static_cast<double>(count);
    rec.total = rec.data_term + opts.lambda_energy * rec.energy_term;
    rec.energy_active = active;
    rec.wall_ms = ms_since(t0);
    if (active && report.switch_epoch < 0) report.switch_epoch = epoch;
    report.epochs.push_back(rec);
    if (opts.verbose) {
      std::fprintf(stderr, "%s epoch %d/%d data %.6g energy %.6g total %.6g (%.1f s)\n", what.c_str(), epoch,
                   opts.epochs, rec.data_term, rec.energy_term, rec.total, rec.wall_ms / 1000.0);
    }
    if (opts.on_epoch) opts.on_epoch(epoch, model.params().values());
  }
  report.wall_s = ms_since(t_start) / 1000.0;
  return report;
}

}  // namespace

CedResult train_ced(const PreparedData& data, const CedSpec& spec, const TrainOptions& opts) {
  require(opts.frame_stride >= 1, ErrorKind::Argument, "frame stride must be positive");
  std::vector<std::pair<int, int>> samples;
  for (std::size_t s = 0; s < data.sims.size(); ++s) {
    for (int t = 0; t < data.sims[s].truth.t(); t += opts.frame_stride) {
      samples.emplace_back(static_cast<int>(s), t);
    }
  }
  Rng rng(opts.seed);
  Ced<float> model(spec, rng.derive_seed());
  Rng shuffle_rng(rng.derive_seed());
  if (opts.zero_head) model.zero_output_layer();
  std::vector<const Field*> xr, x;
  auto step = [&](std::span<const std::size_t> idx, bool backward, int) {
    xr.clear();
    x.clear();
    for (std::size_t i : idx) {
      const auto [s, t] = samples[i];
      xr.push_back(&data.sims[s].tessellated[t]);
      x.push_back(&data.sims[s].truth[t]);
    }
    const int n = static_cast<int>(idx.size());
    const BatchLoss l = ced_batch(model, stack_fields<float>(std::span<const Field* const>(xr)),
                                  stack_fields<float>(std::span<const Field* const>(x)), n, backward);
    return std::pair{l, false};
  };
  auto report = run_epochs(model, samples.size(), opts, shuffle_rng, "train-ced", step);
  return {std::move(model), std::move(report)};
}

std::vector<Mat<float>> encode_all(const Ced<float>& ced, const PreparedData& data) {
  std::vector<Mat<float>> out;
  constexpr int kChunk = 32;
  for (const auto& sim : data.sims) {
    const int t = sim.tessellated.t();
    Mat<float> z(ced.spec().latent, t);
    for (int i = 0; i < t; i += kChunk) {
      const int n = std::min(kChunk, t - i);
      std::vector<const Field*> f;
      for (int k = 0; k < n; ++k) f.push_back(&sim.tessellated[i + k]);
      z.middleCols(i, n) = ced.encode(stack_fields<float>(std::span<const Field* const>(f)), n);
    }
    out.push_back(std::move(z));
  }
  return out;
}

namespace {

std::vector<std::vector<double>> frame_energies(const PreparedData& data, const EnergySpec& es) {
  std::vector<std::vector<double>> e;
  for (const auto& sim : data.sims) {
    std::vector<double> v;
    for (const auto& f : sim.truth.frames()) {
      v.push_back(energy_normalized(f.values().data(), f.cells(), data.norm, es));
    }
    e.push_back(std::move(v));
  }
  return e;
}

std::vector<int> sim_lengths(const PreparedData& data) {
  std::vector<int> l;
  for (const auto& s : data.sims) l.push_back(s.truth.t());
  return l;
}

double window_input_energy(const std::vector<std::vector<double>>& e, const Window& w, int s_in) {
  double s = 0.0;
  for (int t = 0; t < s_in; ++t) s += e[w.sim][w.start + t];
  return s / s_in;
}

}  // namespace

LstmResult train_ced_lstm(const PreparedData& data, const Ced<float>& ced, const LatentSeqSpec& spec,
                          const TrainOptions& opts) {
  require(ced.spec().latent == spec.latent, ErrorKind::Compatibility,
          "LSTM latent size " + std::to_string(spec.latent) + " differs from the encoder's " +
              std::to_string(ced.spec().latent));
  const bool physics = opts.mode == TrainMode::Physics;
  const auto latents = encode_all(ced, data);
  const auto windows = make_windows(sim_lengths(data), spec.s_in, spec.s_out, opts.window_stride);
  const auto energies = physics ? frame_energies(data, opts.energy) : std::vector<std::vector<double>>{};
  Ced<float> decoder = ced;
  Rng rng(opts.seed);
  LatentLstm<float> model(spec, rng.derive_seed());
  Rng shuffle_rng(rng.derive_seed());

  auto step = [&](std::span<const std::size_t> idx, bool backward, int) {
    const int n = static_cast<int>(idx.size());
    std::vector<Mat<float>> in(spec.s_in, Mat<float>(spec.latent, n));
    std::vector<Mat<float>> tg(spec.s_out, Mat<float>(spec.latent, n));
    std::vector<double> e_in;
    for (int b = 0; b < n; ++b) {
      const Window& w = windows[idx[b]];
      for (int t = 0; t < spec.s_in; ++t) in[t].col(b) = latents[w.sim].col(w.start + t);
      for (int s = 0; s < spec.s_out; ++s) tg[s].col(b) = latents[w.sim].col(w.start + spec.s_in + s);
      if (physics) e_in.push_back(window_input_energy(energies, w, spec.s_in));
    }
    const bool on = physics && backward;
    const BatchLoss l = lstm_batch(model, decoder, in, tg, e_in, data.norm, opts.lambda_energy, on,
                                   opts.energy, backward);
    return std::pair{l, on};
  };
  auto report = run_epochs(model, windows.size(), opts, shuffle_rng, "train-ced-lstm", step);
  return {std::move(model), std::move(report)};
}

ConvLstmResult train_convlstm(const PreparedData& data, const ConvLstmSpec& spec, const TrainOptions& opts) {
  const bool physics = opts.mode == TrainMode::Physics;
  const auto windows = make_windows(sim_lengths(data), spec.s_in, spec.s_out, opts.window_stride);
  const auto energies = physics ? frame_energies(data, opts.energy) : std::vector<std::vector<double>>{};
  Rng rng(opts.seed);
  ConvLstm<float> model(spec, rng.derive_seed());
  Rng shuffle_rng(rng.derive_seed());

  auto step = [&](std::span<const std::size_t> idx, bool backward, int epoch) {
    const int n = static_cast<int>(idx.size());
    std::vector<Mat<float>> in, tg;
    std::vector<const Field*> f;
    for (int t = 0; t < spec.s_in; ++t) {
      f.clear();
      for (std::size_t i : idx) f.push_back(&data.sims[windows[i].sim].tessellated[windows[i].start + t]);
      in.push_back(stack_fields<float>(std::span<const Field* const>(f)));
    }
    for (int s = 0; s < spec.s_out; ++s) {
      f.clear();
      for (std::size_t i : idx) {
        f.push_back(&data.sims[windows[i].sim].truth[windows[i].start + spec.s_in + s]);
      }
      tg.push_back(stack_fields<float>(std::span<const Field* const>(f)));
    }
    // Energy term only after the warm-up epochs.
    const bool on = physics && backward && epoch > opts.n_init;
    std::vector<double> e_in;
    if (on) {
      for (std::size_t i : idx) e_in.push_back(window_input_energy(energies, windows[i], spec.s_in));
    }
    const BatchLoss l = convlstm_batch(model, in, tg, n, e_in, data.norm, opts.lambda_energy, on,
                                       opts.energy, backward);
    return std::pair{l, on};
  };
  auto report = run_epochs(model, windows.size(), opts, shuffle_rng, "train-convlstm", step);
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

Mat<double> random_mat(Rng& rng, int rows, int cols, double lo, double hi) {
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Physical ranges for the tiny checks: u, v in [-0.5, 0.5], h in [0.5, 1.5].
NormStats tiny_norm() { return NormStats{{-0.5, -0.5, 0.5}, {0.5, 0.5, 1.5}}; }

ActivationSpec sw_activation() { return ActivationSpec::parse("bounded,bounded,nonneg"); }

template <typename Model, typename LossFn>
GradCheckResult compare(Model& model, double h, LossFn&& loss) {
  auto& p = model.params();
  p.zero_grad();
  loss(true);
  const std::vector<double> analytic = p.grads();
  GradCheckResult r;
  auto& v = p.values();
  for (const auto& e : p.entries()) {
    for (std::size_t k = 0; k < e.size(); ++k) {
      const std::size_t i = e.offset + k;
      const double keep = v[i];
      v[i] = keep + h;
      const double lp = loss(false);
      v[i] = keep - h;
      const double lm = loss(false);
      v[i] = keep;
      const double num = (lp - lm) / (2.0 * h);
      const double a = analytic[i];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        char buf[96];
        std::snprintf(buf, sizeof buf, "[%zu] analytic %.6g numeric %.6g", k, a, num);
        r.worst_param = e.name + buf;
      }
    }
  }
  return r;
}

// Zero biases put dead ReLU units exactly on the kink; nonzero biases move them off it.
template <typename T>
void jitter_biases(nn::ParamStore<T>& p, Rng& rng) {
  for (const auto& e : p.entries()) {
    if (!e.name.ends_with(".b")) continue;
    for (std::size_t k = 0; k < e.size(); ++k) p.values()[e.offset + k] = rng.uniform(-0.1, 0.1);
  }
}

CedSpec tiny_ced_spec() {
  CedSpec s;
  s.nx = 8;
  s.ny = 8;
  s.nc = 3;
  s.latent = 4;
  s.filters = {2, 3, 4};
  s.activation = sw_activation();
  return s;
}

}  // namespace

GradCheckResult grad_check(GradLoss which, double lambda, std::uint64_t seed, double h) {
  Rng rng(seed);
  const EnergySpec es;
  const NormStats norm = tiny_norm();
  constexpr int kBatch = 2;
  const int cells = 64;
  switch (which) {
    case GradLoss::CedMse: {
      Ced<double> ced(tiny_ced_spec(), rng.derive_seed());
      jitter_biases(ced.params(), rng);
      const Mat<double> xr = random_mat(rng, 3, kBatch * cells, 0.0, 1.0);
      const Mat<double> x = random_mat(rng, 3, kBatch * cells, 0.0, 1.0);
      return compare(ced, h, [&](bool b) { return ced_batch(ced, xr, x, kBatch, b).total; });
    }
    case GradLoss::CedLstmComposite: {
      Ced<double> decoder(tiny_ced_spec(), rng.derive_seed());
      jitter_biases(decoder.params(), rng);
      LatentSeqSpec ls;
      ls.latent = 4;
      ls.s_in = 2;
      ls.s_out = 2;
      ls.layers = 2;
      ls.hidden = 3;
      LatentLstm<double> lstm(ls, rng.derive_seed());
      jitter_biases(lstm.params(), rng);
      std::vector<Mat<double>> in, tg;
      for (int t = 0; t < ls.s_in; ++t) in.push_back(random_mat(rng, ls.latent, kBatch, 0.0, 1.0));
      for (int s = 0; s < ls.s_out; ++s) tg.push_back(random_mat(rng, ls.latent, kBatch, 0.0, 1.0));
      std::vector<double> e_in;
      for (int b = 0; b < kBatch; ++b) {
        const Mat<double> f = random_mat(rng, 3, cells, 0.0, 1.0);
        e_in.push_back(energy_normalized(f.data(), cells, norm, es));
      }
      return compare(lstm, h, [&](bool b) {
        return lstm_batch(lstm, decoder, in, tg, e_in, norm, lambda, true, es, b).total;
      });
    }
    case GradLoss::ConvLstmComposite: {
      ConvLstmSpec cs;
      cs.nx = 8;
      cs.ny = 8;
      cs.nc = 3;
      cs.s_in = 2;
      cs.s_out = 2;
      cs.layers = 2;
      cs.filters = 2;
      cs.kernel = 3;
      cs.activation = sw_activation();
      ConvLstm<double> model(cs, rng.derive_seed());
      jitter_biases(model.params(), rng);
      std::vector<Mat<double>> in, tg;
      for (int t = 0; t < cs.s_in; ++t) in.push_back(random_mat(rng, 3, kBatch * cells, 0.0, 1.0));
      for (int s = 0; s < cs.s_out; ++s) tg.push_back(random_mat(rng, 3, kBatch * cells, 0.0, 1.0));
      std::vector<double> e_in;
      for (int b = 0; b < kBatch; ++b) {
        const Mat<double> f = random_mat(rng, 3, cells, 0.0, 1.0);
        e_in.push_back(energy_normalized(f.data(), cells, norm, es));
      }
      return compare(model, h, [&](bool b) {
        return convlstm_batch(model, in, tg, kBatch, e_in, norm, lambda, true, es, b).total;
      });
    }
  }
  return {};
}

#define DSOVT_INSTANTIATE_TRAIN(T)                                                                        \
  template double energy_normalized<T>(const T*, std::size_t, const NormStats&, const EnergySpec&, T*,     \
                                       double);                                                            \
  template BatchLoss ced_batch<T>(Ced<T>&, const Mat<T>&, const Mat<T>&, int, bool);                      \
  template BatchLoss lstm_batch<T>(LatentLstm<T>&, Ced<T>&, const std::vector<Mat<T>>&,                   \
                                   const std::vector<Mat<T>>&, std::span<const double>, const NormStats&, \
                                   double, bool, const EnergySpec&, bool);                                \
  template BatchLoss convlstm_batch<T>(ConvLstm<T>&, const std::vector<Mat<T>>&,                          \
                                       const std::vector<Mat<T>>&, int, std::span<const double>,          \
                                       const NormStats&, double, bool, const EnergySpec&, bool);

DSOVT_INSTANTIATE_TRAIN(float)
DSOVT_INSTANTIATE_TRAIN(double)

}  // namespace dsovt
