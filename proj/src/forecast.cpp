#include "dsovt/forecast.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>

#include "dsovt/error.hpp"
#include "dsovt/kriging.hpp"

namespace dsovt {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(FieldView a, FieldView b, const OptionalMask& mask) {
  require(a.nx == b.nx && a.ny == b.ny && a.nc == b.nc, ErrorKind::Shape,
          "metric inputs differ in shape: " + std::to_string(a.nx) + "x" + std::to_string(a.ny) + "x" +
              std::to_string(a.nc) + " vs " + std::to_string(b.nx) + "x" + std::to_string(b.ny) + "x" +
              std::to_string(b.nc));
  require(a.values.size() == a.cells() * a.nc && b.values.size() == b.cells() * b.nc, ErrorKind::Shape,
          "metric input size does not match its shape");
  if (mask) {
    require(mask->nx == a.nx && mask->ny == a.ny, ErrorKind::Shape, "mask shape differs from the fields");
  }
}

double channel_range(std::span<const double> ranges, int c) {
  const double r = ranges.size() == 1 ? ranges[0] : ranges[c];
  require(r > 0.0 && std::isfinite(r), ErrorKind::Argument, "data range must be positive and finite");
  return r;
}

void check_ranges(std::span<const double> ranges, int nc) {
  require(ranges.size() == 1 || static_cast<int>(ranges.size()) == nc, ErrorKind::Shape,
          "need one data range or one per channel");
}

bool valid(const OptionalMask& mask, int x, int y) { return !mask || mask->at(x, y); }

/// Normalized Gaussian taps of odd length w.
std::vector<double> gaussian_taps(int w, double sigma) {
  std::vector<double> g(w);
  const int r = w / 2;
  double s = 0.0;
  for (int i = 0; i < w; ++i) {
    g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

}  // namespace

double mse(FieldView a, FieldView b, const OptionalMask& mask) {
  check_pair(a, b, mask);
  double s = 0.0;
  std::size_t n = 0;
  for (int x = 0; x < a.nx; ++x) {
    for (int y = 0; y < a.ny; ++y) {
      if (!valid(mask, x, y)) continue;
      for (int c = 0; c < a.nc; ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
        s += d * d;
      }
      n += a.nc;
    }
  }
  require(n > 0, ErrorKind::Degenerate, "no valid cells to score");
  return s / static_cast<double>(n);
}

double range_mse(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask) {
  check_pair(a, b, mask);
  check_ranges(ranges, a.nc);
  std::vector<double> inv(a.nc);
  for (int c = 0; c < a.nc; ++c) inv[c] = 1.0 / channel_range(ranges, c);
  double s = 0.0;
  std::size_t n = 0;
  for (int x = 0; x < a.nx; ++x) {
    for (int y = 0; y < a.ny; ++y) {
      if (!valid(mask, x, y)) continue;
      for (int c = 0; c < a.nc; ++c) {
        const double d = (static_cast<double>(a.at(x, y, c)) - b.at(x, y, c)) * inv[c];
        s += d * d;
      }
      n += a.nc;
    }
  }
  require(n > 0, ErrorKind::Degenerate, "no valid cells to score");
  return s / static_cast<double>(n);
}

double ssim(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask) {
  check_pair(a, b, mask);
  check_ranges(ranges, a.nc);
  int w = std::min({11, a.nx, a.ny});
  if (w % 2 == 0) --w;
  const std::vector<double> g = gaussian_taps(w, 1.5);
  const int r = w / 2;
  double total = 0.0;
  for (int c = 0; c < a.nc; ++c) {
    const double range = channel_range(ranges, c);
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);
    double sum = 0.0;
    std::size_t windows = 0;
    for (int x0 = 0; x0 + w <= a.nx; ++x0) {
      for (int y0 = 0; y0 + w <= a.ny; ++y0) {
        if (!valid(mask, x0 + r, y0 + r)) continue;
        double wsum = 0, ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < w; ++i) {
          for (int j = 0; j < w; ++j) {
            if (!valid(mask, x0 + i, y0 + j)) continue;
            const double wt = g[i] * g[j];
            const double va = a.at(x0 + i, y0 + j, c);
            const double vb = b.at(x0 + i, y0 + j, c);
            wsum += wt;
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        }
        ma /= wsum;
        mb /= wsum;
        const double va = saa / wsum - ma * ma;
        const double vb = sbb / wsum - mb * mb;
        const double cov = sab / wsum - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
    require(windows > 0, ErrorKind::Degenerate, "no SSIM window has a valid centre");
    total += sum / static_cast<double>(windows);
  }
  return total / a.nc;
}

double ssim(FieldView a, FieldView b, double range, const OptionalMask& mask) {
  const double r[1] = {range};
  return ssim(a, b, r, mask);
}

double psnr(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask) {
  const double m = range_mse(a, b, ranges, mask);
  return m == 0.0 ? kInf : -10.0 * std::log10(m);
}

double psnr(FieldView a, FieldView b, double range, const OptionalMask& mask) {
  const double r[1] = {range};
  return psnr(a, b, r, mask);
}

double rrmse(FieldView a, FieldView b, std::span<const double> ranges, const OptionalMask& mask) {
  return std::sqrt(range_mse(a, b, ranges, mask));
}

double rrmse(FieldView a, FieldView b, double range, const OptionalMask& mask) {
  const double r[1] = {range};
  return rrmse(a, b, r, mask);
}

MetricReport MetricReport::from_frames(std::vector<FrameMetrics> frames) {
  MetricReport r;
  require(!frames.empty(), ErrorKind::Degenerate, "no frames to summarize");
  for (const auto& f : frames) {
    r.ssim += f.ssim;
    r.psnr += f.psnr;
    r.rrmse += f.rrmse;
    r.mse += f.mse;
  }
  const double n = static_cast<double>(frames.size());
  r.ssim /= n;
  r.psnr /= n;
  r.rrmse /= n;
  r.mse /= n;
  r.frames = std::move(frames);
  return r;
}

std::vector<double> truth_ranges(std::span<const Field> truth, const OptionalMask& mask) {
  require(!truth.empty(), ErrorKind::Degenerate, "no ground-truth frames");
  const int nc = truth.front().nc();
  std::vector<double> lo(nc, kInf), hi(nc, -kInf);
  for (const Field& f : truth) {
    for (int x = 0; x < f.nx(); ++x) {
      for (int y = 0; y < f.ny(); ++y) {
        if (!valid(mask, x, y)) continue;
        for (int c = 0; c < nc; ++c) {
          lo[c] = std::min(lo[c], static_cast<double>(f.at(x, y, c)));
          hi[c] = std::max(hi[c], static_cast<double>(f.at(x, y, c)));
        }
      }
    }
  }
  std::vector<double> r(nc);
  for (int c = 0; c < nc; ++c) {
    r[c] = hi[c] - lo[c];
    require(r[c] > 0.0, ErrorKind::Degenerate,
            "ground-truth channel " + std::to_string(c) + " is constant; its range cannot scale errors");
  }
  return r;
}

MetricReport evaluate_frames(std::span<const Field> predicted, std::span<const Field> truth,
                             std::span<const double> ranges, const OptionalMask& mask) {
  require(predicted.size() == truth.size(), ErrorKind::Shape, "prediction and truth frame counts differ");
  std::vector<FrameMetrics> frames;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const FieldView p = predicted[i].view();
    const FieldView t = truth[i].view();
    FrameMetrics f;
    f.ssim = ssim(p, t, ranges, mask);
    const double m = range_mse(p, t, ranges, mask);
    f.psnr = m == 0.0 ? kInf : -10.0 * std::log10(m);
    f.rrmse = std::sqrt(m);
    f.mse = mse(p, t, mask);
    frames.push_back(f);
  }
  return MetricReport::from_frames(std::move(frames));
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}

// ---------------------------------------------------------------------------

MetricReport RollingRun::overall() const {
  std::vector<FrameMetrics> all;
  for (const auto& r : reports) all.insert(all.end(), r.frames.begin(), r.frames.end());
  return MetricReport::from_frames(std::move(all));
}

namespace {

std::vector<float> flatten(const nn::Mat<float>& m) { return {m.data(), m.data() + m.size()}; }

void check_rolling(const SimSeries& sim, int s_in, int s_out, int start, int iterations) {
  require(s_in == s_out, ErrorKind::Contract,
          "rolling forecasts feed each output window back as input and need S_in == S_out");
  require(iterations >= 1, ErrorKind::Argument, "rolling forecast needs at least one iteration");
  const int need = start + s_in + iterations * s_out;
  require(start >= 0 && need <= sim.truth.t(), ErrorKind::Range,
          "rolling forecast from " + std::to_string(start) + " for " + std::to_string(iterations) +
              " iterations needs " + std::to_string(need) + " frames; '" + sim.name + "' has " +
              std::to_string(sim.truth.t()));
}

std::vector<Field> truth_window(const SimSeries& sim, int first, int count) {
  std::vector<Field> t;
  for (int s = 0; s < count; ++s) t.push_back(sim.truth[first + s]);
  return t;
}

std::vector<double> run_ranges(const SimSeries& sim, int start, int s_in, int frames, const OptionalMask& mask) {
  return truth_ranges(std::span<const Field>(sim.truth.frames()).subspan(start + s_in, frames), mask);
}

}  // namespace

RollingRun rolling_forecast_ced(const Ced<float>& ced, const LatentLstm<float>& lstm, const SimSeries& sim,
                                int start, int iterations, const OptionalMask& mask) {
  const LatentSeqSpec& ls = lstm.spec();
  require(ls.latent == ced.spec().latent, ErrorKind::Compatibility, "LSTM latent size differs from the CED");
  check_rolling(sim, ls.s_in, ls.s_out, start, iterations);
  const int nx = ced.spec().nx, ny = ced.spec().ny;
  const auto ranges = run_ranges(sim, start, ls.s_in, iterations * ls.s_out, mask);

  std::vector<nn::Mat<float>> window;
  for (int t = 0; t < ls.s_in; ++t) {
    const Field* f = &sim.tessellated[start + t];
    window.push_back(ced.encode(stack_fields<float>(std::span<const Field* const>(&f, 1)), 1));
  }
  RollingRun run;
  run.start = start;
  run.iterations = iterations;
  for (int k = 0; k < iterations; ++k) {
    std::vector<nn::Mat<float>> out = lstm.forward(window);
    nn::Mat<float> z(ls.latent, ls.s_out);
    for (int s = 0; s < ls.s_out; ++s) z.col(s) = out[s].col(0);
    const nn::Mat<float> y = ced.decode(z);
    std::vector<Field> pred;
    for (int s = 0; s < ls.s_out; ++s) pred.push_back(unstack_field(y, s, nx, ny));
    const auto truth = truth_window(sim, start + ls.s_in + k * ls.s_out, ls.s_out);
    run.reports.push_back(evaluate_frames(pred, truth, ranges, mask));
    run.predicted.push_back(std::move(pred));
    run.inputs.emplace_back();
    run.outputs.emplace_back();
    for (const auto& m : window) run.inputs.back().push_back(flatten(m));
    for (const auto& m : out) run.outputs.back().push_back(flatten(m));
    window = std::move(out);
  }
  return run;
}

RollingRun rolling_forecast_convlstm(const ConvLstm<float>& model, const SimSeries& sim, int start,
                                     int iterations, const OptionalMask& mask) {
  const ConvLstmSpec& cs = model.spec();
  check_rolling(sim, cs.s_in, cs.s_out, start, iterations);
  const auto ranges = run_ranges(sim, start, cs.s_in, iterations * cs.s_out, mask);

  std::vector<nn::Mat<float>> window;
  for (int t = 0; t < cs.s_in; ++t) {
    const Field* f = &sim.tessellated[start + t];
    window.push_back(stack_fields<float>(std::span<const Field* const>(&f, 1)));
  }
  RollingRun run;
  run.start = start;
  run.iterations = iterations;
  for (int k = 0; k < iterations; ++k) {
    std::vector<nn::Mat<float>> out = model.forward(window, 1);
    std::vector<Field> pred;
    for (const auto& m : out) pred.push_back(unstack_field(m, 0, cs.nx, cs.ny));
    const auto truth = truth_window(sim, start + cs.s_in + k * cs.s_out, cs.s_out);
    run.reports.push_back(evaluate_frames(pred, truth, ranges, mask));
    run.predicted.push_back(std::move(pred));
    run.inputs.emplace_back();
    run.outputs.emplace_back();
    for (const auto& m : window) run.inputs.back().push_back(flatten(m));
    for (const auto& m : out) run.outputs.back().push_back(flatten(m));
    window = std::move(out);
  }
  return run;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

/// Predicts S_out frames from the window at `start` of one simulation.
using Predictor = std::function<std::vector<Field>(const SimSeries& sim, int start)>;

struct Method {
  std::string name;
  Predictor predict;
};

RollingResult average_rolling(const std::string& variant, const std::vector<RollingRun>& runs) {
  RollingResult r;
  r.variant = variant;
  if (runs.empty()) return r;
  std::size_t iters = runs.front().reports.size();
  for (const auto& run : runs) iters = std::min(iters, run.reports.size());
  for (std::size_t k = 0; k < iters; ++k) {
    MetricReport m;
    for (const auto& run : runs) {
      m.ssim += run.reports[k].ssim;
      m.psnr += run.reports[k].psnr;
      m.rrmse += run.reports[k].rrmse;
      m.mse += run.reports[k].mse;
    }
    const double n = static_cast<double>(runs.size());
    m.ssim /= n;
    m.psnr /= n;
    m.rrmse /= n;
    m.mse /= n;
    r.iterations.push_back(m);
  }
  return r;
}

}  // namespace

SuiteResult evaluate_suite(const ExperimentManifest& manifest, const SuiteOptions& opt,
                           const std::filesystem::path& out_dir) {
  require(opt.ced.has_value() == opt.lstm.has_value(), ErrorKind::Validation,
          "CED-LSTM evaluation needs both a CED and an LSTM model");
  require(opt.ced || opt.convlstm || !opt.baselines.empty(), ErrorKind::Validation,
          "missing key: models (give a CED and LSTM, a ConvLSTM, or baselines)");
  const TrainingSpec& ts = manifest.training;
  const int s_in = ts.s_in, s_out = ts.s_out;

  std::optional<Ced<float>> ced;
  std::optional<LatentLstm<float>> lstm;
  std::optional<ConvLstm<float>> conv;
  std::optional<NormStats> norm;
  if (opt.ced) {
    ced.emplace(load_ced(*opt.ced, std::nullopt, &norm));
    lstm.emplace(load_latent_lstm(*opt.lstm));
    require(lstm->spec().s_in == s_in && lstm->spec().s_out == s_out, ErrorKind::Compatibility,
            "LSTM window lengths differ from training.s_in / training.s_out");
  }
  if (opt.convlstm) {
    std::optional<NormStats> n2;
    conv.emplace(load_convlstm(*opt.convlstm, std::nullopt, &n2));
    require(conv->spec().s_in == s_in && conv->spec().s_out == s_out, ErrorKind::Compatibility,
            "ConvLSTM window lengths differ from training.s_in / training.s_out");
    if (!norm) norm = n2;
    require(!n2 || *n2 == *norm, ErrorKind::Compatibility, "models were trained with different normalizations");
  }
  const PreparedData test = prepare_split(manifest, "test", norm ? norm : manifest.norm);
  if (!norm) norm = test.norm;
  const int nx = test.sims.front().truth.nx(), ny = test.sims.front().truth.ny();
  const int nc = test.sims.front().truth.nc();

  std::vector<Method> methods;
  if (ced) {
    methods.push_back({"ced-lstm", [&](const SimSeries& sim, int start) {
                         const std::vector<Field> frames(sim.tessellated.frames().begin() + start,
                                                         sim.tessellated.frames().begin() + start + s_in);
                         const nn::Mat<float> z = ced->encode(stack_fields<float>(std::span<const Field>(frames)),
                                                              s_in);
                         std::vector<nn::Mat<float>> in;
                         for (int t = 0; t < s_in; ++t) in.push_back(z.col(t));
                         const auto out = lstm->forward(in);
                         nn::Mat<float> zo(z.rows(), s_out);
                         for (int s = 0; s < s_out; ++s) zo.col(s) = out[s].col(0);
                         const nn::Mat<float> y = ced->decode(zo);
                         std::vector<Field> pred;
                         for (int s = 0; s < s_out; ++s) pred.push_back(unstack_field(y, s, nx, ny));
                         return pred;
                       }});
  }
  if (conv) {
    methods.push_back({"convlstm", [&](const SimSeries& sim, int start) {
                         std::vector<nn::Mat<float>> in;
                         for (int t = 0; t < s_in; ++t) {
                           const Field* f = &sim.tessellated[start + t];
                           in.push_back(stack_fields<float>(std::span<const Field* const>(&f, 1)));
                         }
                         std::vector<Field> pred;
                         for (const auto& m : conv->forward(in, 1)) pred.push_back(unstack_field(m, 0, nx, ny));
                         return pred;
                       }});
  }
  for (const auto& b : opt.baselines) {
    const auto frames_of = [s_in](const SimSeries& sim, int start) {
      return std::span<const SensorFrame>(sim.sensors.frames).subspan(start, s_in);
    };
    if (b == "kriging2d") {
      methods.push_back({"kriging2d", [&, frames_of](const SimSeries& sim, int start) {
                           return kriging_forecast_2d(frames_of(sim, start), nx, ny, nc, opt.nlags, s_out);
                         }});
    } else if (b == "kriging3d") {
      methods.push_back({"kriging3d", [&, frames_of](const SimSeries& sim, int start) {
                           return kriging_forecast_3d(frames_of(sim, start), nx, ny, nc, opt.nlags, s_out,
                                                      opt.time_scale);
                         }});
    } else if (b == "oracle") {
      methods.push_back({"oracle", [&](const SimSeries& sim, int start) {
                           return truth_window(sim, start + s_in, s_out);
                         }});
    } else {
      fail(ErrorKind::Validation, "unknown baseline '" + b + "' (kriging2d, kriging3d, oracle)");
    }
  }

  std::vector<Field> all_truth;
  for (const auto& sim : test.sims) {
    all_truth.insert(all_truth.end(), sim.truth.frames().begin(), sim.truth.frames().end());
  }
  const auto ranges = truth_ranges(all_truth);
  std::vector<int> lengths;
  for (const auto& sim : test.sims) lengths.push_back(sim.truth.t());
  const auto windows = make_windows(lengths, s_in, s_out, opt.window_stride > 0 ? opt.window_stride : s_in + s_out);
  require(!windows.empty(), ErrorKind::Validation, "test simulations are shorter than one window");

  SuiteResult result;
  for (const Method& m : methods) {
    MethodResult r;
    r.method = m.name;
    std::vector<FrameMetrics> frames;
    double infer = 0.0;
    for (const Window& w : windows) {
      const SimSeries& sim = test.sims[w.sim];
      const auto t0 = Clock::now();
      const std::vector<Field> pred = m.predict(sim, w.start);
      infer += std::chrono::duration<double>(Clock::now() - t0).count();
      const auto truth = truth_window(sim, w.start + s_in, s_out);
      const MetricReport rep = evaluate_frames(pred, truth, ranges);
      frames.insert(frames.end(), rep.frames.begin(), rep.frames.end());
      r.window_mse.push_back(rep.mse);
    }
    r.report = MetricReport::from_frames(std::move(frames));
    r.infer_s = infer;
    if (opt.verbose) {
      std::fprintf(stderr, "%s: ssim %.4f psnr %.2f rrmse %.4f (%.2f s)\n", m.name.c_str(), r.report.ssim,
                   r.report.psnr, r.report.rrmse, r.infer_s);
    }
    result.methods.push_back(std::move(r));
  }

  auto rolling_runs = [&](int requested, auto&& run_one) {
    std::vector<RollingRun> runs;
    for (const auto& sim : test.sims) {
      const int fit = (sim.truth.t() - opt.rolling_start - s_in) / s_out;
      const int n = std::min(requested, fit);
      if (n < 1) continue;
      runs.push_back(run_one(sim, n));
    }
    return runs;
  };
  if (ced && s_in == s_out && opt.ced_iterations > 0) {
    const auto runs = rolling_runs(opt.ced_iterations, [&](const SimSeries& sim, int n) {
      return rolling_forecast_ced(*ced, *lstm, sim, opt.rolling_start, n);
    });
    result.rolling.push_back(average_rolling("ced-lstm", runs));
  }
  if (conv && s_in == s_out && opt.convlstm_iterations > 0) {
    const auto runs = rolling_runs(opt.convlstm_iterations, [&](const SimSeries& sim, int n) {
      return rolling_forecast_convlstm(*conv, sim, opt.rolling_start, n);
    });
    result.rolling.push_back(average_rolling("convlstm", runs));
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_metrics_csv(out_dir / "metrics.csv", result.methods);
    write_rolling_csv(out_dir / "rolling.csv", result.rolling);
    write_hist_csv(out_dir / "hist.csv", result.methods, opt.hist_bins);
  }
  return result;
}

std::vector<HistBin> mse_histogram(const std::vector<std::vector<double>>& samples, int bins) {
  require(bins >= 1, ErrorKind::Argument, "histogram needs at least one bin");
  double hi = 0.0;
  for (const auto& s : samples) {
    for (double v : s) hi = std::max(hi, v);
  }
  if (hi == 0.0) hi = 1.0;
  const double width = hi / bins;
  std::vector<HistBin> out(bins);
  for (int b = 0; b < bins; ++b) {
    out[b].lo = b * width;
    out[b].hi = b + 1 == bins ? hi : (b + 1) * width;
    out[b].counts.assign(samples.size(), 0);
  }
  for (std::size_t v = 0; v < samples.size(); ++v) {
    for (double x : samples[v]) {
      const int b = std::min(bins - 1, static_cast<int>(x / width));
      ++out[std::max(0, b)].counts[v];
    }
  }
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MethodResult>& methods) {
  auto out = open_csv(path);
  out << "method,ssim,psnr_db,rrmse,infer_s\n";
  for (const auto& m : methods) {
    out << m.method << ',' << format_metric(m.report.ssim) << ',' << format_metric(m.report.psnr) << ','
        << format_metric(m.report.rrmse) << ',' << format_metric(m.infer_s) << '\n';
  }
}

void write_rolling_csv(const std::filesystem::path& path, const std::vector<RollingResult>& rolling) {
  auto out = open_csv(path);
  out << "iteration,ssim,psnr_db,rrmse,variant\n";
  for (const auto& r : rolling) {
    for (std::size_t k = 0; k < r.iterations.size(); ++k) {
      const auto& m = r.iterations[k];
      out << k + 1 << ',' << format_metric(m.ssim) << ',' << format_metric(m.psnr) << ','
          << format_metric(m.rrmse) << ',' << r.variant << '\n';
    }
  }
}

void write_hist_csv(const std::filesystem::path& path, const std::vector<MethodResult>& methods, int bins) {
  std::vector<std::vector<double>> samples;
  for (const auto& m : methods) samples.push_back(m.window_mse);
  const auto hist = mse_histogram(samples, bins);
  auto out = open_csv(path);
  out << "bin_lo,bin_hi,count,variant\n";
  for (std::size_t v = 0; v < methods.size(); ++v) {
    for (const auto& b : hist) {
      out << format_metric(b.lo) << ',' << format_metric(b.hi) << ',' << b.counts[v] << ',' << methods[v].method
          << '\n';
    }
  }
}

}  // namespace dsovt
