// Acceptance runner: one PASS/FAIL line per criterion, tolerances pinned below.
//
//   dsovt_acceptance [--only 1,2,5] [--work DIR] [--verbose]
//
// Criteria 6-8 train models on a generated shallow-water dataset inside the
// work directory and share the trained encoder-decoder.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dsovt/forecast.hpp"
#include "dsovt/kriging.hpp"
#include "dsovt/swe.hpp"
#include "dsovt/training.hpp"
#include "dsovt/voronoi.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dsovt;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances and budgets

constexpr double kVoronoiBudgetS = 10.0;
constexpr double kFlatTol = 1e-12;
constexpr double kMassTol = 1e-9;
constexpr double kSymmetryTol = 1e-10;
constexpr double kSweBudgetS = 60.0;
constexpr double kGradTol = 1e-3;
constexpr double kGradBudgetS = 300.0;
constexpr double kWeightSumTol = 1e-10;
constexpr double kExactTol = 1e-6;
constexpr double kKrigOracleTol = 1e-10;
constexpr double kKrigBudgetS = 30.0;
constexpr double kSsimOracleTol = 1e-8;
constexpr double kCedSsimMin = 0.90;
constexpr double kCedRrmseMax = 0.10;
constexpr double kCedLstmRrmseMax = 0.15;
constexpr double kOrderingBudgetS = 2 * 3600.0;
constexpr double kAmbiguity = 0.005;
constexpr double kPhysicsBudgetS = 2 * 3600.0;

// Desk-scale experiment configuration for criteria 6-8.
struct HeavyConfig {
  std::uint64_t data_seed = 2024;
  int train_sims = 10;
  int test_sims = 3;
  std::uint64_t sensor_seed = 7;
  int latent = 128;
  int ced_epochs = 100;
  int ced_frame_stride = 2;
  std::uint64_t ced_seed = 1;
  int lstm_epochs = 40;
  int convlstm_epochs = 30;
  int convlstm_filters = 8;
  int n_init = 15;
  int window_stride = 5;
  double lambda = 5e-10;
  int rolling_start = 75;
  int rolling_iterations = 20;
  int recon_frame_step = 5;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Voronoi oracle equivalence

Outcome voronoi_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int nx = static_cast<int>(rng.uniform_int(4, 32));
    const int ny = static_cast<int>(rng.uniform_int(4, 32));
    const int k = static_cast<int>(rng.uniform_int(1, 15));
    std::set<std::pair<int, int>> used;
    std::vector<GridPoint> pos;
    while (static_cast<int>(pos.size()) < k) {
      const GridPoint p{static_cast<int>(rng.uniform_int(0, nx - 1)), static_cast<int>(rng.uniform_int(0, ny - 1))};
      if (used.insert({p.i, p.j}).second) pos.push_back(p);
    }
    mismatches += nearest_owner_map(pos, nx, ny) != oracle::brute_owner(pos, nx, ny);
  }
  const double s = seconds_since(t0);
  return {mismatches == 0 && s < kVoronoiBudgetS,
          fmt("1000 cases, %d mismatches, %.2f s (budget %.0f s)", mismatches, s, kVoronoiBudgetS)};
}

// ---------------------------------------------------------------------------
// 2. SWE invariants

Outcome swe_invariants() {
  const auto t0 = Clock::now();
  using namespace swe;

  SWEScenario flat;
  flat.delta_h = 0.0;
  SWEState s = init_disturbance(flat);
  const SWEState s0 = s;
  for (int k = 1; k <= 1000; ++k) s = step(s, flat, k);
  double flat_dev = 0.0;
  for (std::size_t i = 0; i < s.h.size(); ++i) {
    flat_dev = std::max({flat_dev, std::abs(s.h[i] - s0.h[i]), std::abs(s.u[i]), std::abs(s.v[i])});
  }

  const SWEScenario full;
  s = init_disturbance(full);
  const double m0 = total_mass(s);
  double drift = 0.0;
  for (int k = 1; k <= full.total_steps; ++k) {
    s = step(s, full, k);
    drift = std::max(drift, std::abs(total_mass(s) - m0) / m0);
  }

  SWEScenario centred;
  centred.cx = 31.5;
  centred.cy = 31.5;
  centred.radius = 8.0;
  s = init_disturbance(centred);
  const int n = centred.nx;
  double asym = 0.0;
  for (int k = 1; k <= 100; ++k) {
    s = step(s, centred, k);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        // A quarter turn maps (h, u, v) at (j, n-1-i) to (h, -v, u) at (i, j).
        const std::size_t a = s.index(i, j), b = s.index(j, n - 1 - i);
        asym = std::max({asym, std::abs(s.h[a] - s.h[b]), std::abs(s.u[a] + s.v[b]), std::abs(s.v[a] - s.u[b])});
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = flat_dev < kFlatTol && drift < kMassTol && asym < kSymmetryTol && secs < kSweBudgetS;
  return {pass, fmt("flat %.2e (< %.0e), mass drift %.2e over %d steps (< %.0e), asymmetry %.2e (< %.0e), %.1f s",
                    flat_dev, kFlatTol, drift, full.total_steps, kMassTol, asym, kSymmetryTol, secs)};
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (double lambda : {0.0, 1e-2}) {
      for (GradLoss loss : {GradLoss::CedLstmComposite, GradLoss::ConvLstmComposite}) {
        const GradCheckResult r = grad_check(loss, lambda, seed);
        if (r.max_rel_error >= worst) {
          worst = r.max_rel_error;
          where = r.worst_param;
        }
      }
    }
  }
  const double s = seconds_since(t0);
  return {worst < kGradTol && s < kGradBudgetS,
          fmt("max relative error %.2e (< %.0e) at %s, %.1f s", worst, kGradTol, where.c_str(), s)};
}

// ---------------------------------------------------------------------------
// 4. Kriging correctness

Outcome kriging() {
  const auto t0 = Clock::now();
  Rng rng(404);
  double sum_err = 0.0, exact_err = 0.0, oracle_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const bool with_time = trial % 2 == 1;
    const int k = static_cast<int>(rng.uniform_int(3, 25));
    std::vector<KrigPoint> pts;
    std::vector<double> vals;
    for (int i = 0; i < k; ++i) {
      pts.push_back({rng.uniform(0, 63), rng.uniform(0, 63), with_time ? rng.uniform(0, 4) : 0.0});
      vals.push_back(std::cos(0.1 * pts.back().x) * std::sin(0.07 * pts.back().y) + rng.uniform(-0.1, 0.1));
    }
    const VariogramModel m = fit_variogram(pts, vals, 20);
    const OrdinaryKriging ok(pts, vals, m);
    for (int q = 0; q < 10; ++q) {
      const KrigPoint p{rng.uniform(0, 63), rng.uniform(0, 63), with_time ? rng.uniform(0, 6) : 0.0};
      double s = 0.0;
      for (double w : ok.weights(p)) s += w;
      sum_err = std::max(sum_err, std::abs(s - 1.0));
      double var = 0.0;
      const double pred = ok.predict(p, &var);
      const auto [op, ov] = oracle::krige(pts, vals, m, p);
      oracle_err = std::max({oracle_err, std::abs(pred - op) / std::max(1.0, std::abs(op)),
                             std::abs(var - ov) / std::max(1.0, std::abs(ov))});
    }
    for (int i = 0; i < k; ++i) exact_err = std::max(exact_err, std::abs(ok.predict(pts[i]) - vals[i]));
  }
  const double s = seconds_since(t0);
  const bool pass = sum_err <= kWeightSumTol && exact_err <= kExactTol && oracle_err <= kKrigOracleTol &&
                    s < kKrigBudgetS;
  return {pass, fmt("weight sum %.2e (<= %.0e), exactness %.2e (<= %.0e), oracle %.2e (<= %.0e), %.2f s",
                    sum_err, kWeightSumTol, exact_err, kExactTol, oracle_err, kKrigOracleTol, s)};
}

// ---------------------------------------------------------------------------
// 5. Metric identities

Outcome metrics() {
  Rng rng(505);
  bool identities = true;
  double worst = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    const int nx = static_cast<int>(rng.uniform_int(6, 24));
    const int ny = static_cast<int>(rng.uniform_int(6, 24));
    const int nc = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<float> a(static_cast<std::size_t>(nx) * ny * nc), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<float>(rng.uniform(0, 1));
      b[i] = a[i] + static_cast<float>(rng.uniform(-0.4, 0.4));
    }
    const FieldView va{a, nx, ny, nc}, vb{b, nx, ny, nc};
    identities = identities && std::abs(ssim(va, va, 1.0) - 1.0) < 1e-12 && rrmse(va, va, 1.0) == 0.0 &&
                 psnr(va, va, 1.0) == std::numeric_limits<double>::infinity();
    OptionalMask mask;
    if (pair % 2 == 1) {
      Mask m = Mask::all_valid(nx, ny);
      for (auto& v : m.valid) v = rng.uniform() < 0.85 ? 1 : 0;
      mask = m;
    }
    worst = std::max(worst, std::abs(ssim(va, vb, 1.4, mask) - oracle::ssim(va, vb, 1.4, mask)));
  }
  return {identities && worst < kSsimOracleTol,
          fmt("identities %s, independent SSIM max difference %.2e over 50 pairs (< %.0e)",
              identities ? "hold" : "violated", worst, kSsimOracleTol)};
}

// ---------------------------------------------------------------------------
// Tiny synthetic data for criteria 9 and 10

PreparedData tiny_data(std::uint64_t seed) {
  Rng rng(seed);
  PreparedData d;
  d.norm = NormStats{{-0.5, -0.5, 0.5}, {0.5, 0.5, 1.5}};
  for (int s = 0; s < 2; ++s) {
    SimSeries sim;
    std::vector<Field> truth, tess;
    for (int t = 0; t < 10; ++t) {
      std::vector<float> a(8 * 8 * 3), b(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<float>(rng.uniform(0, 1));
        b[i] = static_cast<float>(rng.uniform(0, 1));
      }
      truth.emplace_back(8, 8, 3, a);
      tess.emplace_back(8, 8, 3, b);
    }
    sim.truth = FieldSequence(truth);
    sim.tessellated = FieldSequence(tess);
    d.sims.push_back(std::move(sim));
  }
  return d;
}

ConvLstmSpec tiny_convlstm() {
  ConvLstmSpec s;
  s.nx = 8;
  s.ny = 8;
  s.nc = 3;
  s.s_in = 2;
  s.s_out = 2;
  s.filters = 2;
  s.activation = ActivationSpec::parse("bounded,bounded,nonneg");
  return s;
}

TrainOptions tiny_options(int epochs, TrainMode mode) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 4;
  o.learning_rate = 1e-2;
  o.seed = 77;
  o.mode = mode;
  return o;
}

// ---------------------------------------------------------------------------
// 9. lambda = 0 equivalence

Outcome lambda_zero() {
  const PreparedData d = tiny_data(909);
  CedSpec cs;
  cs.nx = 8;
  cs.ny = 8;
  cs.latent = 4;
  cs.filters = {2, 3, 4};
  cs.activation = ActivationSpec::parse("bounded,bounded,nonneg");
  const CedResult ced = train_ced(d, cs, tiny_options(2, TrainMode::DataOnly));
  LatentSeqSpec ls;
  ls.latent = 4;
  ls.s_in = 2;
  ls.s_out = 2;
  ls.hidden = 6;

  auto trajectory = [](auto&& train, TrainMode mode) {
    std::vector<std::vector<float>> traj;
    TrainOptions o = tiny_options(10, mode);
    o.on_epoch = [&](int, const std::vector<float>& p) { traj.push_back(p); };
    train(o);
    return traj;
  };
  auto same = [](const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
    if (a.size() != b.size() || a.size() != 10) return false;
    for (std::size_t e = 0; e < a.size(); ++e) {
      if (a[e].size() != b[e].size() || std::memcmp(a[e].data(), b[e].data(), a[e].size() * sizeof(float)) != 0) {
        return false;
      }
    }
    return true;
  };
  auto lstm = [&](const TrainOptions& o) { train_ced_lstm(d, ced.model, ls, o); };
  auto conv = [&](const TrainOptions& o) { train_convlstm(d, tiny_convlstm(), o); };
  const bool lstm_same = same(trajectory(lstm, TrainMode::DataOnly), trajectory(lstm, TrainMode::Physics));
  const bool conv_same = same(trajectory(conv, TrainMode::DataOnly), trajectory(conv, TrainMode::Physics));
  return {lstm_same && conv_same, fmt("10-epoch parameter trajectories bitwise equal: CED-LSTM %s, ConvLSTM %s",
                                      lstm_same ? "yes" : "no", conv_same ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10. ConvLSTM warm-up

Outcome warm_up() {
  const PreparedData d = tiny_data(1010);
  TrainOptions o = tiny_options(55, TrainMode::Physics);
  o.lambda_energy = 5e-10;
  o.n_init = 50;
  const ConvLstmResult r = train_convlstm(d, tiny_convlstm(), o);
  bool off = true, on = true;
  for (const auto& e : r.report.epochs) {
    if (e.epoch <= 50) {
      off = off && e.energy_term == 0.0 && !e.energy_active;
    } else {
      on = on && e.energy_term > 0.0 && e.energy_active;
    }
  }
  const bool pass = off && on && r.report.epochs.size() == 55 && r.report.switch_epoch == 51;
  return {pass, fmt("energy term exactly 0 for epochs 1-50: %s; computed for 51-55: %s; switch epoch %d",
                    off ? "yes" : "no", on ? "yes" : "no", r.report.switch_epoch)};
}

// ---------------------------------------------------------------------------
// Shared state for criteria 6-8

class Heavy {
 public:
  Heavy(fs::path work, bool verbose) : work_(std::move(work)), verbose_(verbose) {}

  const HeavyConfig& config() const { return cfg_; }

  void log(const std::string& msg) const {
    std::fprintf(stderr, "[acceptance] %s\n", msg.c_str());
    std::fflush(stderr);
  }

  const ExperimentManifest& manifest() {
    if (!manifest_) {
      const auto t0 = Clock::now();
      fs::remove_all(work_);
      fs::create_directories(work_);
      log(fmt("generating %d + %d shallow-water simulations", cfg_.train_sims, cfg_.test_sims));
      ExperimentManifest m = swe::generate_dataset(work_ / "data", cfg_.train_sims, cfg_.test_sims, cfg_.data_seed);
      m.sensors.seed = cfg_.sensor_seed;
      m.model.latent = cfg_.latent;
      m.model.convlstm_filters = cfg_.convlstm_filters;
      m.training.s_in = 5;
      m.training.s_out = 5;
      m.training.window_stride = cfg_.window_stride;
      m.training.frame_stride = cfg_.ced_frame_stride;
      m.training.n_init = cfg_.n_init;
      m.save(work_ / "data" / "manifest.toml");
      manifest_ = m;
      train_ = prepare_split(m, "train");
      test_ = prepare_split(m, "test", train_->norm);
      setup_s_ = seconds_since(t0);
    }
    return *manifest_;
  }
  const PreparedData& train() {
    manifest();
    return *train_;
  }
  const PreparedData& test() {
    manifest();
    return *test_;
  }

  const Ced<float>& ced() {
    if (!ced_) {
      const auto t0 = Clock::now();
      const auto& m = manifest();
      TrainOptions o = train_options_from(m.training, cfg_.ced_seed, TrainMode::DataOnly);
      o.epochs = cfg_.ced_epochs;
      o.verbose = verbose_;
      log(fmt("training CED: Z=%d, %d epochs, frame stride %d", cfg_.latent, o.epochs, o.frame_stride));
      const CedSpec spec = ced_spec_from(m.model, 64, 64, 3);
      CedResult r = train_ced(train(), spec, o);
      save_model(work_ / "ced.dsvm", r.model, train().norm);
      ced_ = std::move(r.model);
      ced_s_ = seconds_since(t0);
    }
    return *ced_;
  }

  /// Trains (once) the latent LSTM for a seed and lambda; lambda 0 runs data-only.
  const LatentLstm<float>& lstm(std::uint64_t seed, double lambda) {
    const auto key = std::pair{seed, lambda};
    if (!lstms_.contains(key)) {
      const auto t0 = Clock::now();
      const auto& m = manifest();
      TrainOptions o = train_options_from(m.training, seed, lambda > 0 ? TrainMode::Physics : TrainMode::DataOnly);
      o.epochs = cfg_.lstm_epochs;
      o.lambda_energy = lambda;
      o.verbose = verbose_;
      log(fmt("training CED-LSTM: seed %llu, lambda %g, %d epochs", static_cast<unsigned long long>(seed), lambda,
              o.epochs));
      LstmResult r = train_ced_lstm(train(), ced(), lstm_spec_from(m.model, m.training), o);
      save_model(work_ / fmt("lstm_s%llu_l%g.dsvm", static_cast<unsigned long long>(seed), lambda), r.model,
                 train().norm);
      lstms_.emplace(key, std::move(r.model));
      train_s_[key_name("lstm", seed, lambda)] = seconds_since(t0);
    }
    return lstms_.at(key);
  }

  const ConvLstm<float>& convlstm(std::uint64_t seed, double lambda) {
    const auto key = std::pair{seed, lambda};
    if (!convs_.contains(key)) {
      const auto t0 = Clock::now();
      const auto& m = manifest();
      TrainOptions o = train_options_from(m.training, seed, lambda > 0 ? TrainMode::Physics : TrainMode::DataOnly);
      o.epochs = cfg_.convlstm_epochs;
      o.lambda_energy = lambda;
      o.n_init = cfg_.n_init;
      o.verbose = verbose_;
      log(fmt("training ConvLSTM: seed %llu, lambda %g, %d epochs, N_init %d", static_cast<unsigned long long>(seed),
              lambda, o.epochs, o.n_init));
      ConvLstmResult r = train_convlstm(train(), convlstm_spec_from(m.model, m.training, 64, 64, 3), o);
      save_model(work_ / fmt("convlstm_s%llu_l%g.dsvm", static_cast<unsigned long long>(seed), lambda), r.model,
                 train().norm);
      convs_.emplace(key, std::move(r.model));
      train_s_[key_name("convlstm", seed, lambda)] = seconds_since(t0);
    }
    return convs_.at(key);
  }

  double train_seconds(const std::string& family, std::uint64_t seed, double lambda) const {
    const auto it = train_s_.find(key_name(family, seed, lambda));
    return it == train_s_.end() ? 0.0 : it->second;
  }
  double setup_seconds() const { return setup_s_; }
  double ced_seconds() const { return ced_s_; }
  const fs::path& work() const { return work_; }

 private:
  static std::string key_name(const std::string& family, std::uint64_t seed, double lambda) {
    return family + fmt("/%llu/%g", static_cast<unsigned long long>(seed), lambda);
  }

  HeavyConfig cfg_;
  fs::path work_;
  bool verbose_ = false;
  std::optional<ExperimentManifest> manifest_;
  std::optional<PreparedData> train_, test_;
  std::optional<Ced<float>> ced_;
  std::map<std::pair<std::uint64_t, double>, LatentLstm<float>> lstms_;
  std::map<std::pair<std::uint64_t, double>, ConvLstm<float>> convs_;
  std::map<std::string, double> train_s_;
  double setup_s_ = 0.0, ced_s_ = 0.0;
};

// ---------------------------------------------------------------------------
// 6. CED reconstruction

Outcome ced_reconstruction(Heavy& h) {
  const Ced<float>& ced = h.ced();
  const auto t0 = Clock::now();
  const PreparedData& test = h.test();
  std::vector<Field> all_truth, truth, recon;
  for (const auto& sim : test.sims) {
    all_truth.insert(all_truth.end(), sim.truth.frames().begin(), sim.truth.frames().end());
    for (int t = 0; t < sim.truth.t(); t += h.config().recon_frame_step) {
      truth.push_back(sim.truth[t]);
      recon.push_back(ced.decode_latent(ced.encode_field(sim.tessellated[t])));
    }
  }
  const auto ranges = truth_ranges(all_truth);
  const MetricReport r = evaluate_frames(recon, truth, ranges);
  const double total = h.setup_seconds() + h.ced_seconds() + seconds_since(t0);
  return {r.ssim >= kCedSsimMin && r.rrmse <= kCedRrmseMax,
          fmt("held-out SSIM %.4f (>= %.2f), R-RMSE %.4f (<= %.2f), PSNR %.2f dB over %zu frames of %zu test sims; "
              "%d epochs, %.0f s",
              r.ssim, kCedSsimMin, r.rrmse, kCedRrmseMax, r.psnr, truth.size(), test.sims.size(),
              h.config().ced_epochs, total)};
}

// ---------------------------------------------------------------------------
// 7. Baseline ordering

Outcome baseline_ordering(Heavy& h) {
  h.ced();
  h.lstm(1, 0.0);
  h.convlstm(1, 0.0);
  const auto t0 = Clock::now();
  SuiteOptions opt;
  opt.ced = h.work() / "ced.dsvm";
  opt.lstm = h.work() / "lstm_s1_l0.dsvm";
  opt.convlstm = h.work() / "convlstm_s1_l0.dsvm";
  opt.baselines = {"kriging2d"};
  const SuiteResult r = evaluate_suite(h.manifest(), opt, h.work() / "eval");
  std::map<std::string, MetricReport> by;
  for (const auto& m : r.methods) by[m.method] = m.report;
  const auto& c = by.at("ced-lstm");
  const auto& v = by.at("convlstm");
  const auto& k = by.at("kriging2d");
  const double secs = h.train_seconds("lstm", 1, 0.0) + h.train_seconds("convlstm", 1, 0.0) + seconds_since(t0);
  const bool pass = c.ssim > k.ssim && v.ssim > k.ssim && c.rrmse <= kCedLstmRrmseMax && secs <= kOrderingBudgetS;
  return {pass, fmt("SSIM CED-LSTM %.4f, ConvLSTM %.4f, 2D-Kriging %.4f; CED-LSTM R-RMSE %.4f (<= %.2f); %.0f s "
                    "(budget %.0f s)",
                    c.ssim, v.ssim, k.ssim, c.rrmse, kCedLstmRrmseMax, secs, kOrderingBudgetS)};
}

// ---------------------------------------------------------------------------
// 8. Physics-constraint effect

double rolling_rrmse(Heavy& h, const std::function<RollingRun(const SimSeries&)>& roll) {
  double sum = 0.0;
  for (const auto& sim : h.test().sims) sum += roll(sim).overall().rrmse;
  return sum / static_cast<double>(h.test().sims.size());
}

struct FamilyResult {
  std::vector<double> base, physics;
  double mean_base = 0.0, mean_physics = 0.0;
  bool pass = false;
  std::string text;
};

FamilyResult physics_family(Heavy& h, const std::string& family) {
  const HeavyConfig& cfg = h.config();
  FamilyResult f;
  auto evaluate = [&](std::uint64_t seed, double lambda) {
    if (family == "lstm") {
      const auto& ced = h.ced();
      const auto& lstm = h.lstm(seed, lambda);
      return rolling_rrmse(h, [&](const SimSeries& s) {
        return rolling_forecast_ced(ced, lstm, s, cfg.rolling_start, cfg.rolling_iterations);
      });
    }
    const auto& model = h.convlstm(seed, lambda);
    return rolling_rrmse(h, [&](const SimSeries& s) {
      return rolling_forecast_convlstm(model, s, cfg.rolling_start, cfg.rolling_iterations);
    });
  };
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    f.base.push_back(evaluate(seed, 0.0));
    f.physics.push_back(evaluate(seed, cfg.lambda));
    h.log(fmt("%s seed %llu: rolling R-RMSE lambda=0 %.8f, lambda=%g %.8f", family.c_str(),
              static_cast<unsigned long long>(seed), f.base.back(), cfg.lambda, f.physics.back()));
    // A clear single-seed difference settles the comparison.
    if (seed == 1 && std::abs(f.physics[0] - f.base[0]) >= kAmbiguity) break;
  }
  for (std::size_t i = 0; i < f.base.size(); ++i) {
    f.mean_base += f.base[i] / static_cast<double>(f.base.size());
    f.mean_physics += f.physics[i] / static_cast<double>(f.physics.size());
  }
  f.pass = f.mean_physics <= f.mean_base;
  f.text = fmt("%s R-RMSE lambda=%g %.8f vs lambda=0 %.8f (%zu seed%s)", family == "lstm" ? "CED-LSTM" : "ConvLSTM",
               cfg.lambda, f.mean_physics, f.mean_base, f.base.size(), f.base.size() > 1 ? "s" : "");
  return f;
}

Outcome physics_effect(Heavy& h) {
  h.ced();
  const bool shared_lstm = h.train_seconds("lstm", 1, 0.0) > 0;
  const bool shared_conv = h.train_seconds("convlstm", 1, 0.0) > 0;
  const auto t0 = Clock::now();
  const FamilyResult lstm = physics_family(h, "lstm");
  const FamilyResult conv = physics_family(h, "convlstm");
  // Data-only seed-1 runs may predate t0 when shared with criterion 7.
  double secs = seconds_since(t0);
  if (shared_lstm) secs += h.train_seconds("lstm", 1, 0.0);
  if (shared_conv) secs += h.train_seconds("convlstm", 1, 0.0);
  const bool pass = lstm.pass && conv.pass && secs <= kPhysicsBudgetS;
  return {pass, fmt("%s; %s; %d iterations from step %d over %zu test sims; %.0f s (budget %.0f s)",
                    lstm.text.c_str(), conv.text.c_str(), h.config().rolling_iterations, h.config().rolling_start,
                    h.test().sims.size(), secs, kPhysicsBudgetS)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string only;
  std::string work = (fs::temp_directory_path() / "dsovt_acceptance").string();
  bool verbose = false;
  app.add_option("--only", only, "Comma-separated criterion numbers (default: all)");
  app.add_option("--work", work, "Work directory for the trained-model criteria");
  app.add_flag("--verbose", verbose, "Per-epoch training progress on stderr");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  if (only.empty()) {
    for (int i = 1; i <= 10; ++i) selected.insert(i);
  } else {
    std::stringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const int n = std::stoi(item);
      if (n < 1 || n > 10) {
        std::fprintf(stderr, "unknown criterion %d\n", n);
        return 2;
      }
      selected.insert(n);
    }
  }

  Heavy heavy(work, verbose);
  const std::map<int, std::function<Outcome()>> criteria{
      {1, voronoi_oracle},
      {2, swe_invariants},
      {3, gradients},
      {4, kriging},
      {5, metrics},
      {6, [&] { return ced_reconstruction(heavy); }},
      {7, [&] { return baseline_ordering(heavy); }},
      {8, [&] { return physics_effect(heavy); }},
      {9, lambda_zero},
      {10, warm_up},
  };
  int failed = 0;
  for (int n : selected) {
    Outcome o;
    try {
      o = criteria.at(n)();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
