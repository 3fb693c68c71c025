#include "dsovt/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>

#include "dsovt/forecast.hpp"
#include "dsovt/manifest.hpp"
#include "dsovt/models.hpp"
#include "dsovt/swe.hpp"
#include "dsovt/tensor_io.hpp"
#include "dsovt/training.hpp"
#include "dsovt/voronoi.hpp"

namespace fs = std::filesystem;

namespace dsovt {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
      return kExitUsage;
    case ErrorKind::Validation:
    case ErrorKind::Argument:
    case ErrorKind::Compatibility:
    case ErrorKind::Range:
    case ErrorKind::Bounds:
    case ErrorKind::Placement:
    case ErrorKind::Positivity:
    case ErrorKind::Capacity:
    case ErrorKind::Contract:
    case ErrorKind::Shape:
      return kExitValidation;
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::Length:
    case ErrorKind::Divergence:
    case ErrorKind::Conditioning:
    case ErrorKind::Degenerate:
      return kExitRuntime;
  }
  return kExitRuntime;
}

namespace {

struct Common {
  std::string manifest;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c, bool with_seed) {
  app->add_option("--manifest", c.manifest, "Experiment manifest (key = value text)")->required();
  app->add_option("--set", c.sets, "Override a manifest entry, key=value (repeatable)");
  if (with_seed) c.seed_opt = app->add_option("--seed", c.seed, "Seed; overrides DSOVT_SEED and the manifest");
  app->add_option("--out", c.out, "Output directory")->required();
  app->add_flag("--verbose", c.verbose, "Progress on stderr");
}

/// --seed, then DSOVT_SEED, then the manifest entry; otherwise an error.
std::uint64_t resolve_seed(const Common& c, const KeyValueDoc& doc, const std::string& key) {
  if (c.seed_opt && c.seed_opt->count() > 0) return c.seed;
  if (const char* env = std::getenv("DSOVT_SEED"); env && *env) {
    std::uint64_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, v);
    require(ec == std::errc() && ptr == end, ErrorKind::Validation,
            std::string("DSOVT_SEED is not an unsigned integer: ") + env);
    return v;
  }
  require(doc.has(key), ErrorKind::Validation,
          "missing key: " + key + " (no --seed flag, DSOVT_SEED or manifest entry)");
  const auto v = doc.get_int(key);
  require(v >= 0, ErrorKind::Validation, key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

struct Loaded {
  KeyValueDoc doc;
  fs::path base_dir;
};

Loaded load_doc(const Common& c, const std::vector<std::pair<std::string, std::string>>& flag_overrides) {
  const fs::path path(c.manifest);
  require(fs::exists(path), ErrorKind::Validation, "manifest not found: " + path.string());
  Loaded l{KeyValueDoc::load(path), path.parent_path()};
  for (const auto& s : c.sets) l.doc.apply_override(s);
  for (const auto& [k, v] : flag_overrides) l.doc.set_raw(k, v);
  return l;
}

ExperimentManifest to_manifest(const Loaded& l, bool check_paths) {
  ExperimentManifest m = ExperimentManifest::from_doc(l.doc, l.base_dir);
  m.validate(check_paths);
  return m;
}

/// Writes the effective manifest with dataset paths re-anchored at the
/// output directory plus the run's own keys, so it reproduces the run.
void write_resolved(const ExperimentManifest& m, const fs::path& out,
                    const std::vector<std::pair<std::string, std::string>>& run_keys) {
  fs::create_directories(out);
  ExperimentManifest copy = m;
  for (auto& s : copy.sims) {
    s.path = fs::proximate(fs::absolute(m.resolve(s.path)), fs::absolute(out)).generic_string();
  }
  copy.base_dir = out;
  KeyValueDoc d = copy.to_doc();
  for (const auto& [k, v] : run_keys) d.set(k, v);
  d.save(out / "resolved.toml");
}

std::string abs_path(const std::string& p) { return fs::absolute(p).lexically_normal().generic_string(); }

std::vector<std::pair<std::string, std::string>> training_flags(const std::optional<int>& epochs,
                                                                 const std::optional<double>& lr,
                                                                 const std::optional<int>& batch,
                                                                 const std::optional<double>& lambda,
                                                                 const std::optional<int>& n_init) {
  std::vector<std::pair<std::string, std::string>> o;
  if (epochs) o.emplace_back("training.epochs", std::to_string(*epochs));
  if (lr) o.emplace_back("training.learning_rate", format_double(*lr));
  if (batch) o.emplace_back("training.batch_size", std::to_string(*batch));
  if (lambda) o.emplace_back("training.lambda_energy", format_double(*lambda));
  if (n_init) o.emplace_back("training.n_init", std::to_string(*n_init));
  return o;
}

struct TrainFlags {
  int epochs = 0, batch = 0, n_init = 0;
  double lr = 0.0, lambda = 0.0;
  CLI::Option *epochs_o = nullptr, *batch_o = nullptr, *n_init_o = nullptr, *lr_o = nullptr, *lambda_o = nullptr;

  void add(CLI::App* app, bool physics, bool warmup) {
    epochs_o = app->add_option("--epochs", epochs, "training.epochs");
    lr_o = app->add_option("--lr", lr, "training.learning_rate");
    batch_o = app->add_option("--batch", batch, "training.batch_size");
    if (physics) lambda_o = app->add_option("--lambda-energy", lambda, "training.lambda_energy");
    if (warmup) n_init_o = app->add_option("--n-init", n_init, "training.n_init");
  }
  template <typename V>
  static std::optional<V> get(const CLI::Option* o, V v) {
    return o && o->count() > 0 ? std::optional<V>(v) : std::nullopt;
  }
  std::vector<std::pair<std::string, std::string>> overrides() const {
    return training_flags(get(epochs_o, epochs), get(lr_o, lr), get(batch_o, batch), get(lambda_o, lambda),
                          get(n_init_o, n_init));
  }
};

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void write_rolling(const fs::path& path, const std::string& variant, const RollingRun& run) {
  RollingResult r;
  r.variant = variant;
  r.iterations = run.reports;
  write_rolling_csv(path, {r});
}

FieldSequence denormalized_frames(const RollingRun& run, const NormStats& norm) {
  FieldSequence seq;
  for (const auto& window : run.predicted) {
    for (const auto& f : window) seq.push_back(denormalize_field(f, norm));
  }
  return seq;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Spatio-temporal prediction from sparse sensors via Voronoi tessellation", "dsovt"};
  app.require_subcommand(1);

  Common sim_c;
  auto* sim = app.add_subcommand("simulate", "Generate shallow-water simulations");
  add_common(sim, sim_c, true);

  Common sen_c;
  std::string sen_split = "all";
  auto* sen = app.add_subcommand("sensors", "Sample sensor series for every simulation");
  add_common(sen, sen_c, true);
  sen->add_option("--split", sen_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));

  std::string tes_in, tes_out;
  auto* tes = app.add_subcommand("tessellate", "Voronoi-tessellate a sensor series");
  tes->add_option("--sensors", tes_in, "Sensor series text file")->required();
  tes->add_option("--out", tes_out, "Output directory")->required();

  Common ced_c;
  TrainFlags ced_f;
  auto* tced = app.add_subcommand("train-ced", "Train the convolutional encoder-decoder");
  add_common(tced, ced_c, true);
  ced_f.add(tced, false, false);

  Common lstm_c;
  TrainFlags lstm_f;
  std::string lstm_ced;
  auto* tlstm = app.add_subcommand("train-ced-lstm", "Train the latent LSTM on a trained CED");
  add_common(tlstm, lstm_c, true);
  lstm_f.add(tlstm, true, false);
  tlstm->add_option("--ced", lstm_ced, "Trained CED model")->required();

  Common conv_c;
  TrainFlags conv_f;
  auto* tconv = app.add_subcommand("train-convlstm", "Train the ConvLSTM");
  add_common(tconv, conv_c, true);
  conv_f.add(tconv, true, true);

  Common fc_c;
  std::string fc_ced, fc_lstm, fc_conv;
  int fc_sim = 0, fc_start = 75, fc_iters = 0;
  auto* fc = app.add_subcommand("forecast", "Rolling forecast on one test simulation");
  add_common(fc, fc_c, false);
  fc->add_option("--ced", fc_ced, "CED model (with --lstm)");
  fc->add_option("--lstm", fc_lstm, "Latent LSTM model (with --ced)");
  fc->add_option("--convlstm", fc_conv, "ConvLSTM model");
  fc->add_option("--sim", fc_sim, "Index into the test split");
  fc->add_option("--start", fc_start, "First observed frame");
  fc->add_option("--iterations", fc_iters, "Rolling iterations (default 42 CED-LSTM, 32 ConvLSTM)");

  Common ev_c;
  SuiteOptions ev_o;
  std::string ev_ced, ev_lstm, ev_conv;
  auto* ev = app.add_subcommand("evaluate", "Compare models and baselines on the test split");
  add_common(ev, ev_c, false);
  ev->add_option("--ced", ev_ced, "CED model (with --lstm)");
  ev->add_option("--lstm", ev_lstm, "Latent LSTM model (with --ced)");
  ev->add_option("--convlstm", ev_conv, "ConvLSTM model");
  ev->add_option("--baselines", ev_o.baselines, "kriging2d, kriging3d, oracle")->delimiter(',');
  ev->add_option("--nlags", ev_o.nlags, "Variogram bins");
  ev->add_option("--window-stride", ev_o.window_stride, "Evaluation window stride (0: S_in + S_out)");
  ev->add_option("--rolling-start", ev_o.rolling_start, "Rolling forecast start frame");
  ev->add_option("--ced-iterations", ev_o.ced_iterations, "CED-LSTM rolling iterations");
  ev->add_option("--convlstm-iterations", ev_o.convlstm_iterations, "ConvLSTM rolling iterations");
  ev->add_option("--hist-bins", ev_o.hist_bins, "MSE histogram bins");

  Common bl_c;
  SuiteOptions bl_o;
  std::string bl_method;
  auto* bl = app.add_subcommand("baseline", "Kriging baseline on the test split");
  bl->add_option("method", bl_method, "kriging2d or kriging3d")
      ->required()
      ->check(CLI::IsMember({"kriging2d", "kriging3d"}));
  add_common(bl, bl_c, false);
  bl->add_option("--nlags", bl_o.nlags, "Variogram bins");
  bl->add_option("--time-scale", bl_o.time_scale, "Time-axis scaling for space-time kriging");
  bl->add_option("--window-stride", bl_o.window_stride, "Evaluation window stride (0: S_in + S_out)");

  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  for (auto& a : storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: usage: %s\n%s", e.what(), app.help().c_str());
    return kExitUsage;
  }

  try {
    if (*sim) {
      const Loaded l = load_doc(sim_c, {});
      const std::uint64_t seed = resolve_seed(sim_c, l.doc, "seed");
      const ExperimentManifest in = to_manifest(l, false);
      const fs::path out(sim_c.out);
      ExperimentManifest m = swe::generate_dataset(out, in.train_count, in.test_count, seed, in.solver);
      m.sensors = in.sensors;
      m.model = in.model;
      m.training = in.training;
      m.save(out / "manifest.toml");
      write_resolved(m, out, {{"run.command", "simulate"}});
    } else if (*sen) {
      const Loaded l = load_doc(sen_c, {});
      const std::uint64_t seed = resolve_seed(sen_c, l.doc, "sensors.seed");
      ExperimentManifest m = to_manifest(l, true);
      m.sensors.seed = seed;
      const fs::path out(sen_c.out);
      fs::create_directories(out);
      const auto seeds = sensor_seeds(m);
      for (std::size_t i = 0; i < m.sims.size(); ++i) {
        if (sen_split != "all" && m.sims[i].split != sen_split) continue;
        const FieldSequence seq = read_tensor(m.resolve(m.sims[i].path));
        write_sensors(out / (stem_of(m.sims[i].path) + ".sensors.txt"),
                      sample_manifest_sensors(m.sensors, seq, seeds[i]));
      }
      write_resolved(m, out, {{"run.command", "sensors"}, {"run.split", sen_split}});
    } else if (*tes) {
      const fs::path out(tes_out);
      fs::create_directories(out);
      const SensorSeries series = read_sensors(tes_in);
      write_tensor(out / (stem_of(stem_of(tes_in)) + ".dsvt"), tessellate_series(series));
      KeyValueDoc d;
      d.set("run.command", "tessellate");
      d.set("run.sensors", abs_path(tes_in));
      d.save(out / "resolved.toml");
    } else if (*tced) {
      const Loaded l = load_doc(ced_c, ced_f.overrides());
      ExperimentManifest m = to_manifest(l, true);
      m.seed = resolve_seed(ced_c, l.doc, "seed");
      const PreparedData data = prepare_split(m, "train");
      m.norm = data.norm;
      const fs::path out(ced_c.out);
      write_resolved(m, out, {{"run.command", "train-ced"}});
      TrainOptions o = train_options_from(m.training, *m.seed, TrainMode::DataOnly);
      o.verbose = ced_c.verbose;
      const auto& f = data.sims.front().truth;
      CedResult r = train_ced(data, ced_spec_from(m.model, f.nx(), f.ny(), f.nc()), o);
      save_model(out / "ced.dsvm", r.model, data.norm);
      r.report.write_csv(out / "train.csv");
    } else if (*tlstm) {
      const Loaded l = load_doc(lstm_c, lstm_f.overrides());
      ExperimentManifest m = to_manifest(l, true);
      m.seed = resolve_seed(lstm_c, l.doc, "seed");
      std::optional<NormStats> norm;
      const Ced<float> ced = load_ced(lstm_ced, std::nullopt, &norm);
      require(norm.has_value(), ErrorKind::Compatibility, lstm_ced + " carries no normalization statistics");
      m.norm = norm;
      const PreparedData data = prepare_split(m, "train", norm);
      const fs::path out(lstm_c.out);
      write_resolved(m, out, {{"run.command", "train-ced-lstm"}, {"run.ced", abs_path(lstm_ced)}});
      const TrainMode mode = m.training.lambda_energy > 0.0 ? TrainMode::Physics : TrainMode::DataOnly;
      TrainOptions o = train_options_from(m.training, *m.seed, mode);
      o.verbose = lstm_c.verbose;
      LatentSeqSpec spec = lstm_spec_from(m.model, m.training);
      spec.latent = ced.spec().latent;
      LstmResult r = train_ced_lstm(data, ced, spec, o);
      save_model(out / "lstm.dsvm", r.model, norm);
      r.report.write_csv(out / "train.csv");
    } else if (*tconv) {
      const Loaded l = load_doc(conv_c, conv_f.overrides());
      ExperimentManifest m = to_manifest(l, true);
      m.seed = resolve_seed(conv_c, l.doc, "seed");
      const PreparedData data = prepare_split(m, "train");
      m.norm = data.norm;
      const fs::path out(conv_c.out);
      write_resolved(m, out, {{"run.command", "train-convlstm"}});
      const TrainMode mode = m.training.lambda_energy > 0.0 ? TrainMode::Physics : TrainMode::DataOnly;
      TrainOptions o = train_options_from(m.training, *m.seed, mode);
      o.verbose = conv_c.verbose;
      const auto& f = data.sims.front().truth;
      ConvLstmResult r = train_convlstm(data, convlstm_spec_from(m.model, m.training, f.nx(), f.ny(), f.nc()), o);
      save_model(out / "convlstm.dsvm", r.model, data.norm);
      r.report.write_csv(out / "train.csv");
    } else if (*fc) {
      const Loaded l = load_doc(fc_c, {});
      ExperimentManifest m = to_manifest(l, true);
      const bool latent = !fc_ced.empty() || !fc_lstm.empty();
      require(latent != !fc_conv.empty(), ErrorKind::Validation,
              "missing key: models (give --ced and --lstm, or --convlstm)");
      require(!latent || (!fc_ced.empty() && !fc_lstm.empty()), ErrorKind::Validation,
              std::string("missing key: ") + (fc_ced.empty() ? "--ced" : "--lstm"));
      std::optional<NormStats> norm;
      std::optional<Ced<float>> ced;
      std::optional<LatentLstm<float>> lstm;
      std::optional<ConvLstm<float>> conv;
      if (latent) {
        ced.emplace(load_ced(fc_ced, std::nullopt, &norm));
        lstm.emplace(load_latent_lstm(fc_lstm));
      } else {
        conv.emplace(load_convlstm(fc_conv, std::nullopt, &norm));
      }
      require(norm.has_value(), ErrorKind::Compatibility, "model file carries no normalization statistics");
      m.norm = norm;
      const PreparedData test = prepare_split(m, "test", norm);
      require(fc_sim >= 0 && fc_sim < static_cast<int>(test.sims.size()), ErrorKind::Validation,
              "--sim " + std::to_string(fc_sim) + " is outside the test split (" +
                  std::to_string(test.sims.size()) + " simulations)");
      const int iters = fc_iters > 0 ? fc_iters : (latent ? 42 : 32);
      const fs::path out(fc_c.out);
      write_resolved(m, out,
                     {{"run.command", "forecast"},
                      {"run.model", latent ? abs_path(fc_ced) + "," + abs_path(fc_lstm) : abs_path(fc_conv)},
                      {"run.sim", std::to_string(fc_sim)},
                      {"run.start", std::to_string(fc_start)},
                      {"run.iterations", std::to_string(iters)}});
      const SimSeries& s = test.sims[static_cast<std::size_t>(fc_sim)];
      const RollingRun run = latent ? rolling_forecast_ced(*ced, *lstm, s, fc_start, iters)
                                     : rolling_forecast_convlstm(*conv, s, fc_start, iters);
      write_tensor(out / "forecast.dsvt", denormalized_frames(run, *norm));
      write_rolling(out / "rolling.csv", latent ? "ced-lstm" : "convlstm", run);
    } else if (*ev || *bl) {
      const bool is_ev = static_cast<bool>(*ev);
      Common& c = is_ev ? ev_c : bl_c;
      SuiteOptions o = is_ev ? ev_o : bl_o;
      if (is_ev) {
        require(ev_ced.empty() == ev_lstm.empty(), ErrorKind::Validation,
                std::string("missing key: ") + (ev_ced.empty() ? "--ced" : "--lstm"));
        if (!ev_ced.empty()) {
          o.ced = ev_ced;
          o.lstm = ev_lstm;
        }
        if (!ev_conv.empty()) o.convlstm = ev_conv;
        require(o.ced || o.convlstm || !o.baselines.empty(), ErrorKind::Validation,
                "missing key: models (give --ced and --lstm, --convlstm or --baselines)");
      } else {
        o.baselines = {bl_method};
      }
      o.verbose = c.verbose;
      const Loaded l = load_doc(c, {});
      const ExperimentManifest m = to_manifest(l, true);
      const fs::path out(c.out);
      std::string models;
      for (const auto& p : {o.ced, o.lstm, o.convlstm}) {
        if (p) models += (models.empty() ? "" : ",") + abs_path(p->string());
      }
      std::string baselines;
      for (const auto& b : o.baselines) baselines += (baselines.empty() ? "" : ",") + b;
      write_resolved(m, out,
                     {{"run.command", is_ev ? "evaluate" : "baseline"},
                      {"run.models", models},
                      {"run.baselines", baselines},
                      {"run.nlags", std::to_string(o.nlags)},
                      {"run.time_scale", format_double(o.time_scale)},
                      {"run.window_stride", std::to_string(o.window_stride)},
                      {"run.rolling_start", std::to_string(o.rolling_start)}});
      evaluate_suite(m, o, out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(kind_name(e.kind())).c_str(), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace dsovt
