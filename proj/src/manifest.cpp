#include "dsovt/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dsovt/error.hpp"

namespace fs = std::filesystem;

namespace dsovt {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

std::string unquote(const std::string& literal, const std::string& key) {
  require(literal.size() >= 2 && literal.front() == '"' && literal.back() == '"',
          ErrorKind::Validation, "key '" + key + "' is not a string: " + literal);
  std::string out;
  for (std::size_t i = 1; i + 1 < literal.size(); ++i) {
    if (literal[i] == '\\' && i + 2 < literal.size()) ++i;
    out += literal[i];
  }
  return out;
}

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_str) {
      ++i;
      continue;
    }
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

std::vector<std::string> split_array(const std::string& literal, const std::string& key) {
  require(literal.size() >= 2 && literal.front() == '[' && literal.back() == ']',
          ErrorKind::Validation, "key '" + key + "' is not an array: " + literal);
  std::vector<std::string> items;
  std::string cur;
  bool in_str = false;
  for (std::size_t i = 1; i + 1 < literal.size(); ++i) {
    const char ch = literal[i];
    if (ch == '\\' && in_str) {
      cur += ch;
      cur += literal[++i];
      continue;
    }
    if (ch == '"') in_str = !in_str;
    if (ch == ',' && !in_str) {
      items.push_back(trim(cur));
      cur.clear();
      continue;
    }
    cur += ch;
  }
  if (!trim(cur).empty() || !items.empty()) items.push_back(trim(cur));
  return items;
}

double parse_double(const std::string& text, const std::string& key) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorKind::Validation,
          "key '" + key + "' is not a number: " + text);
  return v;
}

bool looks_like_literal(const std::string& v) {
  if (v.empty()) return false;
  if (v.front() == '"' || v.front() == '[' || v == "true" || v == "false") return true;
  double d = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  return ec == std::errc() && ptr == v.data() + v.size();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

KeyValueDoc KeyValueDoc::parse(const std::string& text, const std::string& origin) {
  KeyValueDoc doc;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[' && body.back() == ']' && body.find('=') == std::string::npos) {
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    require(eq != std::string::npos, ErrorKind::Validation,
            origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    require(!key.empty() && !value.empty(), ErrorKind::Validation,
            origin + ":" + std::to_string(lineno) + ": empty key or value");
    require(looks_like_literal(value), ErrorKind::Validation,
            origin + ":" + std::to_string(lineno) + ": bad value literal '" + value + "'");
    if (!section.empty()) key = section + "." + key;
    doc.set_raw(key, value);
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string KeyValueDoc::dump() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

void KeyValueDoc::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << dump();
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

bool KeyValueDoc::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == key; });
}

const std::string& KeyValueDoc::raw(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.first == key) return e.second;
  }
  fail(ErrorKind::Validation, "missing key '" + key + "'");
}

void KeyValueDoc::set_raw(const std::string& key, std::string literal) {
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = std::move(literal);
      return;
    }
  }
  entries_.emplace_back(key, std::move(literal));
}

void KeyValueDoc::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::Validation,
          "override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  set_raw(key, looks_like_literal(value) ? value : quote(value));
}

std::string KeyValueDoc::get_string(const std::string& key) const { return unquote(raw(key), key); }

std::int64_t KeyValueDoc::get_int(const std::string& key) const {
  const std::string& text = raw(key);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorKind::Validation,
          "key '" + key + "' is not an integer: " + text);
  return v;
}

double KeyValueDoc::get_double(const std::string& key) const { return parse_double(raw(key), key); }

std::vector<std::string> KeyValueDoc::get_string_list(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& item : split_array(raw(key), key)) out.push_back(unquote(item, key));
  return out;
}

std::vector<double> KeyValueDoc::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_array(raw(key), key)) out.push_back(parse_double(item, key));
  return out;
}

void KeyValueDoc::set(const std::string& key, const std::string& value) { set_raw(key, quote(value)); }
void KeyValueDoc::set(const std::string& key, std::int64_t value) { set_raw(key, std::to_string(value)); }
void KeyValueDoc::set(const std::string& key, std::uint64_t value) { set_raw(key, std::to_string(value)); }
void KeyValueDoc::set(const std::string& key, double value) { set_raw(key, format_double(value)); }

void KeyValueDoc::set(const std::string& key, const std::vector<std::string>& values) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? ", " : "") + quote(values[i]);
  set_raw(key, s + "]");
}

void KeyValueDoc::set(const std::string& key, const std::vector<double>& values) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? ", " : "") + format_double(values[i]);
  set_raw(key, s + "]");
}

void KeyValueDoc::set(const std::string& key, const std::vector<int>& values) {
  std::string s = "[";
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? ", " : "") + std::to_string(values[i]);
  set_raw(key, s + "]");
}

// ---------------------------------------------------------------------------

std::vector<std::string> ExperimentManifest::dataset_paths() const {
  std::vector<std::string> out;
  for (const auto& s : sims) out.push_back(s.path);
  return out;
}

fs::path ExperimentManifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<const SimRecord*> ExperimentManifest::split(const std::string& which) const {
  std::vector<const SimRecord*> out;
  for (const auto& s : sims) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

void ExperimentManifest::validate(bool check_paths) const {
  const auto& t = training;
  require(t.s_in >= 1 && t.s_out >= 1, ErrorKind::Validation, "training.s_in and training.s_out must be >= 1");
  require(t.lambda_energy >= 0.0, ErrorKind::Validation, "training.lambda_energy must be >= 0");
  require(t.n_init >= 0, ErrorKind::Validation, "training.n_init must be >= 0");
  require(t.epochs >= 1, ErrorKind::Validation, "training.epochs must be >= 1");
  require(t.learning_rate > 0.0, ErrorKind::Validation, "training.learning_rate must be > 0");
  require(t.batch_size >= 1, ErrorKind::Validation, "training.batch_size must be >= 1");
  require(t.window_stride >= 1 && t.frame_stride >= 1, ErrorKind::Validation,
          "training strides must be >= 1");
  require(train_count >= 0 && test_count >= 0, ErrorKind::Validation, "split counts must be >= 0");
  require(sensors.kind == "jittered" || sensors.kind == "random", ErrorKind::Validation,
          "sensors.kind must be 'jittered' or 'random'");
  require(sensors.count >= 1, ErrorKind::Validation, "sensors.count must be >= 1");
  for (const auto& s : sims) {
    require(s.split == "train" || s.split == "test", ErrorKind::Validation,
            "sim split must be 'train' or 'test', got '" + s.split + "'");
    if (check_paths) {
      require(fs::exists(resolve(s.path)), ErrorKind::Validation,
              "dataset path does not exist: " + resolve(s.path).string());
    }
  }
  if (norm) norm->validate();
}

KeyValueDoc ExperimentManifest::to_doc() const {
  KeyValueDoc d;
  if (seed) d.set("seed", *seed);
  d.set("dataset.paths", dataset_paths());
  d.set("split.train_count", train_count);
  d.set("split.test_count", test_count);
  d.set("solver.nx", solver.nx);
  d.set("solver.ny", solver.ny);
  d.set("solver.base_depth", solver.base_depth);
  d.set("solver.g", solver.g);
  d.set("solver.dt", solver.dt);
  d.set("solver.total_steps", solver.total_steps);
  d.set("solver.equilibrium_steps", solver.equilibrium_steps);
  d.set("solver.snapshot_interval", solver.snapshot_interval);
  for (std::size_t i = 0; i < sims.size(); ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "sim.%03zu.", i);
    const auto& s = sims[i];
    const std::string p(prefix);
    d.set(p + "path", s.path);
    d.set(p + "split", s.split);
    d.set(p + "delta_h", s.delta_h);
    d.set(p + "radius", s.radius);
    d.set(p + "cx", s.cx);
    d.set(p + "cy", s.cy);
    d.set(p + "seed", s.seed);
  }
  d.set("sensors.kind", sensors.kind);
  d.set("sensors.count", sensors.count);
  d.set("sensors.jitter", sensors.jitter);
  d.set("sensors.seed", sensors.seed);
  d.set("model.latent", model.latent);
  d.set("model.ced_filters", model.ced_filters);
  d.set("model.lstm_layers", model.lstm_layers);
  d.set("model.lstm_hidden", model.lstm_hidden);
  d.set("model.convlstm_layers", model.convlstm_layers);
  d.set("model.convlstm_filters", model.convlstm_filters);
  d.set("model.convlstm_kernel", model.convlstm_kernel);
  d.set("model.activation", model.activation);
  d.set("training.s_in", training.s_in);
  d.set("training.s_out", training.s_out);
  d.set("training.lambda_energy", training.lambda_energy);
  d.set("training.n_init", training.n_init);
  d.set("training.epochs", training.epochs);
  d.set("training.learning_rate", training.learning_rate);
  d.set("training.batch_size", training.batch_size);
  d.set("training.window_stride", training.window_stride);
  d.set("training.frame_stride", training.frame_stride);
  if (norm) {
    d.set("norm.min", norm->min);
    d.set("norm.max", norm->max);
  }
  return d;
}

namespace {

template <typename T, typename Getter>
void read_opt(const KeyValueDoc& d, const std::string& key, T& out, Getter get) {
  if (d.has(key)) out = static_cast<T>(get(key));
}

}  // namespace

ExperimentManifest ExperimentManifest::from_doc(const KeyValueDoc& d, const fs::path& base_dir) {
  ExperimentManifest m;
  m.base_dir = base_dir;
  auto gi = [&](const std::string& k) { return d.get_int(k); };
  auto gd = [&](const std::string& k) { return d.get_double(k); };
  auto gs = [&](const std::string& k) { return d.get_string(k); };
  if (d.has("seed")) {
    const auto s = d.get_int("seed");
    require(s >= 0, ErrorKind::Validation, "seed must be non-negative");
    m.seed = static_cast<std::uint64_t>(s);
  }
  read_opt(d, "split.train_count", m.train_count, gi);
  read_opt(d, "split.test_count", m.test_count, gi);
  read_opt(d, "solver.nx", m.solver.nx, gi);
  read_opt(d, "solver.ny", m.solver.ny, gi);
  read_opt(d, "solver.base_depth", m.solver.base_depth, gd);
  read_opt(d, "solver.g", m.solver.g, gd);
  read_opt(d, "solver.dt", m.solver.dt, gd);
  read_opt(d, "solver.total_steps", m.solver.total_steps, gi);
  read_opt(d, "solver.equilibrium_steps", m.solver.equilibrium_steps, gi);
  read_opt(d, "solver.snapshot_interval", m.solver.snapshot_interval, gi);

  std::vector<std::string> paths;
  if (d.has("dataset.paths")) paths = d.get_string_list("dataset.paths");
  for (std::size_t i = 0;; ++i) {
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "sim.%03zu.", i);
    const std::string p(prefix);
    if (!d.has(p + "path")) break;
    SimRecord s;
    s.path = gs(p + "path");
    read_opt(d, p + "split", s.split, gs);
    read_opt(d, p + "delta_h", s.delta_h, gd);
    read_opt(d, p + "radius", s.radius, gd);
    read_opt(d, p + "cx", s.cx, gd);
    read_opt(d, p + "cy", s.cy, gd);
    read_opt(d, p + "seed", s.seed, gi);
    m.sims.push_back(std::move(s));
  }
  if (m.sims.empty()) {
    // Ingested datasets list plain paths; the first train_count are training data.
    for (std::size_t i = 0; i < paths.size(); ++i) {
      SimRecord s;
      s.path = paths[i];
      s.split = static_cast<int>(i) < m.train_count ? "train" : "test";
      m.sims.push_back(std::move(s));
    }
  } else if (!paths.empty()) {
    require(paths == m.dataset_paths(), ErrorKind::Validation,
            "dataset.paths disagrees with sim.* entries");
  }

  read_opt(d, "sensors.kind", m.sensors.kind, gs);
  read_opt(d, "sensors.count", m.sensors.count, gi);
  read_opt(d, "sensors.jitter", m.sensors.jitter, gi);
  read_opt(d, "sensors.seed", m.sensors.seed, gi);
  read_opt(d, "model.latent", m.model.latent, gi);
  if (d.has("model.ced_filters")) {
    m.model.ced_filters.clear();
    for (double v : d.get_double_list("model.ced_filters")) m.model.ced_filters.push_back(static_cast<int>(v));
  }
  read_opt(d, "model.lstm_layers", m.model.lstm_layers, gi);
  read_opt(d, "model.lstm_hidden", m.model.lstm_hidden, gi);
  read_opt(d, "model.convlstm_layers", m.model.convlstm_layers, gi);
  read_opt(d, "model.convlstm_filters", m.model.convlstm_filters, gi);
  read_opt(d, "model.convlstm_kernel", m.model.convlstm_kernel, gi);
  read_opt(d, "model.activation", m.model.activation, gs);
  read_opt(d, "training.s_in", m.training.s_in, gi);
  read_opt(d, "training.s_out", m.training.s_out, gi);
  read_opt(d, "training.lambda_energy", m.training.lambda_energy, gd);
  read_opt(d, "training.n_init", m.training.n_init, gi);
  read_opt(d, "training.epochs", m.training.epochs, gi);
  read_opt(d, "training.learning_rate", m.training.learning_rate, gd);
  read_opt(d, "training.batch_size", m.training.batch_size, gi);
  read_opt(d, "training.window_stride", m.training.window_stride, gi);
  read_opt(d, "training.frame_stride", m.training.frame_stride, gi);
  if (d.has("norm.min") || d.has("norm.max")) {
    m.norm = NormStats{d.get_double_list("norm.min"), d.get_double_list("norm.max")};
  }
  return m;
}

ExperimentManifest ExperimentManifest::load(const fs::path& path, bool check_paths) {
  auto m = from_doc(KeyValueDoc::load(path), path.parent_path());
  m.validate(check_paths);
  return m;
}

void ExperimentManifest::save(const fs::path& path) const { to_doc().save(path); }

}  // namespace dsovt
