#include "dsovt/kriging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "dsovt/error.hpp"

namespace dsovt {

double distance(const KrigPoint& a, const KrigPoint& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dt = a.t - b.t;
  return std::sqrt(dx * dx + dy * dy + dt * dt);
}

double spherical_shape(double d, double range) {
  if (d >= range) return 1.0;
  const double s = d / range;
  return 1.5 * s - 0.5 * s * s * s;
}

double VariogramModel::operator()(double d) const { return nugget + sill * spherical_shape(d, range); }

namespace {

struct LinearFit {
  double sill = 0.0;
  double nugget = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

// Least squares of y ~ sill * f + nugget subject to sill, nugget >= 0.
LinearFit fit_fixed_range(const std::vector<double>& f, const std::vector<double>& y) {
  double sff = 0, sf = 0, sfy = 0, sy = 0;
  const double n = static_cast<double>(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    sff += f[i] * f[i];
    sf += f[i];
    sfy += f[i] * y[i];
    sy += y[i];
  }
  auto sse = [&](double a, double b) {
    double s = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double r = a * f[i] + b - y[i];
      s += r * r;
    }
    return s;
  };
  LinearFit best;
  auto consider = [&](double a, double b) {
    if (a < 0 || b < 0 || !std::isfinite(a) || !std::isfinite(b)) return;
    const double e = sse(a, b);
    if (e < best.sse) best = {a, b, e};
  };
  const double det = sff * n - sf * sf;
  if (det > 1e-12 * std::max(1.0, sff * n)) consider((sfy * n - sf * sy) / det, (sff * sy - sf * sfy) / det);
  if (sff > 0) consider(sfy / sff, 0.0);
  consider(0.0, sy / n);
  consider(0.0, 0.0);
  return best;
}

}  // namespace

VariogramModel fit_variogram(std::span<const KrigPoint> points, std::span<const double> values, int nlags) {
  require(points.size() == values.size(), ErrorKind::Shape, "variogram points and values differ in length");
  require(points.size() >= 3, ErrorKind::Argument, "variogram fit needs at least 3 points");
  require(nlags >= 1, ErrorKind::Argument, "nlags must be positive");
  VariogramModel m;
  m.nlags = nlags;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) {
    m.degenerate = true;
    m.bin_centers.assign(nlags, 0.0);
    m.semivariance.assign(nlags, 0.0);
    m.bin_counts.assign(nlags, 0);
    return m;
  }

  const std::size_t k = points.size();
  double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double d = distance(points[i], points[j]);
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  }
  const double width = dmax > dmin ? (dmax - dmin) / nlags : 1.0;
  std::vector<double> sums(nlags, 0.0);
  m.bin_counts.assign(nlags, 0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double d = distance(points[i], points[j]);
      const int b = std::min(nlags - 1, static_cast<int>((d - dmin) / width));
      const double dz = values[i] - values[j];
      sums[b] += 0.5 * dz * dz;
      ++m.bin_counts[b];
    }
  }
  std::vector<double> centers, sv;
  m.bin_centers.resize(nlags);
  m.semivariance.assign(nlags, 0.0);
  for (int b = 0; b < nlags; ++b) {
    m.bin_centers[b] = dmin + (b + 0.5) * width;
    if (m.bin_counts[b] == 0) continue;
    m.semivariance[b] = sums[b] / m.bin_counts[b];
    centers.push_back(m.bin_centers[b]);
    sv.push_back(m.semivariance[b]);
  }

  if (centers.size() == 1) {
    m.sill = sv.front();
    m.nugget = 0.0;
    m.range = 2.0 * centers.front();
    return m;
  }

  auto eval = [&](double r) {
    std::vector<double> f(centers.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = spherical_shape(centers[i], r);
    return fit_fixed_range(f, sv);
  };
  // Log-spaced range scan, then golden-section refinement around the best.
  const double r_lo = std::max(0.1 * centers.front(), 1e-6);
  const double r_hi = 2.0 * centers.back();
  constexpr int kScan = 200;
  std::vector<double> grid(kScan);
  int best = 0;
  LinearFit best_fit;
  for (int i = 0; i < kScan; ++i) {
    grid[i] = r_lo * std::pow(r_hi / r_lo, static_cast<double>(i) / (kScan - 1));
    const LinearFit f = eval(grid[i]);
    if (f.sse < best_fit.sse) {
      best_fit = f;
      best = i;
    }
  }
  double a = grid[std::max(0, best - 1)];
  double b = grid[std::min(kScan - 1, best + 1)];
  double best_r = grid[best];
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  LinearFit fc = eval(c), fd = eval(d);
  for (int it = 0; it < 60; ++it) {
    if (fc.sse <= fd.sse) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = eval(d);
    }
  }
  if (fc.sse < best_fit.sse) {
    best_fit = fc;
    best_r = c;
  }
  if (fd.sse < best_fit.sse) {
    best_fit = fd;
    best_r = d;
  }
  m.sill = best_fit.sill;
  m.nugget = best_fit.nugget;
  m.range = best_r;
  return m;
}

// ---------------------------------------------------------------------------

OrdinaryKriging::OrdinaryKriging(std::vector<KrigPoint> points, std::vector<double> values, VariogramModel model)
    : points_(std::move(points)), values_(std::move(values)), model_(std::move(model)) {
  require(points_.size() == values_.size(), ErrorKind::Shape, "kriging points and values differ in length");
  require(!points_.empty(), ErrorKind::Argument, "kriging needs at least one point");
  const std::size_t k = points_.size();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      require(!(points_[i] == points_[j]), ErrorKind::Conditioning,
              "duplicate kriging point (" + std::to_string(points_[i].x) + ", " + std::to_string(points_[i].y) +
                  ", " + std::to_string(points_[i].t) + ") makes the system singular");
    }
  }
  for (double v : values_) mean_ += v;
  mean_ /= static_cast<double>(k);
  if (model_.degenerate) return;

  Eigen::MatrixXd a(k + 1, k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    a(i, i) = 0.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      const double g = model_(distance(points_[i], points_[j]));
      a(i, j) = g;
      a(j, i) = g;
    }
    a(i, k) = 1.0;
    a(k, i) = 1.0;
  }
  a(k, k) = 0.0;
  lu_.compute(a);
  const double rc = lu_.rcond();
  require(std::isfinite(rc) && rc > 1e-14, ErrorKind::Conditioning,
          "kriging system is singular (rcond " + std::to_string(rc) + ")");
}

Eigen::VectorXd OrdinaryKriging::rhs(const KrigPoint& q) const {
  const std::size_t k = points_.size();
  Eigen::VectorXd b(k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    const double d = distance(q, points_[i]);
    b(i) = d == 0.0 ? 0.0 : model_(d);
  }
  b(k) = 1.0;
  return b;
}

std::vector<double> OrdinaryKriging::weights(const KrigPoint& q, double* mu) const {
  const std::size_t k = points_.size();
  if (model_.degenerate) {
    if (mu) *mu = 0.0;
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
  }
  const Eigen::VectorXd x = lu_.solve(rhs(q));
  if (mu) *mu = x(k);
  return {x.data(), x.data() + k};
}

double OrdinaryKriging::predict(const KrigPoint& q, double* variance) const {
  const std::vector<KrigPoint> one{q};
  std::vector<double> var;
  const auto p = predict_many(one, variance ? &var : nullptr);
  if (variance) *variance = var.front();
  return p.front();
}

std::vector<double> OrdinaryKriging::predict_many(std::span<const KrigPoint> qs, std::vector<double>* variance) const {
  const std::size_t k = points_.size();
  if (model_.degenerate) {
    if (variance) variance->assign(qs.size(), 0.0);
    return std::vector<double>(qs.size(), mean_);
  }
  Eigen::MatrixXd b(k + 1, static_cast<Eigen::Index>(qs.size()));
  for (std::size_t j = 0; j < qs.size(); ++j) b.col(static_cast<Eigen::Index>(j)) = rhs(qs[j]);
  const Eigen::MatrixXd x = lu_.solve(b);
  const Eigen::Map<const Eigen::VectorXd> z(values_.data(), static_cast<Eigen::Index>(k));
  const Eigen::VectorXd pred = x.topRows(k).transpose() * z;
  if (variance) {
    variance->resize(qs.size());
    for (std::size_t j = 0; j < qs.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      (*variance)[j] = x.col(jj).head(k).dot(b.col(jj).head(k)) + x(k, jj);
    }
  }
  return {pred.data(), pred.data() + pred.size()};
}

int merge_duplicates(std::vector<KrigPoint>& points, std::vector<double>& values) {
  std::vector<KrigPoint> p;
  std::vector<double> sum;
  std::vector<int> count;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto it = std::find(p.begin(), p.end(), points[i]);
    if (it == p.end()) {
      p.push_back(points[i]);
      sum.push_back(values[i]);
      count.push_back(1);
    } else {
      const auto j = static_cast<std::size_t>(it - p.begin());
      sum[j] += values[i];
      ++count[j];
    }
  }
  const int merged = static_cast<int>(points.size() - p.size());
  for (std::size_t j = 0; j < p.size(); ++j) sum[j] /= count[j];
  points = std::move(p);
  values = std::move(sum);
  return merged;
}

namespace {

std::vector<KrigPoint> grid_targets(int nx, int ny, double t) {
  std::vector<KrigPoint> q;
  q.reserve(static_cast<std::size_t>(nx) * ny);
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) q.push_back({static_cast<double>(x), static_cast<double>(y), t});
  }
  return q;
}

Field to_field(const std::vector<double>& v, int nx, int ny) {
  std::vector<float> f(v.begin(), v.end());
  return Field(nx, ny, 1, std::move(f));
}

}  // namespace

KrigeResult krige2d(std::span<const KrigPoint> points, std::span<const double> values, const VariogramModel& model,
                    int nx, int ny) {
  OrdinaryKriging ok({points.begin(), points.end()}, {values.begin(), values.end()}, model);
  KrigeResult r;
  const auto pred = ok.predict_many(grid_targets(nx, ny, 0.0), &r.variance);
  r.field = to_field(pred, nx, ny);
  return r;
}

std::vector<Field> krige3d(std::span<const KrigPoint> points, std::span<const double> values,
                           const VariogramModel& model, int nx, int ny, std::span<const double> query_times) {
  OrdinaryKriging ok({points.begin(), points.end()}, {values.begin(), values.end()}, model);
  std::vector<Field> out;
  for (double t : query_times) out.push_back(to_field(ok.predict_many(grid_targets(nx, ny, t)), nx, ny));
  return out;
}

namespace {

void collect(const SensorFrame& frame, int c, double t, std::vector<KrigPoint>& pts, std::vector<double>& vals) {
  for (const auto& s : frame) {
    require(c < static_cast<int>(s.values.size()), ErrorKind::Shape, "sensor lacks channel " + std::to_string(c));
    pts.push_back({static_cast<double>(s.pos.i), static_cast<double>(s.pos.j), t});
    vals.push_back(s.values[c]);
  }
}

void merge_with_warning(std::vector<KrigPoint>& pts, std::vector<double>& vals) {
  const int merged = merge_duplicates(pts, vals);
  if (merged > 0) std::fprintf(stderr, "warning: averaged %d duplicate sensor point(s)\n", merged);
}

Field combine_channels(const std::vector<std::vector<double>>& channels, int nx, int ny) {
  const int nc = static_cast<int>(channels.size());
  Field f(nx, ny, nc);
  auto v = f.values();
  const std::size_t cells = static_cast<std::size_t>(nx) * ny;
  for (std::size_t p = 0; p < cells; ++p) {
    for (int c = 0; c < nc; ++c) v[p * nc + c] = static_cast<float>(channels[c][p]);
  }
  return f;
}

}  // namespace

std::vector<Field> kriging_forecast_2d(std::span<const SensorFrame> frames, int nx, int ny, int nc, int nlags,
                                       int s_out) {
  const int s_in = static_cast<int>(frames.size());
  require(s_in >= 2, ErrorKind::Contract, "2-D kriging forecast needs S_in >= 2, got " + std::to_string(s_in));
  require(s_out >= 1, ErrorKind::Argument, "S_out must be positive");
  const std::size_t cells = static_cast<std::size_t>(nx) * ny;
  const auto targets = grid_targets(nx, ny, 0.0);
  // out[s][c][cell]
  std::vector<std::vector<std::vector<double>>> out(s_out, std::vector<std::vector<double>>(nc));
  const double tbar = 0.5 * (s_in - 1);
  double stt = 0.0;
  for (int t = 0; t < s_in; ++t) stt += (t - tbar) * (t - tbar);
  for (int c = 0; c < nc; ++c) {
    std::vector<std::vector<double>> kriged;
    for (int t = 0; t < s_in; ++t) {
      std::vector<KrigPoint> pts;
      std::vector<double> vals;
      collect(frames[t], c, 0.0, pts, vals);
      merge_with_warning(pts, vals);
      const VariogramModel vm = fit_variogram(pts, vals, nlags);
      kriged.push_back(OrdinaryKriging(pts, vals, vm).predict_many(targets));
    }
    for (int s = 0; s < s_out; ++s) out[s][c].resize(cells);
    for (std::size_t p = 0; p < cells; ++p) {
      double ybar = 0.0;
      for (int t = 0; t < s_in; ++t) ybar += kriged[t][p];
      ybar /= s_in;
      double sty = 0.0;
      for (int t = 0; t < s_in; ++t) sty += (t - tbar) * (kriged[t][p] - ybar);
      const double slope = sty / stt;
      for (int s = 0; s < s_out; ++s) out[s][c][p] = ybar + slope * (s_in + s - tbar);
    }
  }
  std::vector<Field> fields;
  for (int s = 0; s < s_out; ++s) fields.push_back(combine_channels(out[s], nx, ny));
  return fields;
}

std::vector<Field> kriging_forecast_3d(std::span<const SensorFrame> frames, int nx, int ny, int nc, int nlags,
                                       int s_out, double time_scale) {
  const int s_in = static_cast<int>(frames.size());
  require(s_in >= 1 && s_out >= 1, ErrorKind::Argument, "3-D kriging forecast needs S_in, S_out >= 1");
  require(time_scale > 0.0, ErrorKind::Argument, "time scale must be positive");
  std::vector<std::vector<std::vector<double>>> out(s_out, std::vector<std::vector<double>>(nc));
  for (int c = 0; c < nc; ++c) {
    std::vector<KrigPoint> pts;
    std::vector<double> vals;
    for (int t = 0; t < s_in; ++t) collect(frames[t], c, t * time_scale, pts, vals);
    merge_with_warning(pts, vals);
    const VariogramModel vm = fit_variogram(pts, vals, nlags);
    const OrdinaryKriging ok(pts, vals, vm);
    for (int s = 0; s < s_out; ++s) out[s][c] = ok.predict_many(grid_targets(nx, ny, (s_in + s) * time_scale));
  }
  std::vector<Field> fields;
  for (int s = 0; s < s_out; ++s) fields.push_back(combine_channels(out[s], nx, ny));
  return fields;
}

}  // namespace dsovt
