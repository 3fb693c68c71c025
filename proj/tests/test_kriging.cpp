#include <cmath>

#include "dsovt/kriging.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dsovt;

namespace {

struct Sample {
  std::vector<KrigPoint> points;
  std::vector<double> values;
};

Sample random_sample(Rng& rng, int k, bool with_time) {
  Sample s;
  for (int i = 0; i < k; ++i) {
    s.points.push_back({rng.uniform(0, 31), rng.uniform(0, 31), with_time ? rng.uniform(0, 5) : 0.0});
    s.values.push_back(std::sin(0.2 * s.points.back().x) + 0.1 * s.points.back().y + rng.uniform(-0.2, 0.2));
  }
  return s;
}

double model_sse(const VariogramModel& m, double sill, double range, double nugget) {
  double e = 0.0;
  for (std::size_t b = 0; b < m.bin_centers.size(); ++b) {
    if (m.bin_counts[b] == 0) continue;
    const double s = m.bin_centers[b] / range;
    const double g = nugget + sill * (s < 1.0 ? 1.5 * s - 0.5 * s * s * s : 1.0);
    e += (g - m.semivariance[b]) * (g - m.semivariance[b]);
  }
  return e;
}

SensorFrame constant_frame(const std::vector<GridPoint>& pos, float value) {
  SensorFrame f;
  for (const auto& p : pos) f.push_back({p, {value, -value}});
  return f;
}

}  // namespace

TEST_CASE("spherical variogram shape and limits") {
  VariogramModel m;
  m.sill = 2.0;
  m.range = 10.0;
  m.nugget = 0.5;
  CHECK(m(0.0) == 0.5);
  CHECK(m(10.0) == doctest::Approx(2.5));
  CHECK(m(25.0) == doctest::Approx(2.5));
  CHECK(m(5.0) == doctest::Approx(0.5 + 2.0 * (0.75 - 0.0625)));
  double prev = m(0.0);
  for (double d = 0.5; d < 12.0; d += 0.5) {
    CHECK(m(d) >= prev);
    prev = m(d);
  }
}

TEST_CASE("kriging agrees with dense elimination in 2D and space-time") {
  Rng rng(12);
  double worst_pred = 0.0, worst_var = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const bool with_time = trial % 2 == 1;
    const int k = static_cast<int>(rng.uniform_int(3, 25));
    const Sample s = random_sample(rng, k, with_time);
    const VariogramModel m = fit_variogram(s.points, s.values, 20);
    const OrdinaryKriging ok(s.points, s.values, m);
    std::vector<KrigPoint> qs;
    for (int i = 0; i < 10; ++i) qs.push_back({rng.uniform(-2, 33), rng.uniform(-2, 33), with_time ? rng.uniform(0, 8) : 0.0});
    std::vector<double> var;
    const auto preds = ok.predict_many(qs, &var);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const auto [p, v] = oracle::krige(s.points, s.values, m, qs[i]);
      const double scale = std::max(1.0, std::abs(p));
      worst_pred = std::max(worst_pred, std::abs(preds[i] - p) / scale);
      worst_var = std::max(worst_var, std::abs(var[i] - v) / std::max(1.0, std::abs(v)));
      double single_var = 0.0;
      CHECK(ok.predict(qs[i], &single_var) == doctest::Approx(preds[i]).epsilon(1e-10));
    }
  }
  CHECK(worst_pred < 1e-10);
  CHECK(worst_var < 1e-10);
}

TEST_CASE("weights sum to one and data points are reproduced") {
  Rng rng(13);
  const Sample s = random_sample(rng, 15, false);
  const OrdinaryKriging ok(s.points, s.values, fit_variogram(s.points, s.values, 20));
  for (int i = 0; i < 5; ++i) {
    const auto w = ok.weights({rng.uniform(0, 31), rng.uniform(0, 31), 0.0});
    double sum = 0.0;
    for (double x : w) sum += x;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
  }
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    double var = 1.0;
    CHECK(std::abs(ok.predict(s.points[i], &var) - s.values[i]) < 1e-6);
    CHECK(std::abs(var) < 1e-6);
  }
}

TEST_CASE("kriging commutes with translation") {
  Rng rng(14);
  Sample s = random_sample(rng, 12, false);
  const VariogramModel m = fit_variogram(s.points, s.values, 20);
  const OrdinaryKriging a(s.points, s.values, m);
  Sample moved = s;
  for (auto& p : moved.points) {
    p.x += 7.25;
    p.y -= 3.5;
  }
  const OrdinaryKriging b(moved.points, moved.values, m);
  for (int i = 0; i < 10; ++i) {
    const KrigPoint q{rng.uniform(0, 31), rng.uniform(0, 31), 0.0};
    CHECK(b.predict({q.x + 7.25, q.y - 3.5, 0.0}) == doctest::Approx(a.predict(q)).epsilon(1e-9));
  }
}

TEST_CASE("equal values give a degenerate model that predicts the constant") {
  const std::vector<KrigPoint> pts{{0, 0, 0}, {5, 1, 0}, {2, 7, 0}, {9, 9, 0}};
  const std::vector<double> vals(4, 3.25);
  const VariogramModel m = fit_variogram(pts, vals, 20);
  CHECK(m.degenerate);
  const OrdinaryKriging ok(pts, vals, m);
  double var = 1.0;
  CHECK(ok.predict({4, 4, 0}, &var) == 3.25);
  CHECK(var == 0.0);
  for (double w : ok.weights({1, 1, 0})) CHECK(w == doctest::Approx(0.25));
}

TEST_CASE("variogram fit bins pairs and minimizes the squared misfit") {
  Rng rng(15);
  const Sample s = random_sample(rng, 25, false);
  const VariogramModel m = fit_variogram(s.points, s.values, 20);
  REQUIRE(m.bin_centers.size() == 20);
  int pairs = 0;
  for (int c : m.bin_counts) pairs += c;
  CHECK(pairs == 25 * 24 / 2);
  double dmin = 1e300, dmax = 0.0;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    for (std::size_t j = i + 1; j < s.points.size(); ++j) {
      const double d = std::hypot(s.points[i].x - s.points[j].x, s.points[i].y - s.points[j].y);
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  }
  const double width = (dmax - dmin) / 20;
  for (int b = 0; b < 20; ++b) CHECK(m.bin_centers[b] == doctest::Approx(dmin + (b + 0.5) * width));
  CHECK(m.sill >= 0.0);
  CHECK(m.nugget >= 0.0);
  CHECK(m.range > 0.0);
  const double best = model_sse(m, m.sill, m.range, m.nugget);
  const double last = m.bin_centers.back();
  for (int i = 0; i < 2000; ++i) {
    const double r = std::exp(rng.uniform(std::log(0.1 * m.bin_centers.front()), std::log(2.0 * last)));
    CHECK(best <= model_sse(m, rng.uniform(0, 2), r, rng.uniform(0, 1)) + 1e-12);
  }
  CHECK(test::error_kind_of([&] {
          fit_variogram(std::span(s.points).first(2), std::span(s.values).first(2), 20);
        }) == ErrorKind::Argument);
}

TEST_CASE("duplicate sample points are a conditioning error and can be merged") {
  std::vector<KrigPoint> pts{{0, 0, 0}, {5, 1, 0}, {5, 1, 0}, {9, 9, 0}};
  std::vector<double> vals{1.0, 2.0, 4.0, 0.5};
  const VariogramModel m = fit_variogram(pts, vals, 5);
  CHECK(test::error_kind_of([&] { krige2d(pts, vals, m, 10, 10); }) == ErrorKind::Conditioning);
  CHECK(merge_duplicates(pts, vals) == 1);
  REQUIRE(pts.size() == 3);
  CHECK(vals[1] == 3.0);
  const KrigeResult r = krige2d(pts, vals, fit_variogram(pts, vals, 5), 10, 10);
  CHECK(r.field.at(5, 1, 0) == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("2-D forecast extrapolates a per-cell linear trend") {
  const std::vector<GridPoint> pos{{1, 1}, {6, 2}, {3, 7}, {7, 7}, {4, 4}};
  std::vector<SensorFrame> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(constant_frame(pos, 0.5f + 0.25f * t));
  const auto out = kriging_forecast_2d(frames, 8, 8, 2, 20, 2);
  REQUIRE(out.size() == 2);
  double worst = 0.0;
  for (int s = 0; s < 2; ++s) {
    const double expect = 0.5 + 0.25 * (4 + s);
    for (int x = 0; x < 8; ++x) {
      for (int y = 0; y < 8; ++y) {
        worst = std::max(worst, std::abs(out[s].at(x, y, 0) - expect));
        worst = std::max(worst, std::abs(out[s].at(x, y, 1) + expect));
      }
    }
  }
  CHECK(worst < 1e-8);
  CHECK(test::error_kind_of([&] { kriging_forecast_2d(std::span(frames).first(1), 8, 8, 2, 20, 2); }) ==
        ErrorKind::Contract);
}

TEST_CASE("space-time forecast reproduces a constant field") {
  const std::vector<GridPoint> pos{{1, 1}, {6, 2}, {3, 7}, {7, 7}};
  const std::vector<SensorFrame> frames(3, constant_frame(pos, 0.75f));
  const auto out = kriging_forecast_3d(frames, 8, 8, 2, 10, 3, 2.0);
  REQUIRE(out.size() == 3);
  for (const auto& f : out) {
    for (int x = 0; x < 8; ++x) {
      for (int y = 0; y < 8; ++y) {
        CHECK(f.at(x, y, 0) == 0.75f);
        CHECK(f.at(x, y, 1) == -0.75f);
      }
    }
  }
}
