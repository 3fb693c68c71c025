#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "dsovt/field.hpp"
#include "dsovt/voronoi.hpp"

namespace dsovt {

/// Coordinates in grid cells; t is zero for purely spatial kriging and is
/// multiplied by the time scaling for space-time kriging.
struct KrigPoint {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;
  friend bool operator==(const KrigPoint&, const KrigPoint&) = default;
};

double distance(const KrigPoint& a, const KrigPoint& b);

/// Isotropic spherical variogram. `sill` is the partial sill, so the
/// plateau is sill + nugget.
struct VariogramModel {
  double sill = 0.0;
  double range = 1.0;
  double nugget = 0.0;
  int nlags = 0;
  /// Values were all equal: nugget-only model, predictions are the mean.
  bool degenerate = false;

  // Empirical semivariogram the fit used; empty bins have count 0.
  std::vector<double> bin_centers;
  std::vector<double> semivariance;
  std::vector<int> bin_counts;

  /// gamma(0) = nugget; gamma(d >= range) = sill + nugget.
  double operator()(double d) const;
};

/// Spherical shape 1.5 s - 0.5 s^3 for s = d / range < 1, else 1.
double spherical_shape(double d, double range);

/// Bins pairwise semivariances 0.5 (z_i - z_j)^2 into nlags equal-width
/// distance bins spanning [min pair distance, max pair distance] and fits
/// (sill, range, nugget >= 0) by least squares at the bin centres.
VariogramModel fit_variogram(std::span<const KrigPoint> points, std::span<const double> values, int nlags);

/// Ordinary kriging with the unit-sum constraint. The (K+1) system uses
/// gamma = 0 on coincident points, so data are reproduced exactly. It is
/// factorized once; every query reuses the factorization.
class OrdinaryKriging {
 public:
  OrdinaryKriging(std::vector<KrigPoint> points, std::vector<double> values, VariogramModel model);

  double predict(const KrigPoint& q, double* variance = nullptr) const;
  /// Predictions for many targets in one multi-right-hand-side solve.
  std::vector<double> predict_many(std::span<const KrigPoint> qs, std::vector<double>* variance = nullptr) const;
  /// Weights for one target; `mu` receives the Lagrange multiplier.
  std::vector<double> weights(const KrigPoint& q, double* mu = nullptr) const;

  const VariogramModel& model() const { return model_; }

 private:
  Eigen::VectorXd rhs(const KrigPoint& q) const;

  std::vector<KrigPoint> points_;
  std::vector<double> values_;
  VariogramModel model_;
  double mean_ = 0.0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

/// Averages the values of coincident points; returns the number merged.
int merge_duplicates(std::vector<KrigPoint>& points, std::vector<double>& values);

struct KrigeResult {
  Field field;                  // one channel
  std::vector<double> variance; // x-major, nx * ny
};

/// Kriges point values onto every cell centre of an nx * ny grid.
/// Duplicate points are a conditioning error.
KrigeResult krige2d(std::span<const KrigPoint> points, std::span<const double> values,
                    const VariogramModel& model, int nx, int ny);

/// Space-time kriging on the grid at each query time (one 1-channel Field
/// per time). Duplicate points are a conditioning error.
std::vector<Field> krige3d(std::span<const KrigPoint> points, std::span<const double> values,
                           const VariogramModel& model, int nx, int ny, std::span<const double> query_times);

/// 2-D kriging of every input frame (variogram fitted per frame and channel)
/// followed by a per-cell least-squares line over the S_in kriged values,
/// extrapolated to the next s_out steps.
std::vector<Field> kriging_forecast_2d(std::span<const SensorFrame> frames, int nx, int ny, int nc, int nlags,
                                       int s_out);

/// Space-time kriging over all S_in input frames (t = 0..S_in-1, scaled by
/// `time_scale`), queried at t = S_in..S_in+s_out-1.
std::vector<Field> kriging_forecast_3d(std::span<const SensorFrame> frames, int nx, int ny, int nc, int nlags,
                                       int s_out, double time_scale = 1.0);

}  // namespace dsovt
