#include "dsovt/swe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "dsovt/error.hpp"
#include "dsovt/random.hpp"
#include "dsovt/tensor_io.hpp"

namespace fs = std::filesystem;

namespace dsovt::swe {

void SWEScenario::validate() const {
  require(nx >= 8 && ny >= 8, ErrorKind::Shape, "scenario grid must be at least 8x8");
  require(base_depth > 0.0, ErrorKind::Range, "base depth must be positive");
  // delta_h == 0 is accepted as the flat control run; sampled runs use [0.2, 0.8].
  require(delta_h == 0.0 || (delta_h >= 0.2 && delta_h <= 0.8), ErrorKind::Range,
          "delta_h " + std::to_string(delta_h) + " outside [0.2, 0.8]");
  require(delta_h == 0.0 || (radius >= 4.0 && radius <= 12.0), ErrorKind::Range,
          "radius " + std::to_string(radius) + " outside [4, 12]");
  require(g > 0.0 && dt > 0.0, ErrorKind::Range, "g and dt must be positive");
  const double cfl = dt * std::sqrt(g * (base_depth + delta_h));
  require(cfl <= 0.5, ErrorKind::Range,
          "CFL number " + std::to_string(cfl) + " exceeds 0.5; reduce dt");
  require(total_steps > equilibrium_steps && equilibrium_steps >= 0 && snapshot_interval >= 1,
          ErrorKind::Range, "step counts must satisfy total > equilibrium >= 0, interval >= 1");
  require(snapshot_count() >= 1, ErrorKind::Range, "scenario records no snapshots");
}

SWEScenario scenario_from(const SolverParams& solver, const SimRecord& sim) {
  SWEScenario s;
  s.nx = solver.nx;
  s.ny = solver.ny;
  s.base_depth = solver.base_depth;
  s.g = solver.g;
  s.dt = solver.dt;
  s.total_steps = solver.total_steps;
  s.equilibrium_steps = solver.equilibrium_steps;
  s.snapshot_interval = solver.snapshot_interval;
  s.delta_h = sim.delta_h;
  s.radius = sim.radius;
  s.cx = sim.cx;
  s.cy = sim.cy;
  s.seed = sim.seed;
  return s;
}

SWEState init_disturbance(const SWEScenario& sc) {
  sc.validate();
  if (sc.delta_h != 0.0) {
    require(sc.cx - sc.radius >= 0.0 && sc.cx + sc.radius <= sc.nx - 1 &&
                sc.cy - sc.radius >= 0.0 && sc.cy + sc.radius <= sc.ny - 1,
            ErrorKind::Placement,
            "disturbance centre (" + std::to_string(sc.cx) + ", " + std::to_string(sc.cy) +
                ") is closer than radius " + std::to_string(sc.radius) + " to a wall");
  }
  SWEState s;
  s.nx = sc.nx;
  s.ny = sc.ny;
  const std::size_t n = static_cast<std::size_t>(sc.nx) * sc.ny;
  s.h.assign(n, sc.base_depth);
  s.u.assign(n, 0.0);
  s.v.assign(n, 0.0);
  const double r2 = sc.radius * sc.radius;
  for (int x = 0; x < sc.nx; ++x) {
    for (int y = 0; y < sc.ny; ++y) {
      const double dx = x - sc.cx;
      const double dy = y - sc.cy;
      if (dx * dx + dy * dy <= r2) s.h[s.index(x, y)] = sc.base_depth + sc.delta_h;
    }
  }
  return s;
}

namespace {

struct Cons {
  double h, hu, hv;
};

// Local Lax-Friedrichs flux across a face whose normal is the first momentum
// component of L/R (callers swap hu/hv for the y direction).
inline Cons llf_flux(const Cons& l, const Cons& r, double g) {
  const double ul = l.hu / l.h;
  const double ur = r.hu / r.h;
  const double a = std::max(std::abs(ul) + std::sqrt(g * l.h), std::abs(ur) + std::sqrt(g * r.h));
  const Cons fl{l.hu, l.hu * ul + 0.5 * g * l.h * l.h, l.hv * ul};
  const Cons fr{r.hu, r.hu * ur + 0.5 * g * r.h * r.h, r.hv * ur};
  return {0.5 * (fl.h + fr.h) - 0.5 * a * (r.h - l.h),
          0.5 * (fl.hu + fr.hu) - 0.5 * a * (r.hu - l.hu),
          0.5 * (fl.hv + fr.hv) - 0.5 * a * (r.hv - l.hv)};
}

}  // namespace

SWEState step(const SWEState& s, const SWEScenario& sc, int step_index) {
  const int nx = s.nx;
  const int ny = s.ny;
  const double g = sc.g;
  const double dt = sc.dt;

  std::vector<Cons> u(static_cast<std::size_t>(nx) * ny);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = {s.h[i], s.h[i] * s.u[i], s.h[i] * s.v[i]};
  auto at = [&](int x, int y) -> const Cons& { return u[static_cast<std::size_t>(x) * ny + y]; };

  // fx[(x) * ny + y] is the flux through the face left of cell x (x = 0..nx).
  std::vector<Cons> fx(static_cast<std::size_t>(nx + 1) * ny);
  for (int x = 0; x <= nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      // Reflective walls: the ghost cell mirrors the interior with the normal
      // momentum negated.
      const Cons l = x > 0 ? at(x - 1, y) : Cons{at(0, y).h, -at(0, y).hu, at(0, y).hv};
      const Cons r = x < nx ? at(x, y) : Cons{at(nx - 1, y).h, -at(nx - 1, y).hu, at(nx - 1, y).hv};
      fx[static_cast<std::size_t>(x) * ny + y] = llf_flux(l, r, g);
    }
  }
  // fy[x * (ny + 1) + y] is the flux through the face below cell y.
  std::vector<Cons> fy(static_cast<std::size_t>(nx) * (ny + 1));
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y <= ny; ++y) {
      const Cons l = y > 0 ? at(x, y - 1) : Cons{at(x, 0).h, at(x, 0).hu, -at(x, 0).hv};
      const Cons r = y < ny ? at(x, y) : Cons{at(x, ny - 1).h, at(x, ny - 1).hu, -at(x, ny - 1).hv};
      // Rotate so the y momentum plays the normal role, then rotate back.
      const Cons f = llf_flux({l.h, l.hv, l.hu}, {r.h, r.hv, r.hu}, g);
      fy[static_cast<std::size_t>(x) * (ny + 1) + y] = {f.h, f.hv, f.hu};
    }
  }

  SWEState out;
  out.nx = nx;
  out.ny = ny;
  out.h.resize(u.size());
  out.u.resize(u.size());
  out.v.resize(u.size());
  for (int x = 0; x < nx; ++x) {
    for (int y = 0; y < ny; ++y) {
      const Cons& c = at(x, y);
      const Cons& fl = fx[static_cast<std::size_t>(x) * ny + y];
      const Cons& fr = fx[static_cast<std::size_t>(x + 1) * ny + y];
      const Cons& gl = fy[static_cast<std::size_t>(x) * (ny + 1) + y];
      const Cons& gr = fy[static_cast<std::size_t>(x) * (ny + 1) + y + 1];
      const double h = c.h - dt * ((fr.h - fl.h) + (gr.h - gl.h));
      const double hu = c.hu - dt * ((fr.hu - fl.hu) + (gr.hu - gl.hu));
      const double hv = c.hv - dt * ((fr.hv - fl.hv) + (gr.hv - gl.hv));
      if (!std::isfinite(h) || !std::isfinite(hu) || !std::isfinite(hv)) {
        fail(ErrorKind::Divergence, "non-finite state at step " + std::to_string(step_index) +
                                        ", cell (" + std::to_string(x) + ", " + std::to_string(y) + ")");
      }
      if (h <= 0.0) {
        fail(ErrorKind::Positivity, "depth " + std::to_string(h) + " <= 0 at step " +
                                        std::to_string(step_index) + ", cell (" + std::to_string(x) +
                                        ", " + std::to_string(y) + ")");
      }
      const std::size_t i = out.index(x, y);
      out.h[i] = h;
      out.u[i] = hu / h;
      out.v[i] = hv / h;
    }
  }
  return out;
}

double total_mass(const SWEState& s) {
  double m = 0.0;
  for (double h : s.h) m += h;
  return m;
}

Field to_field(const SWEState& s) {
  Field f(s.nx, s.ny, 3);
  for (int x = 0; x < s.nx; ++x) {
    for (int y = 0; y < s.ny; ++y) {
      const std::size_t i = s.index(x, y);
      f.at(x, y, 0) = static_cast<float>(s.u[i]);
      f.at(x, y, 1) = static_cast<float>(s.v[i]);
      f.at(x, y, 2) = static_cast<float>(s.h[i]);
    }
  }
  return f;
}

FieldSequence simulate(const SWEScenario& sc) {
  SWEState state = init_disturbance(sc);
  std::vector<Field> frames;
  frames.reserve(static_cast<std::size_t>(sc.snapshot_count()));
  for (int k = 1; k <= sc.total_steps; ++k) {
    state = step(state, sc, k);
    const int after = k - sc.equilibrium_steps;
    if (after > 0 && after % sc.snapshot_interval == 0) frames.push_back(to_field(state));
  }
  return FieldSequence(std::move(frames), sc.snapshot_interval);
}

ExperimentManifest generate_dataset(const fs::path& out_dir, int train_count, int test_count,
                                    std::uint64_t seed, const SolverParams& solver) {
  require(train_count >= 0 && test_count >= 0 && train_count + test_count >= 1,
          ErrorKind::Argument, "need at least one simulation");
  fs::create_directories(out_dir);
  Rng rng(seed);
  ExperimentManifest m;
  m.seed = seed;
  m.train_count = train_count;
  m.test_count = test_count;
  m.solver = solver;
  m.base_dir = out_dir;
  // Radii in [4, 12] cells, capped so the disturbance fits inside the walls.
  const double r_lo = 4.0;
  const double r_hi = std::min(12.0, std::floor((std::min(solver.nx, solver.ny) - 1) / 2.0));
  require(r_hi >= r_lo, ErrorKind::Placement, "grid too small to hold a disturbance of radius 4");
  const int total = train_count + test_count;
  for (int i = 0; i < total; ++i) {
    SimRecord rec;
    char name[32];
    std::snprintf(name, sizeof name, "sim_%03d.dsvt", i);
    rec.path = name;
    rec.split = i < train_count ? "train" : "test";
    rec.seed = rng.derive_seed();
    Rng sim_rng(rec.seed);
    rec.delta_h = sim_rng.uniform(0.2, 0.8);
    rec.radius = sim_rng.uniform(r_lo, r_hi);
    const int margin = static_cast<int>(std::ceil(rec.radius));
    rec.cx = static_cast<double>(sim_rng.uniform_int(margin, solver.nx - 1 - margin));
    rec.cy = static_cast<double>(sim_rng.uniform_int(margin, solver.ny - 1 - margin));
    m.sims.push_back(rec);
  }
  for (const auto& rec : m.sims) {
    write_tensor(out_dir / rec.path, simulate(scenario_from(solver, rec)));
  }
  m.save(out_dir / "manifest.toml");
  return m;
}

}  // namespace dsovt::swe
