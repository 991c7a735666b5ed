#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "isflow/trajectory.hpp"

namespace isflow {

enum class MapStatus { Ok, NoReturn, BoundaryLanding };

struct MapResult {
  MapStatus status = MapStatus::NoReturn;
  Vec3 point{0, 0, 0};   // image point (on Dhat for poincare_hat, on D for poincare_D)
  Vec2 chart{0, 0};      // its chart coordinates
  double flight = 0;     // total flow time consumed
  bool interior = false; // interior flag of the D hit
};

// P_{X,I} : Dhat -> Dhat, y -> I(phi_{tau(y)}(y)). NoReturn encodes
// tau = infinity within the horizon; BoundaryLanding flags hits inside the
// margin band of dD (y outside the interior-landing domain).
inline MapResult poincare_hat(const ImpulsiveSystem& sys, const Vec3& y) {
  auto uy = sys.Dhat.chart_coords(sys.space, sys.space.canonical(y));
  if (!uy) fail(ErrorKind::OutsidePatch, "poincare_hat: point is not on the patch " + sys.Dhat.name);
  HitQuery q = first_hitting_time(sys.field, sys.space, sys.tol, sys.Dhat.chart_point(*uy), sys.D,
                                  sys.tol.horizon, sys.burn_in());
  MapResult r;
  if (q.status == HitQuery::Status::NoHit) {
    r.status = MapStatus::NoReturn;
    return r;
  }
  r.flight = q.hit.time;
  r.interior = q.hit.interior;
  r.status = q.hit.interior ? MapStatus::Ok : MapStatus::BoundaryLanding;
  r.chart = sys.impulse.apply_chart(q.hit.chart);
  r.point = sys.Dhat.chart_point(r.chart);
  return r;
}

// k-fold Poincare map with cumulative flight time. Margin-band landings do
// not break the chain (the impulse is defined on the whole chart rectangle);
// the result's interior flag is the conjunction over the chain. An optional
// flight cap aborts early (status NoReturn) once the accumulated time
// exceeds it.
inline MapResult poincare_hat_k(const ImpulsiveSystem& sys, const Vec3& y, int k,
                                double flight_cap = 0.0) {
  MapResult acc;
  acc.point = sys.space.canonical(y);
  acc.flight = 0;
  acc.interior = true;
  for (int i = 0; i < k; ++i) {
    MapResult r = poincare_hat(sys, acc.point);
    if (r.status == MapStatus::NoReturn) {
      r.flight += acc.flight;
      return r;
    }
    acc.point = r.point;
    acc.chart = r.chart;
    acc.flight += r.flight;
    acc.interior = acc.interior && r.interior;
    acc.status = MapStatus::Ok;
    if (flight_cap > 0 && acc.flight > flight_cap && i + 1 < k) {
      acc.status = MapStatus::NoReturn;
      return acc;
    }
  }
  return acc;
}

// f_{X,I} = I^{-1} o P_{X,I} o I on the impulsive region D.
inline MapResult poincare_D(const ImpulsiveSystem& sys, const Vec3& x) {
  auto ux = sys.D.chart_coords(sys.space, sys.space.canonical(x));
  if (!ux) fail(ErrorKind::OutsidePatch, "poincare_D: point is not on the patch " + sys.D.name);
  MapResult r = poincare_hat(sys, sys.Dhat.chart_point(sys.impulse.apply_chart(*ux)));
  if (r.status != MapStatus::Ok) return r;
  Vec2 u = sys.impulse.invert_chart(r.chart);
  if (!sys.D.in_rect(u, 1e-9 * (1.0 + sys.D.rect_diameter()))) {
    r.status = MapStatus::NoReturn;
    return r;
  }
  r.chart = u;
  r.point = sys.D.chart_point(u);
  return r;
}

// Return map to an arbitrary transversal patch sigma, following the impulsive
// trajectory and counting transversal returns to sigma (impulse events are
// handled by the trajectory machinery underneath).
inline MapResult return_map(const ImpulsiveSystem& sys, const SectionPatch& sigma, const Vec3& x,
                            int n_crossings, double t_max = 0.0) {
  auto ux = sigma.chart_coords(sys.space, sys.space.canonical(x));
  if (!ux) fail(ErrorKind::OutsidePatch, "return_map: point is not on the patch " + sigma.name);
  if (t_max <= 0) t_max = sys.tol.horizon;

  int remaining = n_crossings;
  MapResult out;
  ImpulsiveRunControl ctl;
  ctl.watch = &sigma;
  ctl.watch_cb = [&](const HitEvent& ev) {
    if (--remaining > 0) return false;
    out.point = ev.point;
    out.chart = ev.chart;
    out.interior = ev.interior;
    return true;
  };
  ImpulsiveRunResult r = impulsive_run(sys, sigma.chart_point(*ux), t_max, ctl);
  if (r.stop != RunStop::WatchStop) {
    out.status = MapStatus::NoReturn;
    return out;
  }
  out.status = MapStatus::Ok;
  out.flight = r.watch_abs_time;
  return out;
}

// A certified closed impulsive orbit.
struct PeriodicOrbit {
  Vec3 representative{0, 0, 0};  // on Dhat when crossings >= 1, on free_section otherwise
  double period = 0;
  int crossings = 0;             // impulse events per period
  double residual = 0;
  std::string classification = "unknown";
  std::optional<int> index;
  bool family = false;           // member of a degenerate fixed-point family
  std::optional<SectionPatch> free_section;  // for crossings == 0
};

namespace detail {

// Chart-coordinate map evaluation: u -> (image coords, flight time).
using ChartFlowMap = std::function<std::optional<std::pair<Vec2, double>>(const Vec2&)>;

struct RefineOutcome {
  bool ok = false;
  Vec2 u{0, 0};
  double residual = 1e300;
  double period = 0;
};

// Fixed-point refinement of a chart map: damped fixed-point iteration with a
// Broyden escalation. Derivative-free (the field is only Lipschitz).
inline RefineOutcome refine_fixed_point(const ChartFlowMap& map, const SectionPatch& sec, Vec2 u0,
                                        double refine_tol, int budget = 60) {
  RefineOutcome best;
  Vec2 u = u0;
  double diam = sec.rect_diameter();
  double step_cap = 0.2 * diam;

  auto eval = [&](const Vec2& v) -> std::optional<std::pair<Vec2, double>> {
    if (!sec.in_rect(v)) return std::nullopt;
    return map(v);
  };

  bool broyden = false;
  std::array<double, 4> B{0, 0, 0, 0};  // approximate Jacobian of F(u) = map(u) - u
  Vec2 F_prev{0, 0};
  Vec2 u_prev{0, 0};
  double prev_res = 1e300;

  for (int it = 0; it < budget; ++it) {
    auto img = eval(u);
    if (!img) return best;
    Vec2 F = img->first - u;
    double res = sec.chart_distance(img->first, u);
    if (res < best.residual) {
      best.residual = res;
      best.u = u;
      best.period = img->second;
    }
    if (res <= refine_tol) {
      best.ok = true;
      return best;
    }

    if (!broyden) {
      if (it >= 8 || (it > 0 && res > 0.9 * prev_res)) {
        // finite-difference start for Broyden
        double h = std::max(3e-5 * (1.0 + diam), 1e-7);
        auto fx = eval({u[0] + h, u[1]});
        auto fy = eval({u[0], u[1] + h});
        if (!fx || !fy) return best;
        Vec2 Fx = fx->first - Vec2{u[0] + h, u[1]};
        Vec2 Fy = fy->first - Vec2{u[0], u[1] + h};
        B = {(Fx[0] - F[0]) / h, (Fy[0] - F[0]) / h, (Fx[1] - F[1]) / h, (Fy[1] - F[1]) / h};
        broyden = true;
      } else {
        u_prev = u;
        F_prev = F;
        prev_res = res;
        u = u + 0.7 * F;
        continue;
      }
    } else {
      // Broyden rank-1 update: B += ((dF - B du) du^T) / (du.du)
      Vec2 du = u - u_prev;
      Vec2 dF = F - F_prev;
      double dd = dot(du, du);
      if (dd > 0) {
        Vec2 Bdu{B[0] * du[0] + B[1] * du[1], B[2] * du[0] + B[3] * du[1]};
        Vec2 r = {(dF[0] - Bdu[0]) / dd, (dF[1] - Bdu[1]) / dd};
        B[0] += r[0] * du[0];
        B[1] += r[0] * du[1];
        B[2] += r[1] * du[0];
        B[3] += r[1] * du[1];
      }
    }

    // Newton step on F with the Broyden Jacobian, clamped
    double det = B[0] * B[3] - B[1] * B[2];
    Vec2 s;
    if (std::abs(det) < 1e-14) {
      s = 0.5 * F;  // fall back to damped fixed point
    } else {
      s = {-(B[3] * F[0] - B[1] * F[1]) / det, -(-B[2] * F[0] + B[0] * F[1]) / det};
    }
    double sn = norm(s);
    if (sn > step_cap) s = (step_cap / sn) * s;
    u_prev = u;
    F_prev = F;
    prev_res = res;
    u = u + s;
  }
  return best;
}

}  // namespace detail

// Refine a fixed point of the k-fold Poincare map from `guess` on Dhat.
// On success the orbit's residual is <= refine_tol and the period is the sum
// of the k flight times.
inline std::optional<PeriodicOrbit> find_periodic_orbit(const ImpulsiveSystem& sys, const Vec3& guess,
                                                        int k, double refine_tol, int budget = 60,
                                                        double flight_cap = 0.0) {
  auto u0 = sys.Dhat.chart_coords(sys.space, sys.space.canonical(guess));
  if (!u0) fail(ErrorKind::OutsidePatch, "find_periodic_orbit: guess is not on " + sys.Dhat.name);
  if (k < 1) fail(ErrorKind::BadParameter, "find_periodic_orbit: k must be >= 1");

  detail::ChartFlowMap map = [&](const Vec2& u) -> std::optional<std::pair<Vec2, double>> {
    MapResult r = poincare_hat_k(sys, sys.Dhat.chart_point(u), k, flight_cap);
    if (r.status != MapStatus::Ok) return std::nullopt;
    return std::make_pair(r.chart, r.flight);
  };
  detail::RefineOutcome out = detail::refine_fixed_point(map, sys.Dhat, *u0, refine_tol, budget);
  if (!out.ok) return std::nullopt;
  PeriodicOrbit orb;
  orb.representative = sys.Dhat.chart_point(out.u);
  orb.period = out.period;
  orb.crossings = k;
  orb.residual = out.residual;
  return orb;
}

// Refine an impulse-free closed orbit as a fixed point of the return map to a
// free cross-section sigma.
inline std::optional<PeriodicOrbit> find_plain_orbit(const ImpulsiveSystem& sys, const SectionPatch& sigma,
                                                     const Vec3& guess, double refine_tol, int budget = 60) {
  auto u0 = sigma.chart_coords(sys.space, sys.space.canonical(guess));
  if (!u0) fail(ErrorKind::OutsidePatch, "find_plain_orbit: guess is not on " + sigma.name);
  detail::ChartFlowMap map = [&](const Vec2& u) -> std::optional<std::pair<Vec2, double>> {
    MapResult r = return_map(sys, sigma, sigma.chart_point(u), 1);
    if (r.status != MapStatus::Ok) return std::nullopt;
    return std::make_pair(r.chart, r.flight);
  };
  detail::RefineOutcome out = detail::refine_fixed_point(map, sigma, *u0, refine_tol, budget);
  if (!out.ok) return std::nullopt;
  PeriodicOrbit orb;
  orb.representative = sigma.chart_point(out.u);
  orb.period = out.period;
  orb.crossings = 0;
  orb.residual = out.residual;
  orb.free_section = sigma;
  return orb;
}

// Canonical sample points along one period of the orbit (events included).
inline std::vector<Vec3> orbit_samples(const ImpulsiveSystem& sys, const PeriodicOrbit& orb,
                                       double step) {
  std::vector<Vec3> pts;
  ImpulsiveRunControl ctl;
  ctl.obs_dt = step;
  ctl.observer = [&](double, const Vec3& y, const Vec3&) {
    pts.push_back(sys.space.canonical(y));
    return false;
  };
  ctl.on_event = [&](const TrajEvent& ev) {
    pts.push_back(ev.pre);
    pts.push_back(ev.post);
    return false;
  };
  impulsive_run(sys, orb.representative, orb.period, ctl);
  return pts;
}

// Distance from p to the sampled orbit (coarse samples + local refinement via
// a short trajectory replay are not needed at the tolerances used here).
inline double point_to_orbit_distance(const ImpulsiveSystem& sys, const std::vector<Vec3>& samples,
                                      const Vec3& p) {
  double d = 1e300;
  for (const auto& s : samples) d = std::min(d, sys.space.distance(s, p));
  return d;
}

// Per_t scan: seed the k-fold orbit refinement from a grid on Dhat for every
// k with k * (minimal flight estimate) <= t_bound, deduplicate by orbit
// identity, sort by period.
inline std::vector<PeriodicOrbit> periodic_orbits_up_to(const ImpulsiveSystem& sys, double t_bound,
                                                        int grid_resolution, double refine_tol = 1e-9,
                                                        double merge_radius = 1e-4) {
  std::vector<PeriodicOrbit> orbits;
  std::vector<std::vector<Vec3>> samples;

  double min_flight = std::max(sys.min_flight_time(), 1e-6);
  int k_max = static_cast<int>(std::floor(t_bound / min_flight));
  k_max = std::min(k_max, 64);

  double sample_step = std::max(merge_radius, 0.01);
  for (int k = 1; k <= k_max; ++k) {
    for (const auto& u : sys.Dhat.sample_grid(grid_resolution, /*interior_only=*/true)) {
      std::optional<PeriodicOrbit> orb;
      try {
        orb = find_periodic_orbit(sys, sys.Dhat.chart_point(u), k, refine_tol, 60,
                                  /*flight_cap=*/t_bound + 1.0);
      } catch (const Error&) {
        continue;
      }
      if (!orb || orb->period > t_bound + 1e-9) continue;
      // merge: same orbit set (possibly traversed multiple times)
      bool merged = false;
      for (std::size_t i = 0; i < orbits.size(); ++i) {
        double ratio = orb->period / orbits[i].period;
        double m = std::round(ratio);
        if (m >= 1 && std::abs(orb->period - m * orbits[i].period) <= 1e-5 * (1.0 + orb->period) &&
            point_to_orbit_distance(sys, samples[i], orb->representative) <= merge_radius) {
          merged = true;
          break;
        }
      }
      if (merged) continue;
      samples.push_back(orbit_samples(sys, *orb, sample_step));
      orbits.push_back(*orb);
    }
  }

  // flag degenerate families: many distinct orbits sharing one period
  for (std::size_t i = 0; i < orbits.size(); ++i) {
    int same = 0;
    for (std::size_t j = 0; j < orbits.size(); ++j)
      if (std::abs(orbits[i].period - orbits[j].period) <= 1e-7 * (1.0 + orbits[i].period)) ++same;
    if (same >= 5) orbits[i].family = true;
  }

  std::sort(orbits.begin(), orbits.end(), [](const PeriodicOrbit& a, const PeriodicOrbit& b) {
    if (a.period != b.period) return a.period < b.period;
    return a.representative < b.representative;
  });
  return orbits;
}

}  // namespace isflow
