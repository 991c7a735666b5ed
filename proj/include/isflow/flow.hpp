#pragma once

#include <functional>
#include <optional>

#include "isflow/field.hpp"
#include "isflow/integrate.hpp"
#include "isflow/section.hpp"
#include "isflow/system.hpp"

namespace isflow {

// A refined transversal crossing of a section patch.
struct HitEvent {
  double time = 0;            // relative to the start of the run
  Vec3 point{0, 0, 0};        // canonical coordinates, on the section
  Vec2 chart{0, 0};           // chart coordinates on the patch
  double transversality = 0;  // X . grad g at the hit
  bool interior = false;      // chart-margin test
};

enum class RunStop { TimeUp, HitSection, WatchStop, ObserverStop, };

struct RunResult {
  RunStop stop = RunStop::TimeUp;
  double t_end = 0;           // time actually reached
  Vec3 y_end{0, 0, 0};        // canonical end point
  std::optional<HitEvent> hit;
  int tangency_warnings = 0;
};

// Observer: called at t=0, every obs_dt, and at the end of the run, with the
// run-relative time, the arc-continuous point (torus coordinates are NOT
// wrapped, so consecutive samples interpolate), and the velocity. Returning
// true stops the run.
using Observer = std::function<bool(double t, const Vec3& y, const Vec3& f)>;

// Watch callback for non-terminal section crossings. Returning true stops.
using WatchCallback = std::function<bool(const HitEvent&)>;

namespace detail {

// Sign-change scanner state for one section along the dense output.
struct SectionScan {
  const SectionPatch* sec = nullptr;
  double prev_t = 0;
  double prev_g = 0;
  bool armed = false;
};

}  // namespace detail

// Core driver: integrate the field from x0 for up to t_max, scanning the
// dense output for transversal crossings of an optional terminal section and
// an optional watched section. Grazing crossings (|X.grad g| below the
// patch's transversality floor) are skipped and counted. Crossings before
// burn_in are ignored, as are crossings while |g| has not yet left the
// section band (grazing starts).
inline RunResult run_flow(const VectorFieldSpec& field, const AmbientSpace& space, const Tolerances& tol,
                          const Vec3& x0, double t_max, double burn_in = 0.0,
                          const SectionPatch* terminal = nullptr, const SectionPatch* watch = nullptr,
                          const WatchCallback& watch_cb = {}, const Observer& observer = {},
                          double obs_dt = 0.0, bool backward = false) {
  RunResult res;
  if (t_max <= 0) {
    res.t_end = 0;
    res.y_end = space.canonical(x0);
    return res;
  }

  auto rhs = [&](const Vec3& y) { return backward ? -field.eval(space, y) : field.eval(space, y); };

  StepperOptions opt;
  opt.tol = tol.integration;
  opt.h_max = tol.h_max;
  opt.h_init = std::min(tol.h_max, 1e-3);
  Dopri5<decltype(rhs)> stepper(rhs, x0, 0.0, opt);

  // cumulative offset giving arc-continuous coordinates to the observer
  Vec3 frame_offset{0, 0, 0};

  detail::SectionScan scans[2];
  int n_scans = 0;
  if (terminal) scans[n_scans++] = {terminal, 0.0, terminal->g(space.canonical(x0)), false};
  if (watch) scans[n_scans++] = {watch, 0.0, watch->g(space.canonical(x0)), false};
  for (int i = 0; i < n_scans; ++i)
    scans[i].armed = std::abs(scans[i].prev_g) > 2 * tol.section;

  double next_obs = 0.0;
  if (observer) {
    if (observer(0.0, x0 + frame_offset, rhs(x0))) {
      res.stop = RunStop::ObserverStop;
      res.y_end = space.canonical(x0);
      return res;
    }
    next_obs = obs_dt > 0 ? obs_dt : 2 * t_max;
  }

  DenseStep dense;
  while (stepper.t() < t_max - 1e-14) {
    double t0 = stepper.t();
    stepper.step(dense);
    double t1 = std::min(stepper.t(), t_max);

    if (space.kind == SpaceKind::EuclideanBox) {
      Vec3 yc = dense.eval(t1);
      if (!space.in_domain(yc, 1e-9 * (1.0 + space.diameter())))
        fail(ErrorKind::DomainExit, "trajectory exits the box domain at t=" + std::to_string(t1));
    }

    // event scan over dense-output sub-samples
    int n_sub = std::max(1, static_cast<int>(std::ceil((t1 - t0) / tol.scan_dt)));
    for (int j = 1; j <= n_sub; ++j) {
      double tj = t0 + (t1 - t0) * j / n_sub;
      Vec3 yj = space.canonical(dense.eval(tj));
      for (int si = 0; si < n_scans; ++si) {
        detail::SectionScan& sc = scans[si];
        double gj = sc.sec->g(yj);
        bool was_armed = sc.armed;
        if (std::abs(gj) > 2 * tol.section) sc.armed = true;
        // burn-in protects only the terminal section from re-detecting the
        // landing; watched sections are guarded by arming alone
        double sec_burn = (sc.sec == terminal) ? burn_in : 0.0;
        if (was_armed && tj > sec_burn && sc.prev_g * gj < 0) {
          // bracketed sign change: refine by bisection on the dense output
          double a = std::max(sc.prev_t, t0), b = tj;
          double ga = sc.sec->g(space.canonical(dense.eval(a)));
          if (ga * gj < 0) {
            while (b - a > tol.event_time) {
              double m = 0.5 * (a + b);
              double gm = sc.sec->g(space.canonical(dense.eval(m)));
              if (ga * gm <= 0) {
                b = m;
              } else {
                a = m;
                ga = gm;
              }
            }
            double t_star = 0.5 * (a + b);
            Vec3 p = space.canonical(dense.eval(t_star));
            if (std::abs(sc.sec->g(p)) <= tol.section && t_star > sec_burn) {
              double trans = dot(rhs(p), sc.sec->grad_g(p));
              auto coords = sc.sec->chart_coords(space, p);
              if (std::abs(trans) < sc.sec->transversality_floor) {
                ++res.tangency_warnings;  // grazing: unstable, skip
              } else if (coords) {
                HitEvent ev{t_star, p, *coords, trans, sc.sec->interior_coords(*coords)};
                if (sc.sec == terminal) {
                  res.stop = RunStop::HitSection;
                  res.t_end = t_star;
                  res.y_end = p;
                  res.hit = ev;
                  if (observer) observer(t_star, dense.eval(t_star) + frame_offset, rhs(p));
                  return res;
                }
                if (watch_cb && watch_cb(ev)) {
                  res.stop = RunStop::WatchStop;
                  res.t_end = t_star;
                  res.y_end = p;
                  res.hit = ev;
                  if (observer) observer(t_star, dense.eval(t_star) + frame_offset, rhs(p));
                  return res;
                }
              }
            }
          }
        }
        sc.prev_t = tj;
        sc.prev_g = gj;
      }
      // observer samples within this sub-interval
      while (observer && next_obs <= tj + 1e-15 && next_obs <= t_max) {
        Vec3 yo = dense.eval(next_obs);
        if (observer(next_obs, yo + frame_offset, rhs(space.canonical(yo)))) {
          res.stop = RunStop::ObserverStop;
          res.t_end = next_obs;
          res.y_end = space.canonical(yo);
          return res;
        }
        next_obs += obs_dt;
      }
    }

    // normalize the stored state between steps
    if (stepper.t() >= t_max - 1e-14) break;
    Vec3 y_now = stepper.y();
    Vec3 y_norm = space.canonical(y_now);
    if (space.kind == SpaceKind::FlatTorus) {
      frame_offset += y_now - y_norm;
      if (norm(y_now - y_norm) > 0) stepper.reset_state(y_norm);
    } else if (space.kind == SpaceKind::ImplicitSurface) {
      stepper.reset_state(y_norm);
    }
  }

  res.stop = RunStop::TimeUp;
  res.t_end = t_max;
  {
    Vec3 yf = dense.t1 >= t_max ? dense.eval(t_max) : stepper.y();
    if (observer) observer(t_max, yf + frame_offset, rhs(space.canonical(yf)));
    res.y_end = space.canonical(yf);
  }
  return res;
}

// phi_t(x0). Negative t integrates the negated field.
inline Vec3 flow(const VectorFieldSpec& field, const AmbientSpace& space, const Vec3& x0, double t,
                 const Tolerances& tol) {
  if (t == 0) return space.canonical(x0);
  RunResult r = run_flow(field, space, tol, x0, std::abs(t), 0.0, nullptr, nullptr, {}, {}, 0.0, t < 0);
  return r.y_end;
}

struct HitQuery {
  enum class Status { Hit, NoHit } status = Status::NoHit;
  HitEvent hit;
  int tangency_warnings = 0;
};

// First hitting time of `section` from x0 within [0, t_max]. NoHit is the
// finite-horizon stand-in for tau = +infinity.
inline HitQuery first_hitting_time(const VectorFieldSpec& field, const AmbientSpace& space,
                                   const Tolerances& tol, const Vec3& x0, const SectionPatch& section,
                                   double t_max, double burn_in = 0.0) {
  RunResult r = run_flow(field, space, tol, x0, t_max, burn_in, &section);
  HitQuery q;
  q.tangency_warnings = r.tangency_warnings;
  if (r.stop == RunStop::HitSection) {
    q.status = HitQuery::Status::Hit;
    q.hit = *r.hit;
  }
  return q;
}

}  // namespace isflow
