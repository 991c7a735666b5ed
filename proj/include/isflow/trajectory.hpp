#pragma once

#include <algorithm>
#include <vector>

#include "isflow/flow.hpp"
#include "isflow/system.hpp"

namespace isflow {

// An impulse event: hit D at time tau, jumped to I(pre) on Dhat.
struct TrajEvent {
  double tau = 0;
  Vec3 pre{0, 0, 0};
  Vec3 post{0, 0, 0};
  Vec2 pre_chart{0, 0};
  bool interior = false;
};

struct ArcSample {
  double t;
  Vec3 y;  // arc-continuous coordinates (wrap applied on evaluation)
  Vec3 f;
};

struct Arc {
  double t0 = 0, t1 = 0;
  std::vector<ArcSample> samples;
};

// An impulsive orbit segment: smooth arcs separated by impulse events.
struct Trajectory {
  Vec3 x0{0, 0, 0};
  double horizon = 0;
  std::vector<Arc> arcs;
  std::vector<TrajEvent> events;
  int tangency_warnings = 0;
  bool boundary_flagged = false;  // some event landed in the margin band of dD
};

struct ImpulsiveRunControl {
  const SectionPatch* watch = nullptr;
  WatchCallback watch_cb;                       // non-terminal sigma crossings
  Observer observer;                            // absolute-time samples
  double obs_dt = 0;
  std::function<bool(const TrajEvent&)> on_event;  // return true to stop after the jump
};

struct ImpulsiveRunResult {
  RunStop stop = RunStop::TimeUp;
  double t_end = 0;
  Vec3 y_end{0, 0, 0};
  std::optional<HitEvent> watch_hit;  // when stop == WatchStop
  double watch_abs_time = 0;
  int events = 0;
  int tangency_warnings = 0;
};

// Drive the impulsive semiflow from x0 for t_end time units: flow to the
// first D hit, apply the impulse, continue. The travel-time bound
// dist(D, I(D))/||X||_inf keeps event times strictly increasing; the burn-in
// of half that bound after each jump prevents re-detection of the landing.
inline ImpulsiveRunResult impulsive_run(const ImpulsiveSystem& sys, const Vec3& x0, double t_end,
                                        const ImpulsiveRunControl& ctl = {}) {
  ImpulsiveRunResult out;
  Vec3 point = sys.space.canonical(x0);
  double t_cur = 0;
  // grazing start: starting on or near D requires a positive burn-in
  double burn = std::abs(sys.D.g(point)) <= 2 * sys.tol.section ? sys.burn_in() : 0.0;

  while (t_cur < t_end - 1e-14) {
    double t_base = t_cur;
    Observer obs;
    if (ctl.observer) {
      obs = [&](double t, const Vec3& y, const Vec3& f) {
        if (t_base > 0 && t == 0.0) return false;  // arc start duplicates the jump sample
        return ctl.observer(t_base + t, y, f);
      };
    }
    WatchCallback wcb;
    if (ctl.watch_cb) {
      wcb = [&](const HitEvent& ev) {
        HitEvent abs_ev = ev;
        abs_ev.time = t_base + ev.time;
        return ctl.watch_cb(abs_ev);
      };
    }
    RunResult r = run_flow(sys.field, sys.space, sys.tol, point, t_end - t_cur, burn, &sys.D, ctl.watch,
                           wcb, obs, ctl.obs_dt);
    out.tangency_warnings += r.tangency_warnings;
    switch (r.stop) {
      case RunStop::HitSection: {
        TrajEvent ev;
        ev.tau = t_cur + r.hit->time;
        ev.pre = r.hit->point;
        ev.pre_chart = r.hit->chart;
        ev.interior = r.hit->interior;
        ev.post = sys.apply_impulse(ev.pre);
        ++out.events;
        t_cur = ev.tau;
        point = ev.post;
        burn = sys.burn_in();
        if (ctl.on_event && ctl.on_event(ev)) {
          out.stop = RunStop::ObserverStop;
          out.t_end = t_cur;
          out.y_end = point;
          return out;
        }
        break;
      }
      case RunStop::WatchStop:
        out.stop = RunStop::WatchStop;
        out.t_end = t_cur + r.t_end;
        out.y_end = r.y_end;
        out.watch_hit = r.hit;
        out.watch_abs_time = t_cur + r.hit->time;
        return out;
      case RunStop::ObserverStop:
        out.stop = RunStop::ObserverStop;
        out.t_end = t_cur + r.t_end;
        out.y_end = r.y_end;
        return out;
      case RunStop::TimeUp:
        out.stop = RunStop::TimeUp;
        out.t_end = t_end;
        out.y_end = r.y_end;
        return out;
    }
  }
  out.stop = RunStop::TimeUp;
  out.t_end = t_end;
  out.y_end = point;
  return out;
}

// Construct the impulsive trajectory of x0 on [0, t_end] with dense arc
// storage every store_dt time units.
inline Trajectory impulsive_trajectory(const ImpulsiveSystem& sys, const Vec3& x0, double t_end,
                                       double store_dt = 0.02) {
  Trajectory traj;
  traj.x0 = sys.space.canonical(x0);
  traj.horizon = t_end;

  Arc current;
  current.t0 = 0;
  ImpulsiveRunControl ctl;
  ctl.obs_dt = store_dt;
  ctl.observer = [&](double t, const Vec3& y, const Vec3& f) {
    if (!current.samples.empty() && t <= current.samples.back().t + 1e-15) return false;
    current.samples.push_back({t, y, f});
    return false;
  };
  ctl.on_event = [&](const TrajEvent& ev) {
    current.t1 = ev.tau;
    traj.arcs.push_back(std::move(current));
    current = Arc{};
    current.t0 = ev.tau;
    current.samples.push_back({ev.tau, ev.post, sys.field_at(ev.post)});
    traj.events.push_back(ev);
    if (!ev.interior) traj.boundary_flagged = true;
    return false;
  };

  ImpulsiveRunResult r = impulsive_run(sys, traj.x0, t_end, ctl);
  traj.tangency_warnings = r.tangency_warnings;
  current.t1 = t_end;
  if (current.samples.empty()) current.samples.push_back({current.t0, r.y_end, sys.field_at(r.y_end)});
  traj.arcs.push_back(std::move(current));
  return traj;
}

inline std::vector<double> impulsive_times(const Trajectory& traj) {
  std::vector<double> out;
  out.reserve(traj.events.size());
  for (const auto& e : traj.events) out.push_back(e.tau);
  return out;
}

// gamma_x(t). At t = tau_n this returns the post-impulse point (the
// trajectory convention); the pre-impulse limit is in the event record.
inline Vec3 trajectory_evaluate(const Trajectory& traj, const ImpulsiveSystem& sys, double t) {
  if (t < -1e-12 || t > traj.horizon + 1e-12)
    fail(ErrorKind::BadParameter, "trajectory_evaluate: t outside [0, horizon]");
  t = std::clamp(t, 0.0, traj.horizon);
  for (const auto& e : traj.events)
    if (std::abs(t - e.tau) <= 1e-13) return e.post;

  // locate the arc with t0 <= t < t1 (final arc closed on the right)
  const Arc* arc = &traj.arcs.back();
  for (const auto& a : traj.arcs) {
    if (t >= a.t0 - 1e-13 && t < a.t1) {
      arc = &a;
      break;
    }
  }
  const auto& s = arc->samples;
  if (s.size() == 1) return sys.space.canonical(s.front().y);
  auto it = std::lower_bound(s.begin(), s.end(), t,
                             [](const ArcSample& a, double tv) { return a.t < tv; });
  if (it == s.begin()) ++it;
  if (it == s.end()) --it;
  const ArcSample& s1 = *it;
  const ArcSample& s0 = *(it - 1);
  return sys.space.canonical(hermite(t, s0.t, s0.y, s0.f, s1.t, s1.y, s1.f));
}

}  // namespace isflow
