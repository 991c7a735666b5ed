#pragma once

#include <algorithm>
#include <optional>
#include <sstream>
#include <vector>

#include "isflow/index.hpp"
#include "isflow/poincare.hpp"
#include "isflow/rng.hpp"

namespace isflow {

// ||I - J||_C0 as the max chart-image distance over a sample grid of D.
inline double c0_distance_impulses(const Impulse& I, const Impulse& J, const ImpulsiveSystem& sys,
                                   int n_samples) {
  int n = std::max(2, static_cast<int>(std::round(std::sqrt(static_cast<double>(n_samples)))));
  double m = 0;
  for (const auto& u : sys.D.sample_grid(n)) {
    Vec3 a = sys.Dhat.chart_point(I.apply_chart(u));
    Vec3 b = sys.Dhat.chart_point(J.apply_chart(u));
    m = std::max(m, sys.space.distance(a, b));
  }
  return m;
}

namespace detail {

// One Poincare step that applies the impulse regardless of the interior flag
// (used while building iterate chains; margin-band landings stay in the chain).
struct HatStep {
  bool ok = false;
  Vec2 chart{0, 0};
  double flight = 0;
  bool interior = false;
};

inline HatStep hat_step(const ImpulsiveSystem& sys, const Vec2& u) {
  HatStep s;
  HitQuery q = first_hitting_time(sys.field, sys.space, sys.tol, sys.Dhat.chart_point(u), sys.D,
                                  sys.tol.horizon, sys.burn_in());
  if (q.status != HitQuery::Status::Hit) return s;
  s.ok = true;
  s.chart = sys.impulse.apply_chart(q.hit.chart);
  s.flight = q.hit.time;
  s.interior = q.hit.interior;
  return s;
}

inline double clearance_to_rect(const SectionPatch& sec, const Vec2& u) {
  if (sec.chart == ChartKind::Latitude) return M_PI * sec.ring_radius();
  double c = std::min(u[0] - sec.rect_lo[0], sec.rect_hi[0] - u[0]);
  return std::min(c, std::min(u[1] - sec.rect_lo[1], sec.rect_hi[1] - u[1]));
}

}  // namespace detail

struct ClosingOptions {
  int recurrence_budget = 200;
  double lipschitz_cap = 0.85;      // per-bump displacement Lipschitz cap
  double min_bump_radius = 1e-4;
  double refine_tol = 1e-7;
  std::vector<Vec2> protected_points;                     // must stay fixed
  std::vector<std::pair<Vec2, double>> protected_supports;  // (center, radius) to stay clear of
};

enum class ClosingStatus { Ok, AlreadyPeriodic, NotRecurrent };

struct ImpulseClosing {
  ClosingStatus status = ClosingStatus::NotRecurrent;
  Impulse impulse;
  PerturbationRecord record;
  PeriodicOrbit orbit;       // verified on the perturbed system
  Vec3 periodic_point{0, 0, 0};
  int recurrence_length = 0;
  double c0_size = 0;        // d_C0(zeta, id) = moved distance
  int rejected_radii = 0;    // bump-collision retries
};

// C0-closing lemma for impulses: find x near p and least n with P^n(x) within
// eps/2 of p, then post-compose I with one bump zeta moving x_n = P^n(x) to x
// while fixing the intermediate iterates (bump radius below half their
// separation), so x becomes a fixed point of P_{X, zeta o I}^n.
inline ImpulseClosing closing_impulse(const ImpulsiveSystem& sys, const Vec3& p, double eps,
                                      const ClosingOptions& opt = {}) {
  ImpulseClosing out;
  if (sys.Dhat.chart_dim != 2)
    fail(ErrorKind::DimensionUnsupported, "closing_impulse needs dim D-hat = d-1 >= 2");
  auto up_opt = sys.Dhat.chart_coords(sys.space, sys.space.canonical(p));
  if (!up_opt) fail(ErrorKind::OutsidePatch, "closing_impulse: target is not on " + sys.Dhat.name);
  Vec2 up = *up_opt;
  Vec2 ext = sys.Dhat.rect_size();
  if (eps <= 0 || eps > std::min(ext[0], ext[1]))
    fail(ErrorKind::BadParameter, "closing_impulse: eps must be positive and fit the chart");

  // already periodic: nothing to be done
  {
    Vec2 u = up;
    double flight = 0;
    for (int n = 1; n <= std::min(opt.recurrence_budget, 16); ++n) {
      detail::HatStep s = detail::hat_step(sys, u);
      if (!s.ok) break;
      u = s.chart;
      flight += s.flight;
      if (norm(u - up) <= 10 * opt.refine_tol) {
        out.status = ClosingStatus::AlreadyPeriodic;
        out.impulse = sys.impulse;
        out.recurrence_length = n;
        out.periodic_point = sys.Dhat.chart_point(up);
        auto orb = find_periodic_orbit(sys, out.periodic_point, n, 10 * opt.refine_tol);
        if (orb) out.orbit = *orb;
        out.record = {"impulse", 0.0, "identity (target already periodic)", sys.seed};
        return out;
      }
    }
  }

  // candidate starts: p itself, then small rings around it
  std::vector<Vec2> candidates{up};
  for (double r : {eps / 8, eps / 4}) {
    for (int j = 0; j < 8; ++j) {
      double a = 2 * M_PI * j / 8;
      Vec2 cu{up[0] + r * std::cos(a), up[1] + r * std::sin(a)};
      if (sys.Dhat.in_rect(cu) && sys.Dhat.interior_coords(cu)) candidates.push_back(cu);
    }
  }

  for (const Vec2& x : candidates) {
    std::vector<Vec2> iterates;  // x_1 .. x_n
    Vec2 u = x;
    for (int n = 1; n <= opt.recurrence_budget; ++n) {
      detail::HatStep s = detail::hat_step(sys, u);
      if (!s.ok) break;
      u = s.chart;
      iterates.push_back(u);
      if (norm(u - up) >= eps / 2) continue;

      // bump construction at c = x_n moving to x
      Vec2 c = u;
      Vec2 v = x - c;
      double vn = norm(v);
      if (vn < opt.min_bump_radius * 1e-3) {
        // numerically already closed; treat как periodic after verification
        vn = 0;
      }
      double r_allow = 0.45 * std::min(ext[0], ext[1]);
      for (int i = 0; i + 1 < static_cast<int>(iterates.size()); ++i)
        r_allow = std::min(r_allow, norm(c - iterates[static_cast<std::size_t>(i)]));
      for (const auto& q : opt.protected_points) r_allow = std::min(r_allow, norm(c - q));
      for (const auto& [qc, qr] : opt.protected_supports)
        r_allow = std::min(r_allow, norm(c - qc) - qr);
      r_allow = std::min(r_allow, detail::clearance_to_rect(sys.Dhat, c) - vn);
      r_allow *= 0.95;
      double r_need = std::max(vn * kBumpProfileLip / opt.lipschitz_cap, opt.min_bump_radius);
      if (r_allow < r_need) {
        ++out.rejected_radii;
        continue;  // BumpCollision: retry with a larger n
      }
      double radius = std::min(r_allow, std::max(r_need * 2.0, opt.min_bump_radius * 10));

      Impulse J = sys.impulse;
      if (vn > 0) J.bumps.push_back({BumpKind::Translate, c, radius, v, 0.0});

      ImpulsiveSystem sys2 = sys;
      sys2.impulse = J;
      refresh_derived(sys2);
      // event-time jitter compounds along the chain; scale the tolerance
      double tol_eff = std::max(opt.refine_tol, 100.0 * n * sys.tol.event_time * sys.field.sup_norm);
      auto orb = find_periodic_orbit(sys2, sys.Dhat.chart_point(x), n, tol_eff);
      if (!orb) {
        ++out.rejected_radii;
        continue;
      }
      if (sys.space.distance(orb->representative, sys.Dhat.chart_point(up)) > eps) continue;

      out.status = ClosingStatus::Ok;
      out.impulse = J;
      out.orbit = *orb;
      out.periodic_point = sys.Dhat.chart_point(x);
      out.recurrence_length = n;
      out.c0_size = vn;
      std::ostringstream desc;
      desc << "bump center=(" << c[0] << "," << c[1] << ") radius=" << radius << " disp=(" << v[0]
           << "," << v[1] << ") n=" << n;
      out.record = {"impulse", vn, desc.str(), sys.seed};
      return out;
    }
  }
  out.status = ClosingStatus::NotRecurrent;
  return out;
}

struct FieldClosingOptions {
  double search_horizon = 2000.0;
  double min_return_time = 1.0;
  double min_window = 1.25;  // clear flow time wanted before the return
  double delta = 1.2;        // tube duration cap
  double tube_radius = 0.05;
  double refine_tol = 1e-7;
  int max_candidates = 16;
  std::vector<std::pair<Vec3, double>> avoid_balls;  // existing support regions
};

struct FieldClosing {
  ClosingStatus status = ClosingStatus::NotRecurrent;
  VectorFieldSpec field;
  PerturbationRecord record;
  PeriodicOrbit orbit;
  double c0_size = 0;
  double return_time = 0;
  int crossings = 0;
  std::string failure;
};

// C0-closing lemma for vector fields: find a near-return of the impulsive
// orbit of p to a transversal disk slightly downstream of p (so impulse
// landings near p still produce flow crossings), steer the final approach
// inside a flow tube disjoint from D and Dhat, and verify the periodic orbit
// of the perturbed semiflow.
inline FieldClosing closing_field(const ImpulsiveSystem& sys, Vec3 p, double eps,
                                  const FieldClosingOptions& opt = {}) {
  FieldClosing out;
  p = sys.space.canonical(p);
  double speed = norm(sys.field_at(p));
  if (speed <= sys.tol.singularity_floor)
    fail(ErrorKind::BadParameter, "closing_field: target is within the singularity floor");
  if (std::abs(sys.D.g(p)) <= 2 * sys.tol.section && sys.D.contains(sys.space, p))
    p = flow(sys.field, sys.space, p, -sys.burn_in(), sys.tol);

  // reference point q downstream of p, and the transversal disk through it
  double t_shift = 0.25 * sys.min_flight_time();
  Vec3 q = impulsive_run(sys, p, t_shift).y_end;
  Vec3 nrm = normalized(sys.field_at(q));
  int axis = std::abs(nrm[0]) < std::abs(nrm[1]) ? (std::abs(nrm[0]) < std::abs(nrm[2]) ? 0 : 2)
                                                 : (std::abs(nrm[1]) < std::abs(nrm[2]) ? 1 : 2);
  Vec3 e{0, 0, 0};
  e[axis] = 1;
  Vec3 e0 = normalized(e - dot(e, nrm) * nrm);
  Vec3 e1 = cross(nrm, e0);
  double r_sig = eps / 2;
  SectionPatch sigma = SectionPatch::affine("sigma_p", q, e0, e1, {-r_sig, -r_sig}, {r_sig, r_sig},
                                            0.0, 0.25 * norm(sys.field_at(q)));
  sigma.normal = nrm;

  // near-return search along the impulsive orbit of p
  struct Candidate {
    double t = 0;
    Vec3 point{0, 0, 0};
    int loop_events = 0;  // impulse events per closed loop (after the shift)
    double window = 0;    // event-free flow time before the return
  };
  std::vector<Candidate> cands;
  int events_seen = 0;
  double last_event_time = 0;
  {
    ImpulsiveRunControl ctl;
    ctl.watch = &sigma;
    ctl.on_event = [&](const TrajEvent& ev) {
      if (ev.tau > t_shift) ++events_seen;
      last_event_time = ev.tau;
      return false;
    };
    int good = 0;
    ctl.watch_cb = [&](const HitEvent& ev) {
      if (ev.time < t_shift + opt.min_return_time) return false;
      if (norm(ev.chart) > eps / 2) return false;
      Candidate c{ev.time, ev.point, events_seen, ev.time - std::max(last_event_time, t_shift)};
      cands.push_back(c);
      if (c.window >= opt.min_window) ++good;
      return good >= 6 || static_cast<int>(cands.size()) >= opt.max_candidates;
    };
    impulsive_run(sys, p, opt.search_horizon, ctl);
  }
  if (cands.empty()) {
    out.status = ClosingStatus::NotRecurrent;
    return out;
  }
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return a.window > b.window; });
  if (sys.space.distance(cands.front().point, q) <= 1e-8) {
    out.status = ClosingStatus::AlreadyPeriodic;
    out.field = sys.field;
    out.return_time = cands.front().t;
    out.crossings = cands.front().loop_events;
    out.record = {"field", 0.0, "identity (target already periodic)", sys.seed};
    return out;
  }

  for (const Candidate& found : cands) {
    if (found.window < 4 * sys.tol.scan_dt) continue;
    Vec3 target_disp = sys.space.displacement(found.point, q);
    double dn = norm(target_disp);
    double delta = std::min(opt.delta, 0.8 * found.window);

    for (int attempt = 0; attempt < 2; ++attempt, delta *= 0.5) {
      if (delta < 10 * sys.tol.event_time) break;
      // anchor on the orbit: replay the run up to the tube entry
      Vec3 anchor = impulsive_run(sys, p, found.t - delta).y_end;

      PerturbTerm term;
      term.kind = PerturbKind::TubeSteer;
      term.anchor = anchor;
      term.duration = delta;
      term.radius = std::max(opt.tube_radius, 1.9 * dn);
      term.steer = {0, 0};

      VectorFieldSpec f2 = sys.field;
      f2.terms.push_back(term);
      f2.build_tube_caches(sys.space, f2.terms.size() - 1);
      PerturbTerm& built = f2.terms.back();

      // support clearance from the sections and existing supports; the tube
      // radius is then fitted below the clearance
      double clear = 1e300;
      for (const auto& cs : built.curve) {
        Vec3 cc = sys.space.canonical(cs.c);
        clear = std::min(clear, section_distance(sys.space, sys.D, cc));
        clear = std::min(clear, section_distance(sys.space, sys.Dhat, cc));
        for (const auto& [bc, br] : opt.avoid_balls)
          clear = std::min(clear, sys.space.distance(cc, bc) - br);
      }
      double radius = std::min(built.radius, 0.9 * clear);
      if (radius < 1.6 * dn) {
        out.failure = "tube clearance " + std::to_string(clear) + " too small for the gap";
        continue;
      }
      built.radius = radius;
      {
        Vec3 lo = built.curve.front().c, hi = lo;
        for (const auto& cs : built.curve)
          for (int i = 0; i < 3; ++i) {
            lo[i] = std::min(lo[i], cs.c[i]);
            hi[i] = std::max(hi[i], cs.c[i]);
          }
        double pad = radius * 1.05 + 0.01;
        for (int i = 0; i < 3; ++i) {
          built.bbox_lo[i] = lo[i] - pad;
          built.bbox_hi[i] = hi[i] + pad;
        }
      }

      // Solve for the steer coefficients on the measured return gap. A long
      // recurrence loop may graze the tube on earlier passes, so the naive
      // one-pass magnitude is only a seed; a small 2x2 secant iteration on
      // G(steer) = (k-fold return of the first landing) - (first landing)
      // absorbs those extra passes.
      double tol_eff = std::max(
          opt.refine_tol, 100.0 * std::max(found.loop_events, 1) * sys.tol.event_time * sys.field.sup_norm);
      auto gap_of = [&](const Vec2& steer) -> std::optional<std::pair<Vec2, Vec3>> {
        built.steer = steer;
        ImpulsiveSystem sys2 = sys;
        sys2.field = f2;
        refresh_derived(sys2);
        if (found.loop_events >= 1) {
          Vec3 y_guess{0, 0, 0};
          bool got = false;
          ImpulsiveRunControl cg;
          cg.on_event = [&](const TrajEvent& ev) {
            y_guess = ev.post;
            got = true;
            return true;
          };
          impulsive_run(sys2, q, sys.tol.horizon, cg);
          if (!got) return std::nullopt;
          MapResult r = poincare_hat_k(sys2, y_guess, found.loop_events);
          if (r.status != MapStatus::Ok) return std::nullopt;
          auto u0 = sys2.Dhat.chart_coords(sys2.space, y_guess);
          if (!u0) return std::nullopt;
          return std::make_pair(r.chart - *u0, y_guess);
        }
        MapResult r = return_map(sys2, sigma, q, 1);
        if (r.status != MapStatus::Ok) return std::nullopt;
        auto u0 = sigma.chart_coords(sys2.space, q);
        return std::make_pair(r.chart - *u0, q);
      };

      const TubeSample& end = built.curve.back();
      Vec3 f2v = cross(end.tangent, end.f1);
      double c_gate = 1.0 - built.gate_ramp;  // mean of the trapezoid gate
      Vec2 steer{dot(target_disp, end.f1) / (c_gate * delta),
                 dot(target_disp, f2v) / (c_gate * delta)};
      double steer_cap = 0.9 * eps;
      double seed_norm = norm(steer);
      if (seed_norm > steer_cap) {
        out.failure = "steer seed exceeds eps";
        break;
      }

      bool solved = false;
      Vec3 y_final{0, 0, 0};
      {
        // finite-difference response matrix at steer = 0
        auto g0 = gap_of({0, 0});
        if (!g0) {
          out.failure = "orbit lost while measuring the response";
          continue;
        }
        double h = std::max(0.25 * seed_norm, 1e-6);
        auto gx = gap_of({h, 0});
        auto gy = gap_of({0, h});
        if (!gx || !gy) {
          out.failure = "orbit lost while measuring the response";
          continue;
        }
        std::array<double, 4> M{(gx->first[0] - g0->first[0]) / h, (gy->first[0] - g0->first[0]) / h,
                                (gx->first[1] - g0->first[1]) / h, (gy->first[1] - g0->first[1]) / h};
        Vec2 s{0, 0};
        Vec2 gap = g0->first;
        for (int it = 0; it < 12; ++it) {
          if (norm(gap) <= 10 * tol_eff) {
            solved = true;
            y_final = g0->second;
            break;
          }
          double det = M[0] * M[3] - M[1] * M[2];
          if (std::abs(det) < 1e-14) break;
          Vec2 ds{-(M[3] * gap[0] - M[1] * gap[1]) / det, -(-M[2] * gap[0] + M[0] * gap[1]) / det};
          double dsn = norm(ds);
          if (dsn > 0.5 * steer_cap) ds = (0.5 * steer_cap / dsn) * ds;
          Vec2 s_new = s + ds;
          if (norm(s_new) > steer_cap) break;
          auto g_new = gap_of(s_new);
          if (!g_new) break;
          // secant update of the response matrix
          Vec2 dgap = g_new->first - gap;
          double dd = dot(ds, ds);
          if (dd > 0) {
            Vec2 Mds{M[0] * ds[0] + M[1] * ds[1], M[2] * ds[0] + M[3] * ds[1]};
            Vec2 rr{(dgap[0] - Mds[0]) / dd, (dgap[1] - Mds[1]) / dd};
            M[0] += rr[0] * ds[0];
            M[1] += rr[0] * ds[1];
            M[2] += rr[1] * ds[0];
            M[3] += rr[1] * ds[1];
          }
          s = s_new;
          gap = g_new->first;
          g0 = g_new;
        }
        built.steer = s;
      }
      if (!solved) {
        out.failure = "steer iteration did not close the gap";
        continue;
      }
      double c0 = norm(built.steer);

      ImpulsiveSystem sys2 = sys;
      sys2.field = f2;
      refresh_derived(sys2);
      std::optional<PeriodicOrbit> orb;
      if (found.loop_events >= 1) {
        orb = find_periodic_orbit(sys2, y_final, found.loop_events, tol_eff);
      } else {
        orb = find_plain_orbit(sys2, sigma, q, std::max(opt.refine_tol, tol_eff));
      }
      if (!orb) {
        out.failure = "refinement failed after steering";
        continue;
      }
      std::vector<Vec3> samples = orbit_samples(sys2, *orb, 0.02);
      double d = point_to_orbit_distance(sys2, samples, p);
      if (d > eps) {
        out.failure = "verified orbit is " + std::to_string(d) + " from the target";
        continue;
      }

      out.status = ClosingStatus::Ok;
      out.field = f2;
      out.orbit = *orb;
      out.c0_size = c0;
      out.return_time = found.t;
      out.crossings = found.loop_events;
      std::ostringstream desc;
      desc << "steer tube anchor=(" << anchor[0] << "," << anchor[1] << "," << anchor[2]
           << ") delta=" << delta << " radius=" << built.radius << " steer=(" << built.steer[0]
           << "," << built.steer[1] << ")";
      out.record = {"field", c0, desc.str(), sys.seed};
      return out;
    }
  }
  out.status = ClosingStatus::NotRecurrent;
  if (out.failure.empty()) out.failure = "no admissible tube";
  return out;
}

struct AttractifyOptions {
  double tube_radius = 0.25;
  double delta_cap = 4.0;
  double min_delta = 0.3;
  double sample_dt = 0.02;
  double fd_step = 1e-4;
  double refine_tol = 1e-7;
  std::vector<std::pair<Vec3, double>> avoid_balls;
};

struct AttractifyResult {
  bool ok = false;
  VectorFieldSpec field;
  PerturbationRecord record;
  PeriodicOrbit orbit;       // classification updated
  double contraction_ratio = 1.0;
  double c0_size = 0;
  double c0_per_eta2 = 0;    // the constant C in ||Y - X|| <= C eta^2
  std::string failure;
};

// Finite-difference contraction ratio of the k-fold Poincare map at the
// orbit representative (max over four probe directions).
inline double fd_contraction_ratio(const ImpulsiveSystem& sys, const PeriodicOrbit& orbit,
                                   double h = 1e-4) {
  const SectionPatch& sec = orbit.crossings >= 1 ? sys.Dhat : orbit.free_section.value();
  auto u0 = sec.chart_coords(sys.space, orbit.representative);
  if (!u0) fail(ErrorKind::OutsidePatch, "fd_contraction_ratio: representative off its section");
  auto apply = [&](const Vec2& u) -> Vec2 {
    if (orbit.crossings >= 1) {
      MapResult r = poincare_hat_k(sys, sys.Dhat.chart_point(u), orbit.crossings);
      if (r.status != MapStatus::Ok) fail(ErrorKind::NumericalFailure, "map undefined near the orbit");
      return r.chart;
    }
    MapResult r = return_map(sys, sec, sec.chart_point(u), 1);
    if (r.status != MapStatus::Ok) fail(ErrorKind::NumericalFailure, "map undefined near the orbit");
    return r.chart;
  };
  Vec2 base = apply(*u0);
  double ratio = 0;
  const Vec2 dirs[4] = {{1, 0}, {0, 1}, {M_SQRT1_2, M_SQRT1_2}, {M_SQRT1_2, -M_SQRT1_2}};
  int used = 0;
  for (const Vec2& d : dirs) {
    if (sec.chart_dim == 1 && d[1] != 0) continue;
    Vec2 u{(*u0)[0] + h * d[0], (*u0)[1] + h * d[1]};
    if (!sec.in_rect(u)) continue;
    Vec2 img = apply(u);
    ratio = std::max(ratio, norm(img - base) / h);
    ++used;
  }
  if (used == 0) fail(ErrorKind::NumericalFailure, "no admissible probe direction");
  return ratio;
}

// Install a transversal contraction along a free flow segment of the orbit
// (zero on the orbit itself, so the orbit is preserved exactly), making it
// attracting. The plateau contraction rate is eta^2, matching the profile
// normalization alpha, beta <= eta.
inline AttractifyResult attractify(const ImpulsiveSystem& sys, const PeriodicOrbit& orbit, double eta,
                                   const AttractifyOptions& opt = {}) {
  AttractifyResult out;
  if (eta == 0.0) {
    out.ok = true;
    out.field = sys.field;
    out.orbit = orbit;
    out.contraction_ratio = fd_contraction_ratio(sys, orbit, opt.fd_step);
    out.record = {"field", 0.0, "identity (eta = 0)", sys.seed};
    return out;
  }

  // sample the orbit path with event times
  struct PathPoint {
    double t;
    Vec3 y;
  };
  std::vector<PathPoint> path;
  std::vector<double> cuts{0.0};
  {
    ImpulsiveRunControl ctl;
    ctl.obs_dt = opt.sample_dt;
    ctl.observer = [&](double t, const Vec3& y, const Vec3&) {
      path.push_back({t, sys.space.canonical(y)});
      return false;
    };
    ctl.on_event = [&](const TrajEvent& ev) {
      cuts.push_back(ev.tau);
      return false;
    };
    impulsive_run(sys, orbit.representative, orbit.period, ctl);
  }
  cuts.push_back(orbit.period);

  // the longest run of samples clear of D, Dhat and existing supports,
  // within a single arc
  auto clear_at = [&](const Vec3& y) {
    double c = std::min(section_distance(sys.space, sys.D, y), section_distance(sys.space, sys.Dhat, y));
    for (const auto& [bc, br] : opt.avoid_balls) c = std::min(c, sys.space.distance(y, bc) - br);
    return c;
  };
  double best_lo = 0, best_hi = 0;
  for (std::size_t ci = 0; ci + 1 < cuts.size(); ++ci) {
    double lo = cuts[ci], hi = cuts[ci + 1];
    double run_start = -1;
    for (const auto& pp : path) {
      if (pp.t < lo || pp.t > hi) continue;
      if (clear_at(pp.y) > opt.tube_radius * 1.1) {
        if (run_start < 0) run_start = pp.t;
        if (pp.t - run_start > best_hi - best_lo) {
          best_lo = run_start;
          best_hi = pp.t;
        }
      } else {
        run_start = -1;
      }
    }
  }
  double window = best_hi - best_lo;
  double delta = std::min(opt.delta_cap, 0.9 * window);
  if (delta < std::max(opt.min_delta, 5 * eta)) {
    out.failure = "no free segment long enough (window " + std::to_string(window) + ")";
    return out;
  }
  double t_anchor = best_lo + 0.5 * (window - delta);

  Vec3 anchor{0, 0, 0};
  {
    ImpulsiveRunControl ctl;
    ImpulsiveRunResult rr = impulsive_run(sys, orbit.representative, t_anchor, ctl);
    anchor = rr.y_end;
  }

  PerturbTerm term;
  term.kind = PerturbKind::TubeContraction;
  term.anchor = anchor;
  term.duration = delta;
  term.radius = opt.tube_radius;
  term.eta = eta;

  ImpulsiveSystem sys2 = sys;
  sys2.field.terms.push_back(term);
  sys2.field.build_tube_caches(sys.space, sys2.field.terms.size() - 1);
  refresh_derived(sys2);

  PeriodicOrbit orb2 = orbit;
  if (orbit.crossings >= 1) {
    auto re = find_periodic_orbit(sys2, orbit.representative, orbit.crossings,
                                  std::max(opt.refine_tol, orbit.residual * 10));
    if (!re) {
      out.failure = "orbit did not re-verify under the contraction tube";
      return out;
    }
    orb2 = *re;
  }
  double ratio = fd_contraction_ratio(sys2, orb2, opt.fd_step);
  out.contraction_ratio = ratio;
  if (ratio >= 1.0) {
    out.failure = "contraction not achieved (ratio " + std::to_string(ratio) + ")";
    return out;
  }
  orb2.classification = "attracting";
  out.ok = true;
  out.field = sys2.field;
  out.orbit = orb2;
  // sup |W| = eta^2 * max over rho of gate(rho) * rho
  double gate_max = 0;
  for (int i = 0; i <= 400; ++i) {
    double rho = term.radius * i / 400.0;
    gate_max = std::max(gate_max, tube_transversal_gate(rho, term.radius) * rho);
  }
  out.c0_size = eta * eta * gate_max;
  out.c0_per_eta2 = gate_max;
  std::ostringstream desc;
  desc << "contraction tube anchor=(" << anchor[0] << "," << anchor[1] << "," << anchor[2]
       << ") delta=" << delta << " radius=" << term.radius << " eta=" << eta;
  out.record = {"field", out.c0_size, desc.str(), sys.seed};
  return out;
}

struct AttractifyImpulseOptions {
  double min_radius = 1e-3;
  double strength_cap = 0.8;
  double local_lipschitz_budget = 0.95;
  double fd_step = 1e-4;
  double refine_tol = 1e-7;
  std::vector<Vec2> protected_points;
};

struct AttractifyImpulseResult {
  bool ok = false;
  Impulse impulse;
  PerturbationRecord record;
  PeriodicOrbit orbit;
  double contraction_ratio = 1.0;
  double c0_size = 0;
  std::string failure;
};

// Post-compose the impulse with a radial contraction bump toward one of the
// orbit's landing points (the other landings and any protected points stay
// outside the support), making P^k a contraction near the representative.
inline AttractifyImpulseResult attractify_impulse(const ImpulsiveSystem& sys, const PeriodicOrbit& orbit,
                                                  double eta, const AttractifyImpulseOptions& opt = {}) {
  AttractifyImpulseResult out;
  if (orbit.crossings < 1) fail(ErrorKind::BadParameter, "attractify_impulse needs a D-crossing orbit");
  if (eta == 0.0) {
    out.ok = true;
    out.impulse = sys.impulse;
    out.orbit = orbit;
    out.contraction_ratio = fd_contraction_ratio(sys, orbit, opt.fd_step);
    out.record = {"impulse", 0.0, "identity (eta = 0)", sys.seed};
    return out;
  }

  // landing chart points around the loop
  std::vector<Vec2> w(static_cast<std::size_t>(orbit.crossings));
  {
    auto u0 = sys.Dhat.chart_coords(sys.space, orbit.representative);
    if (!u0) fail(ErrorKind::OutsidePatch, "attractify_impulse: representative off D-hat");
    Vec2 u = *u0;
    for (int i = 0; i < orbit.crossings; ++i) {
      w[static_cast<std::size_t>(i)] = u;
      if (i + 1 < orbit.crossings) {
        detail::HatStep s = detail::hat_step(sys, u);
        if (!s.ok) fail(ErrorKind::NumericalFailure, "orbit landing chain broke");
        u = s.chart;
      }
    }
  }

  // pick the landing with the best clearance
  int best_j = -1;
  double best_clear = 0;
  for (int j = 0; j < orbit.crossings; ++j) {
    double c = detail::clearance_to_rect(sys.Dhat, w[static_cast<std::size_t>(j)]) / 1.3;
    for (int i = 0; i < orbit.crossings; ++i)
      if (i != j) c = std::min(c, 0.8 * norm(w[static_cast<std::size_t>(j)] - w[static_cast<std::size_t>(i)]));
    for (const auto& q : opt.protected_points)
      c = std::min(c, 0.8 * norm(w[static_cast<std::size_t>(j)] - q));
    if (c > best_clear) {
      best_clear = c;
      best_j = j;
    }
  }
  double radius = std::min(best_clear, 0.2 * std::min(sys.Dhat.rect_size()[0], sys.Dhat.rect_size()[1]));
  if (best_j < 0 || radius < opt.min_radius) {
    out.failure = "crossings too close (radius " + std::to_string(radius) + ")";
    return out;
  }
  Vec2 center = w[static_cast<std::size_t>(best_j)];

  // local Lipschitz budget against overlapping existing bumps
  double used = 0;
  for (const auto& b : sys.impulse.bumps)
    if (norm(b.center - center) < b.radius + radius) used += b.lipschitz();
  double strength = std::min({opt.strength_cap, opt.local_lipschitz_budget - used,
                              eta / (kBumpProfileMaxRs * radius)});
  if (strength <= 0.05) {
    out.failure = "no Lipschitz budget left near the landing";
    return out;
  }

  Impulse J = sys.impulse;
  J.bumps.push_back({BumpKind::RadialContraction, center, radius, {0, 0}, strength});

  ImpulsiveSystem sys2 = sys;
  sys2.impulse = J;
  refresh_derived(sys2);
  auto re = find_periodic_orbit(sys2, orbit.representative, orbit.crossings,
                                std::max(opt.refine_tol, orbit.residual * 10));
  if (!re) {
    out.failure = "orbit did not re-verify under the impulse bump";
    return out;
  }
  double ratio = fd_contraction_ratio(sys2, *re, opt.fd_step);
  out.contraction_ratio = ratio;
  if (ratio >= 1.0) {
    out.failure = "contraction not achieved (ratio " + std::to_string(ratio) + ")";
    return out;
  }
  out.ok = true;
  out.impulse = J;
  out.orbit = *re;
  out.orbit.classification = "attracting";
  out.c0_size = strength * kBumpProfileMaxRs * radius;
  std::ostringstream desc;
  desc << "radial bump center=(" << center[0] << "," << center[1] << ") radius=" << radius
       << " strength=" << strength;
  out.record = {"impulse", out.c0_size, desc.str(), sys.seed};
  if (out.c0_size > eta) {
    out.ok = false;
    out.failure = "bump size exceeds eta";
  }
  return out;
}

struct PermanenceReport {
  std::string mode;
  double delta = 0;
  int trials = 0;
  int survivals = 0;
  double worst_displacement = 0;
  std::uint64_t seed = 0;
};

// Perturb the whole system by C0 size exactly delta (3 random bumps, impulse
// or field mode) and check that a periodic orbit survives near the original.
inline bool orbit_survives(const ImpulsiveSystem& perturbed, const PeriodicOrbit& orbit,
                           double survival_radius, double refine_tol, double* displacement = nullptr) {
  try {
    std::optional<PeriodicOrbit> orb2;
    if (orbit.crossings >= 1)
      orb2 = find_periodic_orbit(perturbed, orbit.representative, orbit.crossings, refine_tol);
    else
      orb2 = find_plain_orbit(perturbed, orbit.free_section.value(), orbit.representative, refine_tol);
    if (!orb2) return false;
    double d = perturbed.space.distance(orb2->representative, orbit.representative);
    if (displacement) *displacement = d;
    return d <= survival_radius;
  } catch (const Error&) {
    return false;
  }
}

inline ImpulsiveSystem random_impulse_perturbation(const ImpulsiveSystem& sys, double delta, Rng rng) {
  Impulse J = sys.impulse;
  Vec2 lo = sys.Dhat.rect_lo, hi = sys.Dhat.rect_hi;
  double ext = std::min(hi[0] - lo[0], hi[1] - lo[1]);
  for (int b = 0; b < 3; ++b) {
    ChartBump bump;
    bump.kind = BumpKind::Translate;
    bump.center = {rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1])};
    bump.radius = rng.uniform(0.05, 0.2) * ext;
    double ang = rng.uniform(0, 2 * M_PI);
    double mag = rng.uniform(0.25, 1.0);
    bump.disp = {mag * std::cos(ang), mag * std::sin(ang)};
    J.bumps.push_back(bump);
  }
  ImpulsiveSystem out = sys;
  out.impulse = J;
  // scale the new bumps so the measured C0 distance is exactly delta
  for (int pass = 0; pass < 3; ++pass) {
    double measured = c0_distance_impulses(sys.impulse, out.impulse, sys, 900);
    if (measured <= 0) break;
    double s = delta / measured;
    for (std::size_t i = J.bumps.size() - 3; i < J.bumps.size(); ++i) {
      out.impulse.bumps[i].disp = s * out.impulse.bumps[i].disp;
    }
  }
  refresh_derived(out);
  return out;
}

inline ImpulsiveSystem random_field_perturbation(const ImpulsiveSystem& sys, double delta, Rng rng) {
  VectorFieldSpec f = sys.field;
  double scale_len = sys.space.diameter() / 4;
  std::size_t first = f.terms.size();
  for (int b = 0; b < 3; ++b) {
    PerturbTerm t;
    t.kind = PerturbKind::BallBump;
    t.center = sys.space.sample(rng.next_u64() % 4096);
    for (int tries = 0; tries < 64; ++tries) {
      if (norm(sys.field.eval(sys.space, t.center)) > 4 * sys.tol.singularity_floor) break;
      t.center = sys.space.sample(rng.next_u64() % 4096);
    }
    t.radius = rng.uniform(0.05, 0.2) * scale_len;
    double a1 = rng.uniform(0, 2 * M_PI), a2 = rng.uniform(-1, 1);
    double r = std::sqrt(std::max(0.0, 1 - a2 * a2));
    t.v = rng.uniform(0.25, 1.0) * Vec3{r * std::cos(a1), r * std::sin(a1), a2};
    f.terms.push_back(t);
  }
  // scale so the measured C0 size is exactly delta (max over samples and the
  // bump centers, where disjoint bumps attain their sup)
  auto measure = [&]() {
    double m = c0_distance_fields(sys.field, f, sys.space, 512);
    for (std::size_t i = first; i < f.terms.size(); ++i) {
      Vec3 c = f.terms[i].center;
      m = std::max(m, norm(f.eval(sys.space, c) - sys.field.eval(sys.space, c)));
    }
    return m;
  };
  for (int pass = 0; pass < 3; ++pass) {
    double measured = measure();
    if (measured <= 0) break;
    double s = delta / measured;
    for (std::size_t i = first; i < f.terms.size(); ++i) f.terms[i].v = s * f.terms[i].v;
    if (std::abs(s - 1.0) < 1e-12) break;
  }
  ImpulsiveSystem out = sys;
  out.field = f;
  refresh_derived(out);
  return out;
}

inline PermanenceReport permanence_test(const ImpulsiveSystem& sys, const PeriodicOrbit& orbit,
                                        double delta, int trials, const std::string& mode,
                                        std::uint64_t seed, double survival_radius = 0.0,
                                        double refine_tol = 1e-6) {
  PermanenceReport rep;
  rep.mode = mode;
  rep.delta = delta;
  rep.trials = trials;
  rep.seed = seed;
  if (survival_radius <= 0) survival_radius = 10 * delta;
  Rng master(seed);
  for (int trial = 0; trial < trials; ++trial) {
    Rng sub = master.split(static_cast<std::uint64_t>(trial));
    ImpulsiveSystem perturbed = mode == "impulse" ? random_impulse_perturbation(sys, delta, sub)
                                                  : random_field_perturbation(sys, delta, sub);
    double disp = 0;
    if (orbit_survives(perturbed, orbit, survival_radius, refine_tol, &disp)) {
      ++rep.survivals;
      rep.worst_displacement = std::max(rep.worst_displacement, disp);
    }
  }
  return rep;
}

}  // namespace isflow
