#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "isflow/impulse.hpp"
#include "isflow/integrate.hpp"
#include "isflow/space.hpp"

namespace isflow {

enum class FieldKind { CylinderRotation, TorusConstant, NorthSouthSphere, Polynomial };

struct PolyTerm {
  double coef = 0;
  std::array<int, 3> powers{0, 0, 0};
};

// Smooth 0->1 ramp.
inline double smoothstep01(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * (3.0 - 2.0 * s);
}

// Longitudinal gate of a steering tube: 0 at the ends, 1 on the plateau.
inline double tube_gate(double s, double len, double ramp) {
  if (s <= 0.0 || s >= len) return 0.0;
  return std::min(smoothstep01(s / ramp), smoothstep01((len - s) / ramp));
}

// Transversal gate: 1 inside (2/3)r, 0 outside r.
inline double tube_transversal_gate(double rho, double radius) {
  double core = radius * (2.0 / 3.0);
  if (rho <= core) return 1.0;
  if (rho >= radius) return 0.0;
  return smoothstep01((radius - rho) / (radius - core));
}

enum class PerturbKind { Constant, Radial, BallBump, TubeSteer, TubeContraction };

// One sample of a tube's reference curve: time offset, point, unit tangent,
// speed, and one transported transversal frame vector (the second frame
// vector is tangent x f1).
struct TubeSample {
  double s;
  Vec3 c;
  Vec3 tangent;
  double speed;
  Vec3 f1;
};

// Additive perturbation term of a vector field. Tube terms live along a flow
// segment of the field they were installed on; the segment is rebuilt
// deterministically from (anchor, duration) when a config is loaded, so a
// PerturbationRecord reconstructs the perturbed field bit-identically.
struct PerturbTerm {
  PerturbKind kind = PerturbKind::Constant;

  Vec3 v{0, 0, 0};        // Constant: added vector; BallBump: amplitude vector
  double coef = 0;        // Radial: v += coef*(x, y, 0)
  Vec3 center{0, 0, 0};   // BallBump
  double radius = 0.1;    // BallBump / tube transversal radius

  // tubes
  Vec3 anchor{0, 0, 0};
  double duration = 1.0;
  Vec2 steer{0, 0};   // TubeSteer: coefficients on the transported frame
  double eta = 0.0;   // TubeContraction strength parameter
  double gate_ramp = 0.15;  // TubeSteer ramp fraction

  // rebuilt cache (not serialized)
  std::vector<TubeSample> curve;
  Vec3 bbox_lo{0, 0, 0}, bbox_hi{0, 0, 0};

  bool is_tube() const { return kind == PerturbKind::TubeSteer || kind == PerturbKind::TubeContraction; }

  double sup_norm() const {
    switch (kind) {
      case PerturbKind::Constant:
        return norm(v);
      case PerturbKind::BallBump:
        return norm(v);
      case PerturbKind::TubeSteer:
        return norm(steer);
      case PerturbKind::TubeContraction:
        return eta * eta * radius;
      default:
        return 0.0;  // Radial depends on the domain; handled by the caller
    }
  }
};

// A Lipschitz vector field on the ambient space: a builtin (or polynomial)
// base plus an ordered list of additive perturbation terms. Terms are applied
// cumulatively: each tube's reference curve is a flow segment of the field
// consisting of the base and all *earlier* terms.
struct VectorFieldSpec {
  FieldKind kind = FieldKind::CylinderRotation;
  std::array<std::vector<PolyTerm>, 3> poly;  // Polynomial components
  Vec3 constant_velocity{1, 0, 0};            // TorusConstant
  std::vector<PerturbTerm> terms;

  double sup_norm = 1.0;        // ||X||_inf over the domain (analytic or sampled)
  double lipschitz_est = 1.0;   // sampled estimate, reported only

  Vec3 base_eval(const Vec3& p) const {
    switch (kind) {
      case FieldKind::CylinderRotation:
        return {-p[1], p[0], 0.0};
      case FieldKind::TorusConstant:
        return constant_velocity;
      case FieldKind::NorthSouthSphere:
        return {p[0] * p[2], p[1] * p[2], -(p[0] * p[0] + p[1] * p[1])};
      case FieldKind::Polynomial: {
        Vec3 out{0, 0, 0};
        for (int c = 0; c < 3; ++c)
          for (const auto& t : poly[c]) {
            double m = t.coef;
            for (int a = 0; a < 3; ++a)
              for (int k = 0; k < t.powers[a]; ++k) m *= p[a];
            out[c] += m;
          }
        return out;
      }
    }
    return {0, 0, 0};
  }

  Vec3 term_eval(const PerturbTerm& t, const AmbientSpace& space, const Vec3& p) const {
    switch (t.kind) {
      case PerturbKind::Constant:
        return t.v;
      case PerturbKind::Radial:
        return {t.coef * p[0], t.coef * p[1], 0.0};
      case PerturbKind::BallBump: {
        double d = norm(space.displacement(t.center, p));
        if (d >= t.radius) return {0, 0, 0};
        return bump_profile(d / t.radius) * t.v;
      }
      case PerturbKind::TubeSteer:
      case PerturbKind::TubeContraction:
        return tube_eval(t, space, p);
    }
    return {0, 0, 0};
  }

  Vec3 eval(const AmbientSpace& space, const Vec3& p) const {
    Vec3 out = base_eval(p);
    for (const auto& t : terms) out += term_eval(t, space, p);
    if (space.kind == SpaceKind::ImplicitSurface && !terms.empty()) {
      // keep perturbed fields tangent to the surface
      Vec3 n = space.surface_grad(p);
      out = out - dot(out, n) * n;
    }
    return out;
  }

  // Total sup-norm of all perturbation terms (triangle-inequality bound).
  double perturbation_c0_bound(const AmbientSpace& space) const {
    double s = 0;
    for (const auto& t : terms) {
      if (t.kind == PerturbKind::Radial) {
        double rmax = 0;
        if (space.kind == SpaceKind::EuclideanBox)
          rmax = std::hypot(std::max(std::abs(space.box_lo[0]), std::abs(space.box_hi[0])),
                            std::max(std::abs(space.box_lo[1]), std::abs(space.box_hi[1])));
        else
          rmax = space.diameter();
        s += std::abs(t.coef) * rmax;
      } else {
        s += t.sup_norm();
      }
    }
    return s;
  }

  // Build tube caches for terms [from, end). Each curve is the flow segment
  // of the field made of the base plus terms before it.
  void build_tube_caches(const AmbientSpace& space, std::size_t from = 0) {
    for (std::size_t i = from; i < terms.size(); ++i) {
      if (terms[i].is_tube()) build_one_tube(space, i);
    }
  }

 private:
  Vec3 tube_eval(const PerturbTerm& t, const AmbientSpace& space, const Vec3& p) const {
    // fast reject on the (slightly inflated) bounding box of the support
    for (int i = 0; i < 3; ++i) {
      if (space.kind == SpaceKind::FlatTorus) {
        double d = std::abs(wrap_signed(p[i] - 0.5 * (t.bbox_lo[i] + t.bbox_hi[i]), space.periods[i]));
        if (d > 0.5 * (t.bbox_hi[i] - t.bbox_lo[i])) return {0, 0, 0};
      } else {
        if (p[i] < t.bbox_lo[i] || p[i] > t.bbox_hi[i]) return {0, 0, 0};
      }
    }
    // nearest curve sample: coarse pass with a stride, then a local fine pass
    const std::size_t n = t.curve.size();
    const std::size_t stride = 16;
    std::size_t coarse = 0;
    double best_d2 = 1e300;
    for (std::size_t i = 0; i < n; i += stride) {
      Vec3 d = space.displacement(t.curve[i].c, p);
      double d2 = dot(d, d);
      if (d2 < best_d2) {
        best_d2 = d2;
        coarse = i;
      }
    }
    {
      Vec3 d = space.displacement(t.curve[n - 1].c, p);
      if (dot(d, d) < best_d2) {
        best_d2 = dot(d, d);
        coarse = n - 1;
      }
    }
    std::size_t lo = coarse > 2 * stride ? coarse - 2 * stride : 0;
    std::size_t hi = std::min(n - 1, coarse + 2 * stride);
    std::size_t best = coarse;
    for (std::size_t i = lo; i <= hi; ++i) {
      Vec3 d = space.displacement(t.curve[i].c, p);
      double d2 = dot(d, d);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    // refine the curve point between samples: local quadratic Taylor model
    // C(dt) = c + v dt + a dt^2/2 and two Newton steps on (x - C).C' = 0,
    // so the perturbation vanishes on the reference orbit to high order
    const TubeSample& cs = t.curve[best];
    Vec3 v = cs.speed * cs.tangent;
    Vec3 acc{0, 0, 0};
    {
      std::size_t im = best > 0 ? best - 1 : best;
      std::size_t ip = best + 1 < n ? best + 1 : best;
      if (ip > im) {
        Vec3 vm = t.curve[im].speed * t.curve[im].tangent;
        Vec3 vp = t.curve[ip].speed * t.curve[ip].tangent;
        acc = (1.0 / (t.curve[ip].s - t.curve[im].s)) * (vp - vm);
      }
    }
    double dt = 0;
    Vec3 cpt = cs.c;
    Vec3 cdot = v;
    for (int it = 0; it < 2; ++it) {
      cpt = cs.c + dt * v + (0.5 * dt * dt) * acc;
      cdot = v + dt * acc;
      Vec3 diff = space.displacement(cpt, p);
      double num = dot(diff, cdot);
      double den = -dot(cdot, cdot) + dot(diff, acc);
      if (std::abs(den) < 1e-300) break;
      dt -= num / den;
      dt = std::clamp(dt, -0.01, 0.01);
    }
    cpt = cs.c + dt * v + (0.5 * dt * dt) * acc;
    cdot = v + dt * acc;
    Vec3 tangent = normalized(cdot);
    Vec3 offset = space.displacement(cpt, p);
    Vec3 perp = offset - dot(offset, tangent) * tangent;
    double rho = norm(perp);
    if (rho >= t.radius) return {0, 0, 0};
    double s = cs.s + dt + dot(offset, tangent) / std::max(cs.speed, 1e-12);
    double beta = tube_transversal_gate(rho, t.radius);
    if (t.kind == PerturbKind::TubeSteer) {
      double alpha = tube_gate(s, t.duration, t.gate_ramp * t.duration);
      if (alpha <= 0.0 || beta <= 0.0) return {0, 0, 0};
      Vec3 f2 = cross(cs.tangent, cs.f1);
      return (alpha * beta) * (t.steer[0] * cs.f1 + t.steer[1] * f2);
    }
    // contraction: transversal decay at rate eta^2 on the plateau
    double alpha = contraction_gate(s, t.duration, t.eta);
    if (alpha <= 0.0 || beta <= 0.0) return {0, 0, 0};
    return (-t.eta * t.eta * alpha * beta) * perp;
  }

  // 0 on [0,eta] and [len-eta,len], 1 on [2 eta, len - 2 eta], smooth ramps.
  static double contraction_gate(double s, double len, double eta) {
    if (s <= eta || s >= len - eta) return 0.0;
    double up = smoothstep01((s - eta) / eta);
    double down = smoothstep01((len - eta - s) / eta);
    return std::min({up, down, 1.0});
  }

  void build_one_tube(const AmbientSpace& space, std::size_t idx) {
    PerturbTerm& t = terms[idx];
    VectorFieldSpec prior = *this;
    prior.terms.assign(terms.begin(), terms.begin() + static_cast<std::ptrdiff_t>(idx));
    auto rhs = [&](const Vec3& y) { return prior.eval(space, y); };

    StepperOptions opt;
    opt.tol = 1e-12;
    opt.h_max = 0.01;  // fixed fine resolution: the cache must be reproducible
    opt.h_init = 0.01;
    Dopri5<decltype(rhs)> stepper(rhs, t.anchor, 0.0, opt);

    t.curve.clear();
    const double ds = 0.005;
    double next_s = 0.0;
    Vec3 f1{0, 0, 0};
    DenseStep dense;
    double t_end = t.duration;
    auto push_sample = [&](double s, const Vec3& c) {
      Vec3 vel = prior.eval(space, c);
      double speed = norm(vel);
      Vec3 tan = (1.0 / std::max(speed, 1e-300)) * vel;
      if (t.curve.empty()) {
        // pick the axis least aligned with the tangent, Gram-Schmidt it
        int axis = 0;
        double best = std::abs(tan[0]);
        for (int a = 1; a < 3; ++a)
          if (std::abs(tan[a]) < best) {
            best = std::abs(tan[a]);
            axis = a;
          }
        Vec3 e{0, 0, 0};
        e[axis] = 1.0;
        f1 = normalized(e - dot(e, tan) * tan);
      } else {
        f1 = normalized(f1 - dot(f1, tan) * tan);
      }
      t.curve.push_back({s, c, tan, speed, f1});
    };
    push_sample(0.0, t.anchor);
    next_s = ds;
    while (stepper.t() < t_end - 1e-12) {
      stepper.step(dense);
      double hi = std::min(dense.t1, t_end);
      while (next_s <= hi + 1e-12 && next_s <= t_end) {
        Vec3 c = dense.eval(std::min(next_s, dense.t1));
        if (space.kind == SpaceKind::ImplicitSurface) c = space.project(c);
        push_sample(next_s, c);
        next_s += ds;
      }
      if (dense.t1 >= t_end) break;
    }
    // bounding box of the support, inflated by the transversal radius
    Vec3 lo = t.curve.front().c, hi = t.curve.front().c;
    for (const auto& cs : t.curve)
      for (int i = 0; i < 3; ++i) {
        lo[i] = std::min(lo[i], cs.c[i]);
        hi[i] = std::max(hi[i], cs.c[i]);
      }
    double pad = t.radius * 1.05 + 2 * ds;
    for (int i = 0; i < 3; ++i) {
      t.bbox_lo[i] = lo[i] - pad;
      t.bbox_hi[i] = hi[i] + pad;
    }
  }
};

// ||X - Y||_C0 over a deterministic low-discrepancy sample of the domain.
inline double c0_distance_fields(const VectorFieldSpec& X, const VectorFieldSpec& Y,
                                 const AmbientSpace& space, int n_samples) {
  double m = 0;
  for (int i = 0; i < n_samples; ++i) {
    Vec3 p = space.sample(static_cast<std::uint64_t>(i));
    m = std::max(m, norm(X.eval(space, p) - Y.eval(space, p)));
  }
  return m;
}

}  // namespace isflow
