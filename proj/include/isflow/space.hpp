#pragma once

#include <cmath>

#include "isflow/errors.hpp"
#include "isflow/rng.hpp"
#include "isflow/vec.hpp"

namespace isflow {

enum class SpaceKind { EuclideanBox, FlatTorus, ImplicitSurface };

// Signed representative of x modulo period in [-period/2, period/2).
inline double wrap_signed(double x, double period) {
  double r = std::remainder(x, period);
  if (r >= period / 2) r -= period;  // remainder may return exactly +period/2
  return r;
}

// Representative of x modulo period in [0, period).
inline double wrap_positive(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0) r += period;
  return r;
}

// The ambient space M. Three kinds are supported: an axis-aligned box in
// R^3, a flat torus R^3 / (periods Z^3), and an implicit surface (the unit
// sphere family |p| = radius). Points are always stored as R^3 coordinates.
struct AmbientSpace {
  SpaceKind kind = SpaceKind::EuclideanBox;
  int dim = 3;  // manifold dimension: 3 for box/torus, 2 for a surface

  Vec3 box_lo{-1, -1, -1};
  Vec3 box_hi{1, 1, 1};
  Vec3 periods{1, 1, 1};
  double surface_radius = 1.0;
  double surface_tol = 1e-9;

  static AmbientSpace euclidean_box(const Vec3& lo, const Vec3& hi) {
    AmbientSpace s;
    s.kind = SpaceKind::EuclideanBox;
    s.dim = 3;
    s.box_lo = lo;
    s.box_hi = hi;
    return s;
  }

  static AmbientSpace flat_torus(const Vec3& periods) {
    AmbientSpace s;
    s.kind = SpaceKind::FlatTorus;
    s.dim = 3;
    s.periods = periods;
    return s;
  }

  static AmbientSpace sphere(double radius) {
    AmbientSpace s;
    s.kind = SpaceKind::ImplicitSurface;
    s.dim = 2;
    s.surface_radius = radius;
    return s;
  }

  // Minimal displacement vector from a to b (torus-aware).
  Vec3 displacement(const Vec3& a, const Vec3& b) const {
    Vec3 d = b - a;
    if (kind == SpaceKind::FlatTorus) {
      for (int i = 0; i < 3; ++i) d[i] = wrap_signed(d[i], periods[i]);
    }
    return d;
  }

  double distance(const Vec3& a, const Vec3& b) const { return norm(displacement(a, b)); }

  // Reduce a point into the fundamental domain (torus) / onto the surface.
  Vec3 canonical(const Vec3& p) const {
    switch (kind) {
      case SpaceKind::FlatTorus: {
        Vec3 q;
        for (int i = 0; i < 3; ++i) q[i] = wrap_positive(p[i], periods[i]);
        return q;
      }
      case SpaceKind::ImplicitSurface:
        return project(p);
      default:
        return p;
    }
  }

  // Surface constraint g_M and its gradient (implicit-surface kind).
  double surface_g(const Vec3& p) const { return norm(p) - surface_radius; }
  Vec3 surface_grad(const Vec3& p) const { return normalized(p); }

  Vec3 project(const Vec3& p) const {
    double n = norm(p);
    if (n == 0.0) fail(ErrorKind::NumericalFailure, "cannot project the origin onto the sphere");
    return (surface_radius / n) * p;
  }

  bool in_domain(const Vec3& p, double slack = 0.0) const {
    if (kind != SpaceKind::EuclideanBox) return true;
    for (int i = 0; i < 3; ++i)
      if (p[i] < box_lo[i] - slack || p[i] > box_hi[i] + slack) return false;
    return true;
  }

  double diameter() const {
    switch (kind) {
      case SpaceKind::EuclideanBox:
        return norm(box_hi - box_lo);
      case SpaceKind::FlatTorus:
        return 0.5 * norm(periods);
      default:
        return 2.0 * surface_radius;
    }
  }

  // Deterministic low-discrepancy sample of the domain. For nested i the
  // sample set grows monotonically.
  Vec3 sample(std::uint64_t i) const {
    double u = halton(i, 2), v = halton(i, 3), w = halton(i, 5);
    switch (kind) {
      case SpaceKind::EuclideanBox:
        return {box_lo[0] + u * (box_hi[0] - box_lo[0]), box_lo[1] + v * (box_hi[1] - box_lo[1]),
                box_lo[2] + w * (box_hi[2] - box_lo[2])};
      case SpaceKind::FlatTorus:
        return {u * periods[0], v * periods[1], w * periods[2]};
      default: {
        // area-uniform on the sphere
        double z = 2.0 * u - 1.0;
        double th = 2.0 * M_PI * v;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        return {surface_radius * r * std::cos(th), surface_radius * r * std::sin(th), surface_radius * z};
      }
    }
  }
};

}  // namespace isflow
