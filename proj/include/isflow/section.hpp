#pragma once

#include <optional>
#include <string>
#include <vector>

#include "isflow/space.hpp"

namespace isflow {

enum class ChartKind { Affine, Latitude };

// A codimension-one cross-section patch, realized as a single chart.
//
// Affine charts cover planar patches in the box and the torus: the patch is
// { origin + u0*e0 + u1*e1 : u in rect }, with section function
// g(p) = <p - origin, normal> (wrapped on the torus so that a plane and its
// period images are detected consistently). Latitude charts cover circles of
// constant z on a sphere; the single chart coordinate is the longitude and
// the chart is periodic, so the patch has no boundary.
struct SectionPatch {
  std::string name;
  ChartKind chart = ChartKind::Affine;
  int chart_dim = 2;

  // affine chart
  Vec3 origin{0, 0, 0};
  Vec3 e0{1, 0, 0};
  Vec3 e1{0, 1, 0};
  Vec3 normal{0, 0, 1};
  Vec2 rect_lo{0, 0};
  Vec2 rect_hi{1, 1};
  bool wrap = false;          // torus: g is the wrapped normal coordinate
  double wrap_period = 1.0;   // period along the normal direction

  // latitude chart (sphere of radius R): circle z = z0
  double latitude_z = 0.0;
  double sphere_radius = 1.0;

  double margin = 0.0;                 // chart-coordinate width of the boundary band
  double transversality_floor = 0.0;   // minimum allowed |X . grad g|
  double off_section_tol = 1e-7;       // containment tolerance normal to the patch

  static SectionPatch affine(std::string name, const Vec3& origin, const Vec3& e0, const Vec3& e1,
                             const Vec2& rect_lo, const Vec2& rect_hi, double margin, double floor) {
    SectionPatch s;
    s.name = std::move(name);
    s.chart = ChartKind::Affine;
    s.chart_dim = 2;
    s.origin = origin;
    s.e0 = normalized(e0);
    s.e1 = normalized(e1);
    s.normal = normalized(cross(e0, e1));
    s.rect_lo = rect_lo;
    s.rect_hi = rect_hi;
    s.margin = margin;
    s.transversality_floor = floor;
    return s;
  }

  static SectionPatch latitude(std::string name, double z0, double sphere_radius, double floor) {
    SectionPatch s;
    s.name = std::move(name);
    s.chart = ChartKind::Latitude;
    s.chart_dim = 1;
    s.latitude_z = z0;
    s.sphere_radius = sphere_radius;
    s.rect_lo = {-M_PI, 0};
    s.rect_hi = {M_PI, 0};
    s.margin = 0.0;
    s.transversality_floor = floor;
    return s;
  }

  double ring_radius() const {
    return std::sqrt(std::max(0.0, sphere_radius * sphere_radius - latitude_z * latitude_z));
  }

  // Section function. Zero on the patch hypersurface; its sign change along a
  // trajectory is the hit detector.
  double g(const Vec3& p) const {
    if (chart == ChartKind::Latitude) return p[2] - latitude_z;
    double s = dot(p - origin, normal);
    return wrap ? wrap_signed(s, wrap_period) : s;
  }

  Vec3 grad_g(const Vec3&) const {
    if (chart == ChartKind::Latitude) return {0, 0, 1};
    return normal;
  }

  Vec3 chart_point(const Vec2& u) const {
    if (chart == ChartKind::Latitude) {
      double r = ring_radius();
      return {r * std::cos(u[0]), r * std::sin(u[0]), latitude_z};
    }
    return origin + u[0] * e0 + u[1] * e1;
  }

  // Inverse chart. Returns the chart coordinates when p lies on the patch
  // (within off-section tolerance normal to it and inside the rectangle);
  // nullopt otherwise.
  std::optional<Vec2> chart_coords(const AmbientSpace& space, const Vec3& p) const {
    if (chart == ChartKind::Latitude) {
      if (std::abs(p[2] - latitude_z) > off_section_tol + 1e-12) return std::nullopt;
      return Vec2{std::atan2(p[1], p[0]), 0.0};
    }
    Vec3 d = space.displacement(origin, p);
    Vec2 u{dot(d, e0), dot(d, e1)};
    double off = std::abs(dot(d, normal));
    if (off > off_section_tol) return std::nullopt;
    if (u[0] < rect_lo[0] - 1e-12 || u[0] > rect_hi[0] + 1e-12) return std::nullopt;
    if (chart_dim > 1 && (u[1] < rect_lo[1] - 1e-12 || u[1] > rect_hi[1] + 1e-12)) return std::nullopt;
    return u;
  }

  bool contains(const AmbientSpace& space, const Vec3& p) const { return chart_coords(space, p).has_value(); }

  // Interior test: chart coordinates at least `margin` away from the
  // rectangle boundary. Periodic charts have no boundary.
  bool interior_coords(const Vec2& u) const {
    if (chart == ChartKind::Latitude) return true;
    if (u[0] < rect_lo[0] + margin || u[0] > rect_hi[0] - margin) return false;
    if (chart_dim > 1 && (u[1] < rect_lo[1] + margin || u[1] > rect_hi[1] - margin)) return false;
    return true;
  }

  // Chart-space distance (longitude charts measure arc length on the ring).
  double chart_distance(const Vec2& a, const Vec2& b) const {
    if (chart == ChartKind::Latitude) return std::abs(wrap_signed(a[0] - b[0], 2 * M_PI)) * ring_radius();
    return norm(a - b);
  }

  Vec2 rect_size() const { return rect_hi - rect_lo; }

  double rect_diameter() const {
    if (chart == ChartKind::Latitude) return M_PI * ring_radius();
    return norm(rect_hi - rect_lo);
  }

  Vec2 rect_center() const {
    if (chart == ChartKind::Latitude) return {0.0, 0.0};
    return {0.5 * (rect_lo[0] + rect_hi[0]), 0.5 * (rect_lo[1] + rect_hi[1])};
  }

  bool in_rect(const Vec2& u, double slack = 0.0) const {
    if (chart == ChartKind::Latitude) return true;
    if (u[0] < rect_lo[0] - slack || u[0] > rect_hi[0] + slack) return false;
    if (chart_dim > 1 && (u[1] < rect_lo[1] - slack || u[1] > rect_hi[1] + slack)) return false;
    return true;
  }

  // Uniform sample grid of the chart rectangle (n per axis), optionally
  // shrunk to the interior. Used by the validator and distance routines.
  std::vector<Vec2> sample_grid(int n, bool interior_only = false) const {
    std::vector<Vec2> out;
    double m = interior_only ? margin : 0.0;
    if (chart == ChartKind::Latitude) {
      out.reserve(n);
      for (int i = 0; i < n; ++i) out.push_back({-M_PI + 2 * M_PI * (i + 0.5) / n, 0.0});
      return out;
    }
    out.reserve(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double a = (n == 1) ? 0.5 : static_cast<double>(i) / (n - 1);
        double b = (n == 1) ? 0.5 : static_cast<double>(j) / (n - 1);
        out.push_back({rect_lo[0] + m + a * (rect_hi[0] - rect_lo[0] - 2 * m),
                       rect_lo[1] + m + b * (rect_hi[1] - rect_lo[1] - 2 * m)});
      }
    return out;
  }
};

// Closed-form distance from an ambient point to the (closed) patch.
inline double section_distance(const AmbientSpace& space, const SectionPatch& sec, const Vec3& p) {
  if (sec.chart == ChartKind::Latitude) {
    double rr = sec.ring_radius();
    double rho = std::hypot(p[0], p[1]);
    return std::hypot(rho - rr, p[2] - sec.latitude_z);
  }
  Vec3 d = space.displacement(sec.origin, p);
  Vec2 u{dot(d, sec.e0), dot(d, sec.e1)};
  Vec2 uc{std::clamp(u[0], sec.rect_lo[0], sec.rect_hi[0]), std::clamp(u[1], sec.rect_lo[1], sec.rect_hi[1])};
  double off = dot(d, sec.normal);
  return std::sqrt(off * off + (u[0] - uc[0]) * (u[0] - uc[0]) + (u[1] - uc[1]) * (u[1] - uc[1]));
}

}  // namespace isflow
