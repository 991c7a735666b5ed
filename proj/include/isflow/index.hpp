#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "isflow/errors.hpp"
#include "isflow/poincare.hpp"

namespace isflow {

// A continuous planar map on a chart neighborhood. Evaluation may throw when
// the underlying dynamics is undefined at a point (propagated to the caller).
struct ChartMap {
  std::function<Vec2(const Vec2&)> f;
};

enum class IndexCase { Disjoint, Degree };

struct IndexResult {
  int index = 0;
  double boundary_margin = 0;  // min over the boundary of ||f(x) - x||
  IndexCase kind = IndexCase::Degree;
  int samples_used = 0;
};

namespace detail {

// Winding number of x -> f(x) - x along a closed parameterized boundary
// curve, accumulated with adaptive refinement: any segment whose angle
// increment exceeds pi/2 is split until the budget runs out.
struct WindingAccumulator {
  const ChartMap& map;
  std::function<Vec2(double)> curve;  // s in [0,1] -> boundary point
  double min_margin = 1e300;
  int evals = 0;
  int max_evals = 200000;

  double angle_at(double s) {
    Vec2 x = curve(s);
    Vec2 d = map.f(x) - x;
    double n = norm(d);
    min_margin = std::min(min_margin, n);
    ++evals;
    return std::atan2(d[1], d[0]);
  }

  // accumulated angle over [s0, s1], given the endpoint angles
  double accumulate(double s0, double a0, double s1, double a1, int depth) {
    double da = std::remainder(a1 - a0, 2 * M_PI);
    if (std::abs(da) <= M_PI / 2) return da;
    if (depth > 40 || evals > max_evals)
      fail(ErrorKind::AngleJump, "winding refinement budget exceeded (map too wild at this scale)");
    double sm = 0.5 * (s0 + s1);
    double am = angle_at(sm);
    return accumulate(s0, a0, sm, am, depth + 1) + accumulate(sm, am, s1, a1, depth + 1);
  }

  double total(int n_coarse) {
    std::vector<double> s(static_cast<std::size_t>(n_coarse) + 1), a(s.size());
    for (int i = 0; i <= n_coarse; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(i) / n_coarse;
      a[static_cast<std::size_t>(i)] =
          (i == n_coarse) ? a[0] : angle_at(s[static_cast<std::size_t>(i)]);
    }
    double sum = 0;
    for (int i = 0; i < n_coarse; ++i)
      sum += accumulate(s[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(i)],
                        s[static_cast<std::size_t>(i + 1)], a[static_cast<std::size_t>(i + 1)], 0);
    return sum;
  }
};

inline double winding_number(const ChartMap& map, const std::function<Vec2(double)>& curve,
                             int n_coarse, double& min_margin, int& evals) {
  WindingAccumulator acc{map, curve};
  double total = acc.total(n_coarse);
  min_margin = acc.min_margin;
  evals = acc.evals;
  double turns = total / (2 * M_PI);
  if (std::abs(turns - std::round(turns)) > 1e-6 / (2 * M_PI) + 1e-9)
    fail(ErrorKind::NumericalFailure, "winding total is not an integer multiple of 2 pi");
  return turns;
}

}  // namespace detail

// Fixed-point index of f over the closed ball B(center, radius): 0 when
// f(B) and B are disjoint, otherwise the degree of (f(x)-x)/||f(x)-x|| on
// the boundary circle. Requires no fixed point on the boundary.
inline IndexResult fixed_point_index(const ChartMap& map, const Vec2& center, double radius,
                                     int n_boundary = 64) {
  auto circle = [&](double s) -> Vec2 {
    double a = 2 * M_PI * s;
    return {center[0] + radius * std::cos(a), center[1] + radius * std::sin(a)};
  };

  // boundary margin first: the index is undefined with a fixed point on dB
  double margin = 1e300;
  for (int i = 0; i < n_boundary; ++i) {
    Vec2 x = circle(static_cast<double>(i) / n_boundary);
    margin = std::min(margin, norm(map.f(x) - x));
  }
  if (margin <= 1e-7 * radius)
    fail(ErrorKind::FixedPointOnBoundary, "fixed point on the boundary (margin " + std::to_string(margin) + ")");

  IndexResult res;
  res.samples_used = n_boundary;

  // disjointness: sample the closed ball on a polar grid; if every image is
  // strictly outside the ball, case (1) applies and the index is 0
  {
    bool disjoint = true;
    int n_r = 8, n_a = 16;
    for (int ir = 0; ir <= n_r && disjoint; ++ir)
      for (int ia = 0; ia < n_a && disjoint; ++ia) {
        double r = radius * ir / n_r;
        double a = 2 * M_PI * ia / n_a;
        Vec2 x{center[0] + r * std::cos(a), center[1] + r * std::sin(a)};
        Vec2 y = map.f(x);
        if (norm(y - center) <= radius) disjoint = false;
        res.samples_used++;
      }
    if (disjoint) {
      res.kind = IndexCase::Disjoint;
      res.index = 0;
      res.boundary_margin = margin;
      return res;
    }
  }

  double min_margin;
  int evals;
  double turns = detail::winding_number(map, circle, n_boundary, min_margin, evals);
  res.kind = IndexCase::Degree;
  res.index = static_cast<int>(std::lround(turns));
  res.boundary_margin = std::min(margin, min_margin);
  res.samples_used += evals;
  return res;
}

// Stability margin of the index: any g with sup-distance below this on the
// boundary has the same index (property (P2)).
inline double index_stability_margin(const ChartMap& map, const Vec2& center, double radius,
                                     int n_boundary = 256) {
  IndexResult r = fixed_point_index(map, center, radius, n_boundary);
  return r.boundary_margin;
}

namespace detail {

inline double rect_winding(const ChartMap& map, const Vec2& lo, const Vec2& hi, double& margin,
                           bool& ok) {
  auto boundary = [&](double s) -> Vec2 {
    double t = s * 4;
    double w = hi[0] - lo[0], h = hi[1] - lo[1];
    if (t < 1) return {lo[0] + w * t, lo[1]};
    if (t < 2) return {hi[0], lo[1] + h * (t - 1)};
    if (t < 3) return {hi[0] - w * (t - 2), hi[1]};
    return {lo[0], hi[1] - h * (t - 3)};
  };
  margin = 1e300;
  ok = true;
  int evals;
  try {
    return winding_number(map, boundary, 32, margin, evals);
  } catch (const Error&) {
    ok = false;
    return 0;
  }
}

}  // namespace detail

// Property (P3) realized: recursive quadtree localization of a fixed point in
// a ball of nonzero index. Sub-boxes keep their place in the queue when their
// boundary winding is nonzero or undecidable at the current scale.
inline std::optional<Vec2> locate_fixed_point(const ChartMap& map, const Vec2& center, double radius,
                                              int depth = 40, double tol = 1e-6) {
  struct Box {
    Vec2 lo, hi;
  };
  std::vector<Box> queue{{{center[0] - radius, center[1] - radius}, {center[0] + radius, center[1] + radius}}};
  Vec2 best{center};
  double best_res = norm(map.f(center) - center);
  if (best_res <= tol) return best;

  for (int d = 0; d < depth && !queue.empty(); ++d) {
    std::vector<Box> next;
    for (const Box& b : queue) {
      Vec2 mid{0.5 * (b.lo[0] + b.hi[0]), 0.5 * (b.lo[1] + b.hi[1])};
      double res = norm(map.f(mid) - mid);
      if (res < best_res) {
        best_res = res;
        best = mid;
      }
      if (best_res <= tol) return best;
      Vec2 corners[4][2] = {{b.lo, mid},
                            {{mid[0], b.lo[1]}, {b.hi[0], mid[1]}},
                            {{b.lo[0], mid[1]}, {mid[0], b.hi[1]}},
                            {mid, b.hi}};
      for (auto& c : corners) {
        double margin;
        bool ok;
        double w = detail::rect_winding(map, c[0], c[1], margin, ok);
        bool keep = !ok || margin <= 1e-9 || std::lround(w) != 0;
        if (keep) next.push_back({c[0], c[1]});
      }
    }
    // keep the queue from exploding on degenerate maps
    if (next.size() > 64) next.resize(64);
    queue = std::move(next);
  }
  if (best_res <= tol) return best;
  return std::nullopt;
}

// Index of a periodic orbit: wrap its return map in chart coordinates and
// compute the fixed-point index around the representative. Only
// 2-dimensional section charts are supported (ambient dimension 3).
inline int index_of_orbit(const ImpulsiveSystem& sys, const PeriodicOrbit& orbit, double radius,
                          int n_boundary = 64) {
  const SectionPatch& sec = orbit.crossings >= 1 ? sys.Dhat : orbit.free_section.value();
  if (sec.chart_dim != 2)
    fail(ErrorKind::DimensionUnsupported, "index_of_orbit requires a 2-dimensional section chart");
  auto u0 = sec.chart_coords(sys.space, orbit.representative);
  if (!u0) fail(ErrorKind::OutsidePatch, "orbit representative is not on its section");

  ChartMap map;
  if (orbit.crossings >= 1) {
    map.f = [&sys, k = orbit.crossings](const Vec2& u) -> Vec2 {
      MapResult r = poincare_hat_k(sys, sys.Dhat.chart_point(u), k);
      if (r.status != MapStatus::Ok)
        fail(ErrorKind::NumericalFailure, "return map undefined on the index ball");
      return r.chart;
    };
  } else {
    map.f = [&sys, &sec](const Vec2& u) -> Vec2 {
      MapResult r = return_map(sys, sec, sec.chart_point(u), 1);
      if (r.status != MapStatus::Ok)
        fail(ErrorKind::NumericalFailure, "return map undefined on the index ball");
      return r.chart;
    };
  }
  return fixed_point_index(map, *u0, radius, n_boundary).index;
}

}  // namespace isflow
