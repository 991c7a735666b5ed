#pragma once

#include <cmath>
#include <vector>

#include "isflow/errors.hpp"
#include "isflow/section.hpp"

namespace isflow {

// C^1 bump profile on [0,1): value 1 at the center, 0 outside.
inline double bump_profile(double s) {
  if (s >= 1.0) return 0.0;
  double t = 1.0 - s * s;
  return t * t;
}

// max |d/ds (1-s^2)^2| = 8/(3*sqrt(3)), attained at s = 1/sqrt(3).
inline constexpr double kBumpProfileLip = 1.5396007178390020;

// max over s of bump_profile(s)*s (for radial contraction sup-norm bounds).
inline constexpr double kBumpProfileMaxRs = 0.28621670111997307;  // at s = 1/sqrt(5)

// max |d/ds (bump_profile(s)*s)| = 1, attained at s = 0.
inline constexpr double kRadialBumpLip = 1.0;

enum class BumpKind { Translate, RadialContraction };

// A compactly supported displacement on the landing chart. Translate bumps
// move points near `center` by up to `disp`; radial bumps contract toward
// `center` by factor (1 - strength) at the center.
struct ChartBump {
  BumpKind kind = BumpKind::Translate;
  Vec2 center{0, 0};
  double radius = 0.1;
  Vec2 disp{0, 0};       // Translate
  double strength = 0.0;  // RadialContraction

  Vec2 displacement(const Vec2& w) const {
    Vec2 d = w - center;
    double s = norm(d) / radius;
    if (s >= 1.0) return {0, 0};
    double rho = bump_profile(s);
    if (kind == BumpKind::Translate) return rho * disp;
    return (-strength * rho) * d;
  }

  // Lipschitz constant of the displacement field.
  double lipschitz() const {
    if (kind == BumpKind::Translate) return norm(disp) * kBumpProfileLip / radius;
    return strength * kRadialBumpLip;
  }

  // sup-norm of the displacement field
  double c0_size() const {
    if (kind == BumpKind::Translate) return norm(disp);
    return strength * kBumpProfileMaxRs * radius;
  }

  Vec2 apply(const Vec2& w) const { return w + displacement(w); }

  // invert w -> w + displacement(w) by fixed-point iteration (valid because
  // lipschitz() < 1)
  Vec2 invert(const Vec2& w_img, double tol, int max_iter) const {
    Vec2 w = w_img;
    for (int i = 0; i < max_iter; ++i) {
      Vec2 next = w_img - displacement(w);
      if (norm(next - w) <= tol) return next;
      w = next;
    }
    fail(ErrorKind::InverseDiverged, "bump inversion did not converge (corrupted impulse?)");
  }
};

// The impulse I : D -> Dhat. In chart coordinates it is an invertible affine
// base map followed by a finite sequence of compactly supported bumps, each
// with displacement Lipschitz constant < 1 so the composition is a
// homeomorphism onto its image. Bumps compose sequentially; appending a bump
// is exactly post-composition with one more chart homeomorphism.
struct Impulse {
  // base: w = A u + b (A restricted to the chart dimension; 1D charts use A[0])
  std::array<double, 4> A{1, 0, 0, 1};  // row-major 2x2
  Vec2 b{0, 0};
  int chart_dim = 2;
  std::vector<ChartBump> bumps;

  double inverse_tol = 1e-12;
  int inverse_max_iter = 200;

  static Impulse affine(const std::array<double, 4>& A, const Vec2& b, int chart_dim = 2) {
    Impulse i;
    i.A = A;
    i.b = b;
    i.chart_dim = chart_dim;
    return i;
  }

  Vec2 base_apply(const Vec2& u) const {
    if (chart_dim == 1) return {A[0] * u[0] + b[0], 0.0};
    return {A[0] * u[0] + A[1] * u[1] + b[0], A[2] * u[0] + A[3] * u[1] + b[1]};
  }

  Vec2 base_invert(const Vec2& w) const {
    if (chart_dim == 1) {
      if (A[0] == 0.0) fail(ErrorKind::NumericalFailure, "singular impulse base map");
      return {(w[0] - b[0]) / A[0], 0.0};
    }
    double det = A[0] * A[3] - A[1] * A[2];
    if (std::abs(det) < 1e-300) fail(ErrorKind::NumericalFailure, "singular impulse base map");
    double x = w[0] - b[0], y = w[1] - b[1];
    return {(A[3] * x - A[1] * y) / det, (-A[2] * x + A[0] * y) / det};
  }

  Vec2 apply_chart(const Vec2& u) const {
    Vec2 w = base_apply(u);
    for (const auto& bump : bumps) w = bump.apply(w);
    return w;
  }

  Vec2 invert_chart(const Vec2& w_img) const {
    Vec2 w = w_img;
    for (auto it = bumps.rbegin(); it != bumps.rend(); ++it) w = it->invert(w, inverse_tol, inverse_max_iter);
    return base_invert(w);
  }

  // Total displacement Lipschitz bound: 1 - prod(1 - L_i). Sequential bumps
  // with individual L_i < 1 give pairwise separation >= (1 - L) * d(p, p').
  double lipschitz_bound() const {
    double keep = 1.0;
    for (const auto& bump : bumps) {
      double li = bump.lipschitz();
      if (li >= 1.0) return 1.0;
      keep *= (1.0 - li);
    }
    return 1.0 - keep;
  }
};

// Forward image of a point of D.
inline Vec3 impulse_apply(const Impulse& I, const AmbientSpace& space, const SectionPatch& D,
                          const SectionPatch& Dhat, const Vec3& p) {
  auto u = D.chart_coords(space, p);
  if (!u) fail(ErrorKind::OutsidePatch, "impulse_apply: point is not on the patch " + D.name);
  return Dhat.chart_point(I.apply_chart(*u));
}

// Preimage of a point of I(D).
inline Vec3 impulse_inverse(const Impulse& I, const AmbientSpace& space, const SectionPatch& D,
                            const SectionPatch& Dhat, const Vec3& q) {
  auto w = Dhat.chart_coords(space, q);
  if (!w) fail(ErrorKind::OutsidePatch, "impulse_inverse: point is not on the patch " + Dhat.name);
  Vec2 u = I.invert_chart(*w);
  if (!D.in_rect(u, 1e-9 * (1.0 + D.rect_diameter())))
    fail(ErrorKind::OutsidePatch, "impulse_inverse: preimage falls outside the patch " + D.name);
  return D.chart_point(u);
}

}  // namespace isflow
