#pragma once

#include <string>
#include <vector>

#include "isflow/field.hpp"
#include "isflow/impulse.hpp"
#include "isflow/section.hpp"
#include "isflow/space.hpp"

namespace isflow {

struct Tolerances {
  double integration = 1e-9;     // stepper atol = rtol
  double event_time = 1e-8;      // hit-time bisection width
  double impulse_inverse = 1e-10;
  double section = 1e-9;         // |g| band counted as "on the section"
  double h_max = 0.5;
  double scan_dt = 0.05;         // event-scan spacing on dense output
  double horizon = 200.0;        // finite stand-in for tau = +infinity
  double singularity_floor = 1e-3;
  double singularity_radius = 0.05;
};

struct PerturbationRecord {
  std::string mode;   // "impulse" or "field"
  double c0_size = 0;
  std::string description;
  std::uint64_t seed = 0;
};

// The tuple (M, phi, D, I): ambient space, vector field, impulsive region D,
// landing patch Dhat, impulse map, and the numerical tolerances.
struct ImpulsiveSystem {
  std::string name;
  AmbientSpace space;
  VectorFieldSpec field;
  SectionPatch D;
  SectionPatch Dhat;
  Impulse impulse;
  Tolerances tol;
  std::uint64_t seed = 0;
  std::vector<PerturbationRecord> records;

  // Minimal distance between the sampled patches D and I(D); the travel-time
  // bound dist(D, Dhat)/||X||_inf and every burn-in derives from it.
  double section_separation = 0;

  Vec3 field_at(const Vec3& p) const { return field.eval(space, p); }

  double min_flight_time() const { return section_separation / std::max(field.sup_norm, 1e-12); }
  double burn_in() const { return 0.5 * min_flight_time(); }

  Vec3 apply_impulse(const Vec3& p) const { return impulse_apply(impulse, space, D, Dhat, p); }
  Vec3 invert_impulse(const Vec3& q) const { return impulse_inverse(impulse, space, D, Dhat, q); }
};

// max( sup_a dist(a, B), sup_b dist(b, A) )
inline double hausdorff_distance(const std::vector<Vec3>& A, const std::vector<Vec3>& B,
                                 const AmbientSpace& space) {
  if (A.empty() || B.empty()) fail(ErrorKind::BadParameter, "hausdorff_distance: empty input set");
  auto one_sided = [&](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sup = 0;
    for (const auto& a : from) {
      double inf = 1e300;
      for (const auto& b : to) inf = std::min(inf, space.distance(a, b));
      sup = std::max(sup, inf);
    }
    return sup;
  };
  return std::max(one_sided(A, B), one_sided(B, A));
}

// min over pairs; the separation used by the travel-time bound.
inline double separation_distance(const std::vector<Vec3>& A, const std::vector<Vec3>& B,
                                  const AmbientSpace& space) {
  if (A.empty() || B.empty()) fail(ErrorKind::BadParameter, "separation_distance: empty input set");
  double inf = 1e300;
  for (const auto& a : A)
    for (const auto& b : B) inf = std::min(inf, space.distance(a, b));
  return inf;
}

inline std::vector<Vec3> patch_points(const SectionPatch& sec, int n) {
  std::vector<Vec3> pts;
  for (const auto& u : sec.sample_grid(n)) pts.push_back(sec.chart_point(u));
  return pts;
}

struct ValidationCheck {
  std::string name;
  bool pass = false;
  double value = 0;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  bool verdict = false;

  void add(const std::string& name, bool pass, double value) { checks.push_back({name, pass, value}); }
  void finish() {
    verdict = true;
    for (const auto& c : checks) verdict = verdict && c.pass;
  }
};

// Standing-hypothesis checks: (a) no equilibrium of X near the closure of D,
// (b) transversality of both patches, (c) Hausdorff distance D vs I(D) > 0,
// (d) impulse displacement Lipschitz bound < 1, (e) landing separation
// (min distance D vs I(D), which also certifies I(D) cap D = empty).
// Failures are reported, never thrown.
inline ValidationReport validate_system(const ImpulsiveSystem& sys, int n_samples) {
  ValidationReport rep;
  int n = std::max(2, static_cast<int>(std::round(std::sqrt(static_cast<double>(n_samples)))));

  // (a) hypothesis (H): min ||X|| over a neighborhood of the closure of D.
  // A singular point within the exclusion radius of a sample would force
  // ||X(sample)|| <= L * radius, so the threshold scales with the Lipschitz
  // estimate of the field.
  {
    double min_speed = 1e300;
    for (const auto& u : sys.D.sample_grid(n)) {
      Vec3 p = sys.D.chart_point(u);
      Vec3 nrm = sys.D.grad_g(p);
      for (int k = -1; k <= 1; ++k) {
        Vec3 q = p + (sys.tol.singularity_radius * k) * nrm;
        if (sys.space.kind == SpaceKind::ImplicitSurface) q = sys.space.project(q);
        min_speed = std::min(min_speed, norm(sys.field_at(q)));
      }
    }
    double threshold = std::max(sys.tol.singularity_floor,
                                sys.field.lipschitz_est * sys.tol.singularity_radius);
    rep.add("hypothesis_H_no_singularity_near_D", min_speed > threshold, min_speed);
  }

  // (b) transversality on D and Dhat
  for (const SectionPatch* sec : {&sys.D, &sys.Dhat}) {
    double min_tr = 1e300;
    for (const auto& u : sec->sample_grid(n)) {
      Vec3 p = sec->chart_point(u);
      min_tr = std::min(min_tr, std::abs(dot(sys.field_at(p), sec->grad_g(p))));
    }
    rep.add("transversality_" + sec->name, min_tr >= sec->transversality_floor, min_tr);
  }

  // image of D under the impulse
  std::vector<Vec3> D_pts = patch_points(sys.D, n);
  std::vector<Vec3> I_pts;
  bool image_ok = true;
  for (const auto& u : sys.D.sample_grid(n)) {
    Vec2 w = sys.impulse.apply_chart(u);
    image_ok = image_ok && sys.Dhat.in_rect(w, 1e-9 * (1.0 + sys.Dhat.rect_diameter()));
    I_pts.push_back(sys.Dhat.chart_point(w));
  }
  rep.add("impulse_image_in_landing_patch", image_ok, image_ok ? 1.0 : 0.0);

  // (c) Hausdorff distance between D and I(D)
  double dh = hausdorff_distance(D_pts, I_pts, sys.space);
  rep.add("hausdorff_D_vs_ID_positive", dh > 0, dh);

  // (d) impulse injectivity: displacement Lipschitz bound < 1
  double lip = sys.impulse.lipschitz_bound();
  rep.add("impulse_lipschitz_bound", lip < 1.0, lip);

  // (e) landing separation: min distance > 0 certifies I(D) cap D = empty
  double sep = separation_distance(D_pts, I_pts, sys.space);
  rep.add("landing_separation", sep > 0, sep);

  rep.finish();
  return rep;
}

// Fill the cached separation and field sup-norm. Call after construction and
// after any perturbation is installed.
inline void refresh_derived(ImpulsiveSystem& sys, int n_sep_samples = 40) {
  std::vector<Vec3> D_pts = patch_points(sys.D, n_sep_samples);
  std::vector<Vec3> I_pts;
  for (const auto& u : sys.D.sample_grid(n_sep_samples)) I_pts.push_back(sys.Dhat.chart_point(sys.impulse.apply_chart(u)));
  sys.section_separation = separation_distance(D_pts, I_pts, sys.space);
  // conservative sup-norm: analytic base + triangle-inequality perturbation bound
  double base = 0;
  switch (sys.field.kind) {
    case FieldKind::CylinderRotation: {
      double rx = std::max(std::abs(sys.space.box_lo[0]), std::abs(sys.space.box_hi[0]));
      double ry = std::max(std::abs(sys.space.box_lo[1]), std::abs(sys.space.box_hi[1]));
      base = std::hypot(rx, ry);
      break;
    }
    case FieldKind::TorusConstant:
      base = norm(sys.field.constant_velocity);
      break;
    case FieldKind::NorthSouthSphere:
      base = sys.space.surface_radius;  // |X| = sqrt(1 - z^2) <= 1 on the unit sphere
      break;
    case FieldKind::Polynomial: {
      for (int i = 0; i < 4096; ++i) base = std::max(base, norm(sys.field.base_eval(sys.space.sample(i))));
      base *= 1.1;
      break;
    }
  }
  sys.field.sup_norm = base + sys.field.perturbation_c0_bound(sys.space);
  // sampled Lipschitz estimate via finite differences
  double lip = 0;
  for (int i = 0; i < 256; ++i) {
    Vec3 p = sys.space.sample(i);
    Vec3 xp = sys.field.eval(sys.space, p);
    for (int a = 0; a < 3; ++a) {
      Vec3 q = p;
      q[a] += 1e-4;
      if (sys.space.kind == SpaceKind::ImplicitSurface) q = sys.space.project(q);
      double d = sys.space.distance(p, q);
      if (d > 1e-12) lip = std::max(lip, norm(sys.field.eval(sys.space, q) - xp) / d);
    }
  }
  sys.field.lipschitz_est = lip;
}

}  // namespace isflow
