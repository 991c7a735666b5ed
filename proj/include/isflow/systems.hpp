#pragma once

#include <cmath>
#include <string>

#include "isflow/system.hpp"

namespace isflow {

// Builtin example systems.
//
//  S1a - rotation field (-y, x, 0) on the box [-3,3]^3; D is the half-plane
//        patch {(x,0,z): x in [1.5,2.5], |z| <= 0.5}, Dhat its quarter-turn
//        image {(0,y,z)}; the impulse is the quarter turn (x,0,z) -> (0,x,z).
//        Every Dhat point is a fixed point of the Poincare map.
//  S1b - same field and D; Dhat = {(0,y,z): y in [0.5,1.5]} meets the unit
//        cylinder, impulse (x,0,z) -> (0,x-1,z). Circles of radius in (0.5,1.5)
//        pass through Dhat but never reach D.
//  S2  - minimal linear flow (1, sqrt2, sqrt3) on the 3-torus; D and Dhat are
//        parallel patches {x=0} and {x=0.5} over (y,z) in [0.1,0.4]^2, the
//        impulse identifies them.
//  S3  - north-pole source / south-pole sink field on the unit sphere; D is
//        the equator circle, Dhat its backward-time-1 latitude z = tanh(1),
//        the impulse shifts latitude and preserves longitude.
inline ImpulsiveSystem builtin_system(const std::string& name) {
  ImpulsiveSystem sys;
  sys.name = name;

  if (name == "S1a" || name == "S1b") {
    sys.space = AmbientSpace::euclidean_box({-3, -3, -3}, {3, 3, 3});
    sys.field.kind = FieldKind::CylinderRotation;
    sys.D = SectionPatch::affine("D", {0, 0, 0}, {1, 0, 0}, {0, 0, 1}, {1.5, -0.5}, {2.5, 0.5},
                                 /*margin=*/0.05, /*floor=*/0.5);
    sys.D.normal = {0, 1, 0};  // g = y; orient so X.grad g > 0 at the hits
    if (name == "S1a") {
      sys.Dhat = SectionPatch::affine("Dhat", {0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1.5, -0.5}, {2.5, 0.5},
                                      0.05, 0.5);
      sys.impulse = Impulse::affine({1, 0, 0, 1}, {0, 0});
    } else {
      sys.Dhat = SectionPatch::affine("Dhat", {0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.5, -0.5}, {1.5, 0.5},
                                      0.05, 0.3);
      sys.impulse = Impulse::affine({1, 0, 0, 1}, {-1, 0});
    }
    sys.Dhat.normal = {1, 0, 0};  // g = x
    sys.tol.integration = 1e-12;
    sys.tol.event_time = 1e-10;
    sys.tol.h_max = 0.1;
    sys.tol.scan_dt = 0.05;
    sys.tol.horizon = 200.0;
  } else if (name == "S2") {
    sys.space = AmbientSpace::flat_torus({1, 1, 1});
    sys.field.kind = FieldKind::TorusConstant;
    sys.field.constant_velocity = {1.0, std::sqrt(2.0), std::sqrt(3.0)};
    sys.D = SectionPatch::affine("D", {0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.1, 0.1}, {0.4, 0.4},
                                 /*margin=*/0.02, /*floor=*/0.5);
    sys.D.normal = {1, 0, 0};
    sys.D.wrap = true;
    sys.D.wrap_period = 1.0;
    sys.Dhat = SectionPatch::affine("Dhat", {0.5, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.1, 0.1}, {0.4, 0.4},
                                    0.02, 0.5);
    sys.Dhat.normal = {1, 0, 0};
    sys.Dhat.wrap = true;
    sys.Dhat.wrap_period = 1.0;
    sys.impulse = Impulse::affine({1, 0, 0, 1}, {0, 0});
    sys.tol.integration = 1e-10;
    sys.tol.event_time = 1e-10;
    sys.tol.h_max = 0.25;
    sys.tol.scan_dt = 0.05;
    sys.tol.horizon = 500.0;
  } else if (name == "S3") {
    sys.space = AmbientSpace::sphere(1.0);
    sys.field.kind = FieldKind::NorthSouthSphere;
    double z_hat = std::tanh(1.0);  // backward-time-1 image of the equator
    sys.D = SectionPatch::latitude("D", 0.0, 1.0, /*floor=*/0.5);
    sys.Dhat = SectionPatch::latitude("Dhat", z_hat, 1.0, /*floor=*/0.2);
    sys.impulse = Impulse::affine({1, 0, 0, 1}, {0, 0}, /*chart_dim=*/1);
    sys.impulse.chart_dim = 1;
    sys.tol.integration = 1e-10;
    sys.tol.event_time = 1e-9;
    sys.tol.h_max = 0.1;
    sys.tol.scan_dt = 0.05;
    sys.tol.horizon = 50.0;
  } else {
    fail(ErrorKind::BadParameter, "unknown builtin system: " + name);
  }

  refresh_derived(sys);
  return sys;
}

}  // namespace isflow
