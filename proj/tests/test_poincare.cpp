#include <catch2/catch_amalgamated.hpp>

#include "isflow/poincare.hpp"
#include "isflow/systems.hpp"

using namespace isflow;

TEST_CASE("poincare_hat on S1a") {
  ImpulsiveSystem sys = builtin_system("S1a");

  SECTION("every landing point is a fixed point with flight 3pi/2") {
    MapResult r = poincare_hat(sys, {0, 2, 0});
    REQUIRE(r.status == MapStatus::Ok);
    CHECK(norm(r.point - Vec3{0, 2, 0}) <= 1e-7);
    CHECK(r.flight == Catch::Approx(3 * M_PI / 2).margin(1e-6));
  }

  SECTION("points off the patch violate the precondition") {
    CHECK_THROWS_AS(poincare_hat(sys, {0, 0.9, 0}), Error);
  }

  SECTION("landing in the margin band is a BoundaryLanding") {
    MapResult r = poincare_hat(sys, {0, 1.52, 0});
    CHECK(r.status == MapStatus::BoundaryLanding);
  }
}

TEST_CASE("poincare_hat on S2 matches the scan oracle") {
  ImpulsiveSystem sys = builtin_system("S2");
  MapResult r = poincare_hat(sys, {0.5, 0.2, 0.2});
  REQUIRE(r.status == MapStatus::Ok);
  CHECK(r.flight == Catch::Approx(3.5).margin(1e-7));
  // the image is I(0, y', z') = (0.5, y', z') with the scanned window entry
  double y = std::fmod(0.2 + std::sqrt(2.0) * 3.5, 1.0);
  double z = std::fmod(0.2 + std::sqrt(3.0) * 3.5, 1.0);
  CHECK(sys.space.distance(r.point, {0.5, y, z}) <= 1e-7);
}

TEST_CASE("poincare_D is the conjugate by the impulse") {
  SECTION("S1a: f is the identity on D") {
    ImpulsiveSystem sys = builtin_system("S1a");
    MapResult r = poincare_D(sys, {2.2, 0, 0.1});
    REQUIRE(r.status == MapStatus::Ok);
    CHECK(norm(r.point - Vec3{2.2, 0, 0.1}) <= 1e-7);
  }

  SECTION("conjugacy identity I o f = P o I on sampled points") {
    for (const char* name : {"S1a", "S2"}) {
      ImpulsiveSystem sys = builtin_system(name);
      int checked = 0;
      for (const auto& u : sys.D.sample_grid(10, true)) {
        Vec3 x = sys.D.chart_point(u);
        MapResult f = poincare_D(sys, x);
        MapResult P = poincare_hat(sys, sys.apply_impulse(x));
        if (f.status != MapStatus::Ok || P.status != MapStatus::Ok) continue;
        CHECK(sys.space.distance(sys.apply_impulse(f.point), P.point) <= 1e-7);
        ++checked;
      }
      INFO(name);
      CHECK(checked >= 50);
    }
  }
}

TEST_CASE("return map on a free section") {
  ImpulsiveSystem sys = builtin_system("S1a");
  // sigma: a half-plane patch the loop crosses once per period. The loop
  // covers theta in [pi/2, 2pi], so place sigma at theta = 3pi/4.
  double c = std::cos(3 * M_PI / 4), s = std::sin(3 * M_PI / 4);
  SectionPatch sigma = SectionPatch::affine("sigma", {0, 0, 0}, {c, s, 0}, {0, 0, 1}, {1.6, -0.4},
                                            {2.4, 0.4}, 0.02, 0.5);
  sigma.normal = {-s, c, 0};

  SECTION("the periodic loop returns to itself through one crossing") {
    Vec3 x = sigma.chart_point({2.0, 0.0});
    MapResult r = return_map(sys, sigma, x, 1);
    REQUIRE(r.status == MapStatus::Ok);
    CHECK(sys.space.distance(r.point, x) <= 1e-6);
    CHECK(r.flight == Catch::Approx(3 * M_PI / 2).margin(1e-5));
  }

  SECTION("plain circle: identity with return time 2 pi") {
    SectionPatch sig2 = SectionPatch::affine("sigma2", {0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.5, -0.4},
                                             {1.4, 0.4}, 0.02, 0.3);
    sig2.normal = {1, 0, 0};
    Vec3 x = sig2.chart_point({0.9, 0.0});
    MapResult r = return_map(sys, sig2, x, 1);
    REQUIRE(r.status == MapStatus::Ok);
    CHECK(sys.space.distance(r.point, x) <= 1e-7);
    CHECK(r.flight == Catch::Approx(2 * M_PI).margin(1e-6));
  }

  SECTION("n_crossings = 2 is the square of the map") {
    Vec3 x = sigma.chart_point({1.9, 0.1});
    MapResult one = return_map(sys, sigma, x, 1);
    REQUIRE(one.status == MapStatus::Ok);
    MapResult two_steps = return_map(sys, sigma, one.point, 1);
    REQUIRE(two_steps.status == MapStatus::Ok);
    MapResult two = return_map(sys, sigma, x, 2);
    REQUIRE(two.status == MapStatus::Ok);
    CHECK(sys.space.distance(two.point, two_steps.point) <= 1e-7);
    CHECK(two.flight == Catch::Approx(one.flight + two_steps.flight).margin(1e-6));
  }
}

TEST_CASE("find_periodic_orbit") {
  SECTION("S1a: any guess is (near) a fixed point") {
    ImpulsiveSystem sys = builtin_system("S1a");
    auto orb = find_periodic_orbit(sys, {0, 2.1, 0.1}, 1, 1e-9);
    REQUIRE(orb.has_value());
    CHECK(norm(orb->representative - Vec3{0, 2.1, 0.1}) <= 1e-6);
    CHECK(orb->period == Catch::Approx(3 * M_PI / 2).margin(1e-6));
    CHECK(orb->residual <= 1e-9);
    CHECK(orb->crossings == 1);
  }

  SECTION("S2 unperturbed: no orbit near a generic guess") {
    ImpulsiveSystem sys = builtin_system("S2");
    // oracle: a fixed point of P^k needs sqrt2*T and sqrt3*T both integral,
    // impossible for T > 0; the minimum residual over all half-integer T
    // up to 60 stays well above the refinement tolerance
    double min_res = 1e300;
    for (int half = 1; half <= 120; ++half) {
      double T = 0.5 * half;
      double ry = std::abs(wrap_signed(std::sqrt(2.0) * T, 1.0));
      double rz = std::abs(wrap_signed(std::sqrt(3.0) * T, 1.0));
      min_res = std::min(min_res, std::hypot(ry, rz));
    }
    CHECK(min_res > 1e-2);
    for (int k : {1, 2}) {
      auto orb = find_periodic_orbit(sys, {0.5, 0.25, 0.25}, k, 1e-9, 25, 60.0);
      CHECK_FALSE(orb.has_value());
    }
  }
}

TEST_CASE("periodic_orbits_up_to on S1a") {
  ImpulsiveSystem sys = builtin_system("S1a");

  SECTION("t_bound 5 reports the period-3pi/2 family") {
    auto orbits = periodic_orbits_up_to(sys, 5.0, 9, 1e-9, 1e-4);
    REQUIRE(!orbits.empty());
    for (const auto& o : orbits) {
      CHECK(o.period == Catch::Approx(3 * M_PI / 2).margin(1e-6));
      CHECK(o.crossings == 1);
      CHECK(o.family);
    }
    // distinct fixed points are kept, not collapsed
    CHECK(orbits.size() >= 50);
  }

  SECTION("t_bound 4 is empty") {
    auto orbits = periodic_orbits_up_to(sys, 4.0, 5, 1e-9, 1e-4);
    CHECK(orbits.empty());
  }

  SECTION("Per_t is monotone in t") {
    auto small = periodic_orbits_up_to(sys, 4.9, 5, 1e-9, 1e-4);
    auto large = periodic_orbits_up_to(sys, 7.0, 5, 1e-9, 1e-4);
    for (const auto& o : small) {
      bool found = false;
      for (const auto& p : large)
        if (norm(o.representative - p.representative) <= 1e-4) found = true;
      CHECK(found);
    }
  }
}

TEST_CASE("periodic_orbits_up_to on unperturbed S2 is empty") {
  ImpulsiveSystem sys = builtin_system("S2");
  auto orbits = periodic_orbits_up_to(sys, 20.0, 10, 1e-8, 1e-4);
  CHECK(orbits.empty());
}

TEST_CASE("local homeomorphism of the Poincare map") {
  // injectivity and bounded modulus of continuity on a sampled disk of the
  // interior-landing domain
  ImpulsiveSystem sys = builtin_system("S1a");
  Rng rng(23);
  Vec2 center{2.0, 0.0};
  double radius = 0.3;
  std::vector<std::pair<Vec2, Vec2>> pairs;
  for (int i = 0; i < 500; ++i) {
    double a = rng.uniform(0, 2 * M_PI), r1 = radius * std::sqrt(rng.uniform());
    double b = rng.uniform(0, 2 * M_PI), r2 = radius * std::sqrt(rng.uniform());
    Vec2 u{center[0] + r1 * std::cos(a), center[1] + r1 * std::sin(a)};
    Vec2 v{center[0] + r2 * std::cos(b), center[1] + r2 * std::sin(b)};
    if (norm(u - v) < 1e-6) continue;
    MapResult mu = poincare_hat(sys, sys.Dhat.chart_point(u));
    MapResult mv = poincare_hat(sys, sys.Dhat.chart_point(v));
    if (mu.status != MapStatus::Ok || mv.status != MapStatus::Ok) continue;
    pairs.emplace_back(mu.chart - mv.chart, u - v);
  }
  REQUIRE(pairs.size() >= 400);
  double max_ratio = 0;
  for (const auto& [img, pre] : pairs) {
    CHECK(norm(img) > 0);  // injective
    max_ratio = std::max(max_ratio, norm(img) / norm(pre));
  }
  CHECK(max_ratio <= 10.0);  // bounded modulus of continuity at this scale
}
