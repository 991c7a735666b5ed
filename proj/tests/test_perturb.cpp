#include <catch2/catch_amalgamated.hpp>

#include "isflow/perturb.hpp"
#include "isflow/systems.hpp"

using namespace isflow;

TEST_CASE("c0 distance between impulses") {
  ImpulsiveSystem sys = builtin_system("S1a");

  SECTION("identical impulses") {
    CHECK(c0_distance_impulses(sys.impulse, sys.impulse, sys, 400) == 0.0);
  }

  SECTION("one translate bump of displacement v gives ||v||") {
    Impulse J = sys.impulse;
    // center the bump on a grid node so the sampled sup is attained exactly
    Vec2 c = sys.impulse.base_apply({2.0, 0.0});
    J.bumps.push_back({BumpKind::Translate, c, 0.2, {0.07, 0.0}, 0.0});
    CHECK(c0_distance_impulses(sys.impulse, J, sys, 441) == Catch::Approx(0.07));
  }
}

TEST_CASE("closing_impulse") {
  SECTION("S1a: any target is already periodic, J = I") {
    ImpulsiveSystem sys = builtin_system("S1a");
    ImpulseClosing r = closing_impulse(sys, {0, 2.0, 0.1}, 0.05);
    CHECK(r.status == ClosingStatus::AlreadyPeriodic);
    CHECK(r.impulse.bumps.empty());
    CHECK(r.record.c0_size == 0.0);
  }

  SECTION("eps larger than the patch is rejected") {
    ImpulsiveSystem sys = builtin_system("S2");
    CHECK_THROWS_AS(closing_impulse(sys, {0.5, 0.2, 0.2}, 5.0), Error);
  }

  SECTION("closing on the sphere is disabled (dim D-hat = 1)") {
    ImpulsiveSystem sys = builtin_system("S3");
    CHECK_THROWS_AS(closing_impulse(sys, sys.Dhat.chart_point({0.3, 0}), 0.05), Error);
  }

  SECTION("S2: a recurrent target closes with a verified orbit") {
    ImpulsiveSystem sys = builtin_system("S2");
    Vec3 p = sys.Dhat.chart_point({0.25, 0.25});
    ImpulseClosing r = closing_impulse(sys, p, 0.05);
    REQUIRE(r.status == ClosingStatus::Ok);
    CHECK(r.c0_size < 0.05);
    CHECK(c0_distance_impulses(sys.impulse, r.impulse, sys, 900) < 0.05);
    CHECK(r.orbit.residual <= 1e-5);
    CHECK(r.orbit.crossings == r.recurrence_length);
    CHECK(sys.space.distance(r.orbit.representative, p) <= 0.05);
    // the intermediate iterates of the chain stay fixed under zeta
    REQUIRE(r.impulse.bumps.size() == 1);
    const ChartBump& b = r.impulse.bumps.back();
    Vec2 u = *sys.Dhat.chart_coords(sys.space, r.periodic_point);
    for (int i = 0; i + 1 < r.recurrence_length; ++i) {
      detail::HatStep s = detail::hat_step(sys, u);
      REQUIRE(s.ok);
      u = s.chart;
      CHECK(norm(u - b.center) >= b.radius);  // outside the bump support
    }
  }
}

TEST_CASE("closing_field") {
  SECTION("precondition: singular targets are rejected") {
    ImpulsiveSystem sys = builtin_system("S1a");
    CHECK_THROWS_AS(closing_field(sys, {0, 0, 0.2}, 0.05), Error);
  }

  SECTION("an already periodic target returns the identity perturbation") {
    ImpulsiveSystem sys = builtin_system("S1a");
    FieldClosingOptions opt;
    opt.search_horizon = 40.0;
    FieldClosing r = closing_field(sys, {0, 2, 0}, 0.05, opt);
    CHECK(r.status == ClosingStatus::AlreadyPeriodic);
    CHECK(r.field.terms.empty());
  }

  SECTION("S2: a dense-orbit target acquires a verified periodic orbit") {
    ImpulsiveSystem sys = builtin_system("S2");
    Vec3 p{0.75, 0.6, 0.9};  // away from both patches
    FieldClosing r = closing_field(sys, p, 0.05);
    INFO(r.failure);
    REQUIRE(r.status == ClosingStatus::Ok);
    CHECK(r.c0_size < 0.05);
    CHECK(r.orbit.residual <= 1e-5);
    std::vector<Vec3> samples;
    {
      ImpulsiveSystem sys2 = sys;
      sys2.field = r.field;
      refresh_derived(sys2);
      samples = orbit_samples(sys2, r.orbit, 0.02);
    }
    CHECK(point_to_orbit_distance(sys, samples, p) <= 0.05);
    // the perturbation is supported away from D and Dhat
    for (const auto& t : r.field.terms) {
      for (const auto& cs : t.curve) {
        CHECK(section_distance(sys.space, sys.D, sys.space.canonical(cs.c)) > t.radius);
        CHECK(section_distance(sys.space, sys.Dhat, sys.space.canonical(cs.c)) > t.radius);
      }
    }
    // the field is unchanged outside the tube support
    int checked = 0;
    for (int i = 0; i < 500 && checked < 100; ++i) {
      Vec3 q = sys.space.sample(i);
      bool inside = false;
      for (const auto& t : r.field.terms)
        for (const auto& cs : t.curve)
          if (sys.space.distance(q, sys.space.canonical(cs.c)) < t.radius * 1.5) inside = true;
      if (inside) continue;
      CHECK(norm(sys.field.eval(sys.space, q) - r.field.eval(sys.space, q)) == 0.0);
      ++checked;
    }
    REQUIRE(checked >= 50);
  }
}

TEST_CASE("attractify") {
  ImpulsiveSystem sys = builtin_system("S1a");
  auto orb = find_periodic_orbit(sys, {0, 2, 0}, 1, 1e-9);
  REQUIRE(orb.has_value());

  SECTION("eta = 0 leaves the field and the identity ratio") {
    AttractifyResult r = attractify(sys, *orb, 0.0);
    REQUIRE(r.ok);
    CHECK(r.field.terms.empty());
    CHECK(r.contraction_ratio == Catch::Approx(1.0).margin(1e-5));
  }

  SECTION("eta = 0.2 turns the identity into a contraction with ratio <= 0.9") {
    AttractifyResult r = attractify(sys, *orb, 0.2);
    INFO(r.failure);
    REQUIRE(r.ok);
    CHECK(r.contraction_ratio <= 0.9);
    CHECK(r.contraction_ratio > 0.5);
    // measured C0 size respects the declared bound C * eta^2
    CHECK(r.c0_size <= r.c0_per_eta2 * 0.2 * 0.2 + 1e-12);
    ImpulsiveSystem sys2 = sys;
    sys2.field = r.field;
    refresh_derived(sys2);
    double measured = c0_distance_fields(sys.field, r.field, sys.space, 4000);
    CHECK(measured <= r.c0_per_eta2 * 0.2 * 0.2 + 1e-9);
    // the orbit itself is preserved
    CHECK(sys.space.distance(r.orbit.representative, orb->representative) <= 1e-6);
    CHECK(r.orbit.period == Catch::Approx(orb->period).margin(1e-6));
    CHECK(r.orbit.classification == "attracting");
    // and acquires index 1
    CHECK(index_of_orbit(sys2, r.orbit, 0.02) == 1);
  }
}

TEST_CASE("attractify_impulse") {
  ImpulsiveSystem sys = builtin_system("S1a");
  auto orb = find_periodic_orbit(sys, {0, 2, 0}, 1, 1e-9);
  REQUIRE(orb.has_value());

  SECTION("eta = 0 is the identity") {
    AttractifyImpulseResult r = attractify_impulse(sys, *orb, 0.0);
    REQUIRE(r.ok);
    CHECK(r.impulse.bumps.empty());
  }

  SECTION("eta = 0.1 contracts the identity family locally") {
    AttractifyImpulseResult r = attractify_impulse(sys, *orb, 0.1);
    INFO(r.failure);
    REQUIRE(r.ok);
    CHECK(r.contraction_ratio <= 0.9);
    CHECK(r.c0_size <= 0.1);
    ImpulsiveSystem sys2 = sys;
    sys2.impulse = r.impulse;
    refresh_derived(sys2);
    CHECK(c0_distance_impulses(sys.impulse, r.impulse, sys, 2500) <= 0.1 + 1e-12);
    CHECK(index_of_orbit(sys2, r.orbit, 0.02) == 1);
  }
}

TEST_CASE("permanence") {
  SECTION("S1b plain circle survives impulse perturbations untouched") {
    ImpulsiveSystem sys = builtin_system("S1b");
    // the circle of radius 1 crosses the Dhat patch but never reaches D
    SectionPatch sigma = SectionPatch::affine("sigma", {0, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.6, -0.4},
                                              {1.4, 0.4}, 0.02, 0.3);
    sigma.normal = {1, 0, 0};
    auto orb = find_plain_orbit(sys, sigma, {0, 1.0, 0.0}, 1e-9);
    REQUIRE(orb.has_value());
    CHECK(orb->crossings == 0);
    CHECK(orb->period == Catch::Approx(2 * M_PI).margin(1e-6));
    PermanenceReport rep = permanence_test(sys, *orb, 0.02, 10, "impulse", 7);
    CHECK(rep.survivals == 10);
    CHECK(rep.worst_displacement == 0.0);
  }

  SECTION("attractified S1a orbit survives sub-margin field perturbations") {
    ImpulsiveSystem sys = builtin_system("S1a");
    auto orb = find_periodic_orbit(sys, {0, 2, 0}, 1, 1e-9);
    REQUIRE(orb.has_value());
    AttractifyResult att = attractify(sys, *orb, 0.2);
    REQUIRE(att.ok);
    ImpulsiveSystem sys2 = sys;
    sys2.field = att.field;
    refresh_derived(sys2);
    double margin = (1.0 - att.contraction_ratio) * 0.01;  // contraction margin over a 0.01 ball
    PermanenceReport rep = permanence_test(sys2, att.orbit, 0.1 * margin, 10, "field", 11);
    CHECK(rep.survivals == 10);
  }

  SECTION("the un-attractified S1a family dies under radial damping") {
    ImpulsiveSystem sys = builtin_system("S1a");
    auto orb = find_periodic_orbit(sys, {0, 2, 0}, 1, 1e-9);
    REQUIRE(orb.has_value());
    ImpulsiveSystem damped = sys;
    PerturbTerm t;
    t.kind = PerturbKind::Radial;
    t.coef = -0.01;
    damped.field.terms.push_back(t);
    refresh_derived(damped);
    // no periodic orbit within 0.5 of the representative: every D-hat seed
    // inside that ball fails to refine
    for (const auto& u : damped.Dhat.sample_grid(5, true)) {
      Vec3 seed = damped.Dhat.chart_point(u);
      if (damped.space.distance(seed, orb->representative) > 0.5) continue;
      auto got = find_periodic_orbit(damped, seed, 1, 1e-6, 40);
      CHECK_FALSE(got.has_value());
    }
    CHECK_FALSE(orbit_survives(damped, *orb, 0.5, 1e-6));
  }
}
