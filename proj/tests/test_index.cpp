#include <catch2/catch_amalgamated.hpp>

#include "isflow/index.hpp"
#include "isflow/rng.hpp"
#include "isflow/systems.hpp"

using namespace isflow;

namespace {

ChartMap contraction() { return {[](const Vec2& u) -> Vec2 { return {u[0] / 2, u[1] / 2}; }}; }
ChartMap translation() { return {[](const Vec2& u) -> Vec2 { return {u[0] + 10, u[1]}; }}; }
ChartMap saddle() { return {[](const Vec2& u) -> Vec2 { return {2 * u[0], u[1] / 2}; }}; }

}  // namespace

TEST_CASE("fixed point index of the three canonical maps") {
  SECTION("contraction: one positive turn of -x/||x||") {
    // dense-sampled angle accumulation oracle: gamma(a) = -(cos a, sin a)
    // advances by exactly 2 pi over one traversal
    double acc = 0, prev = std::atan2(-std::sin(0.0), -std::cos(0.0));
    for (int i = 1; i <= 4096; ++i) {
      double a = 2 * M_PI * i / 4096;
      double ang = std::atan2(-std::sin(a), -std::cos(a));
      acc += std::remainder(ang - prev, 2 * M_PI);
      prev = ang;
    }
    REQUIRE(acc == Catch::Approx(2 * M_PI).margin(1e-9));

    IndexResult r = fixed_point_index(contraction(), {0, 0}, 1.0);
    CHECK(r.index == 1);
    CHECK(r.kind == IndexCase::Degree);
    CHECK(r.boundary_margin == Catch::Approx(0.5).margin(1e-6));
  }

  SECTION("disjoint image: index 0 by definition case (1)") {
    IndexResult r = fixed_point_index(translation(), {0, 0}, 1.0);
    CHECK(r.index == 0);
    CHECK(r.kind == IndexCase::Disjoint);
    CHECK(r.boundary_margin >= 9.0);
  }

  SECTION("saddle: one negative turn") {
    // oracle: gamma(a) = (cos a, -sin a / 2)/||.|| retreats by 2 pi
    double acc = 0, prev = std::atan2(-std::sin(0.0) / 2, std::cos(0.0));
    for (int i = 1; i <= 4096; ++i) {
      double a = 2 * M_PI * i / 4096;
      double ang = std::atan2(-std::sin(a) / 2, std::cos(a));
      acc += std::remainder(ang - prev, 2 * M_PI);
      prev = ang;
    }
    REQUIRE(acc == Catch::Approx(-2 * M_PI).margin(1e-9));

    IndexResult r = fixed_point_index(saddle(), {0, 0}, 1.0);
    CHECK(r.index == -1);
    CHECK(r.boundary_margin == Catch::Approx(0.5).margin(1e-6));
  }

  SECTION("fixed point on the boundary is rejected") {
    ChartMap id{[](const Vec2& u) { return u; }};
    CHECK_THROWS_AS(fixed_point_index(id, {0, 0}, 1.0), Error);
  }
}

TEST_CASE("index stability margin and (P2)") {
  Rng rng(7);
  auto perturbed = [&](const ChartMap& base, double size, std::uint64_t stream) {
    Rng r = rng.split(stream);
    double a1 = r.uniform(-1, 1), a2 = r.uniform(-1, 1), p1 = r.uniform(0, 2 * M_PI),
           p2 = r.uniform(0, 2 * M_PI), w1 = r.uniform(0.5, 3), w2 = r.uniform(0.5, 3);
    auto f = base.f;
    return ChartMap{[=](const Vec2& u) -> Vec2 {
      Vec2 v = f(u);
      double bump1 = a1 * std::sin(w1 * u[0] + p1), bump2 = a2 * std::cos(w2 * u[1] + p2);
      double scale = size / (std::abs(a1) + std::abs(a2) + 1e-9);
      return {v[0] + scale * bump1, v[1] + scale * bump2};
    }};
  };

  int cs = 0;
  for (const auto& [map, want] :
       std::vector<std::pair<ChartMap, int>>{{contraction(), 1}, {translation(), 0}, {saddle(), -1}}) {
    double m = index_stability_margin(map, {0, 0}, 1.0);
    REQUIRE(m > 0);
    for (int trial = 0; trial < 20; ++trial) {
      ChartMap g = perturbed(map, m / 2 * 0.9, static_cast<std::uint64_t>(100 * cs + trial));
      IndexResult rg = fixed_point_index(g, {0, 0}, 1.0);
      CHECK(rg.index == want);
    }
    ++cs;
  }
}

TEST_CASE("locate_fixed_point realizes (P3)") {
  SECTION("contraction locates the origin") {
    auto p = locate_fixed_point(contraction(), {0, 0}, 1.0);
    REQUIRE(p.has_value());
    CHECK(norm(*p) <= 2e-6);
  }

  SECTION("saddle locates the origin") {
    auto p = locate_fixed_point(saddle(), {0, 0}, 1.0);
    REQUIRE(p.has_value());
    Vec2 img = saddle().f(*p);
    CHECK(norm(img - *p) <= 1e-6);
  }

  SECTION("shifted contraction locates (0.6, 0)") {
    ChartMap f{[](const Vec2& u) -> Vec2 { return {u[0] / 2 + 0.3, u[1] / 2}; }};
    auto p = locate_fixed_point(f, {0, 0}, 1.0);
    REQUIRE(p.has_value());
    CHECK(std::abs((*p)[0] - 0.6) <= 1e-5);
    CHECK(std::abs((*p)[1]) <= 1e-5);
    CHECK(norm(f.f(*p) - *p) <= 1e-6);
  }
}

TEST_CASE("additivity over disjoint balls") {
  // v = (x^2 - 0.25, -y) vanishes at (+-0.5, 0); f = id + v has index -1 at
  // +0.5 and +1 at -0.5, and the union ball sees the sum
  ChartMap f{[](const Vec2& u) -> Vec2 { return {u[0] + u[0] * u[0] - 0.25, u[1] - u[1]}; }};
  IndexResult plus = fixed_point_index(f, {0.5, 0}, 0.3);
  IndexResult minus = fixed_point_index(f, {-0.5, 0}, 0.3);
  IndexResult both = fixed_point_index(f, {0, 0}, 1.2);
  CHECK(plus.index == -1);
  CHECK(minus.index == 1);
  CHECK(both.index == plus.index + minus.index);
}

TEST_CASE("index_of_orbit") {
  SECTION("S1a identity family has no well-defined index") {
    ImpulsiveSystem sys = builtin_system("S1a");
    auto orb = find_periodic_orbit(sys, {0, 2, 0}, 1, 1e-9);
    REQUIRE(orb.has_value());
    CHECK_THROWS_AS(index_of_orbit(sys, *orb, 0.05), Error);
  }

  SECTION("dimension guard: 1-dimensional charts are unsupported") {
    ImpulsiveSystem s3 = builtin_system("S3");
    PeriodicOrbit orb;
    orb.representative = s3.Dhat.chart_point({0.3, 0});
    orb.period = 1.0;
    orb.crossings = 1;
    CHECK_THROWS_AS(index_of_orbit(s3, orb, 0.05), Error);
  }
}
