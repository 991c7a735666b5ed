#include <catch2/catch_amalgamated.hpp>

#include "isflow/systems.hpp"
#include "isflow/trajectory.hpp"

using namespace isflow;

TEST_CASE("S1a impulsive trajectory") {
  ImpulsiveSystem sys = builtin_system("S1a");
  Trajectory traj = impulsive_trajectory(sys, {0, 2, 0}, 10.0);

  SECTION("events at 3pi/2 and 3pi with the quarter-turn jump") {
    REQUIRE(traj.events.size() == 2);
    CHECK(traj.events[0].tau == Catch::Approx(3 * M_PI / 2).margin(1e-6));
    CHECK(traj.events[1].tau == Catch::Approx(3 * M_PI).margin(1e-6));
    for (const auto& e : traj.events) {
      CHECK(norm(e.pre - Vec3{2, 0, 0}) <= 1e-6);
      CHECK(norm(e.post - Vec3{0, 2, 0}) <= 1e-6);
      CHECK(e.interior);
    }
    auto taus = impulsive_times(traj);
    REQUIRE(taus.size() == 2);
    CHECK(taus[0] < taus[1]);
  }

  SECTION("evaluate: convention at events, flow between them") {
    CHECK(norm(trajectory_evaluate(traj, sys, 0.0) - Vec3{0, 2, 0}) == 0.0);
    CHECK(norm(trajectory_evaluate(traj, sys, M_PI / 2) - Vec3{-2, 0, 0}) <= 1e-6);
    // at t = tau_1 the value is the post-impulse point
    CHECK(norm(trajectory_evaluate(traj, sys, traj.events[0].tau) - Vec3{0, 2, 0}) <= 1e-8);
    CHECK_THROWS_AS(trajectory_evaluate(traj, sys, 11.0), Error);
  }

  SECTION("event consistency and travel-time bound") {
    for (const auto& e : traj.events) {
      CHECK(std::abs(sys.D.g(e.pre)) <= sys.tol.section);
      CHECK(norm(e.post - sys.apply_impulse(e.pre)) <= 1e-8);
    }
    double bound = sys.min_flight_time();
    CHECK(traj.events[1].tau - traj.events[0].tau >= bound);
  }

  SECTION("arc samples strictly between events avoid D") {
    for (const auto& arc : traj.arcs) {
      for (const auto& s : arc.samples) {
        if (s.t <= arc.t0 + 1e-9 || s.t >= arc.t1 - 1e-9) continue;
        Vec3 p = sys.space.canonical(s.y);
        bool on_D = std::abs(sys.D.g(p)) <= sys.tol.section && sys.D.contains(sys.space, p);
        CHECK_FALSE(on_D);
      }
    }
  }
}

TEST_CASE("trajectories without events") {
  ImpulsiveSystem sys = builtin_system("S1a");

  SECTION("radius 0.9 circle never hits D") {
    Trajectory traj = impulsive_trajectory(sys, {0, 0.9, 0}, 50.0);
    CHECK(traj.events.empty());
    CHECK(impulsive_times(traj).empty());
    // plain circle: back at the start after 2 pi
    Vec3 p = trajectory_evaluate(traj, sys, 2 * M_PI);
    CHECK(norm(p - Vec3{0, 0.9, 0}) <= 1e-6);
  }

  SECTION("before the first hit the trajectory equals the plain flow") {
    Trajectory traj = impulsive_trajectory(sys, {0, 2, 0}, 4.0);  // t_end < 3pi/2
    CHECK(traj.events.empty());
    REQUIRE(traj.arcs.size() == 1);
    for (double t : {0.3, 1.1, 2.7, 3.9}) {
      Vec3 a = trajectory_evaluate(traj, sys, t);
      Vec3 b = flow(sys.field, sys.space, {0, 2, 0}, t, sys.tol);
      CHECK(norm(a - b) <= 1e-7);
    }
  }
}

TEST_CASE("semiflow property") {
  // evaluate(traj_x0, s + t) == evaluate(traj_y, t) for y = evaluate(traj_x0, s),
  // skipping s within 10 event-tolerances of an impulsive time
  auto check_system = [](const ImpulsiveSystem& sys, const std::vector<Vec3>& starts, double horizon) {
    Rng rng(17);
    int done = 0;
    for (int i = 0; done < 100 && i < 400; ++i) {
      Vec3 x0 = starts[static_cast<std::size_t>(i) % starts.size()];
      double s = rng.uniform(0.1, horizon / 2);
      double t = rng.uniform(0.1, horizon / 2);
      Trajectory tx = impulsive_trajectory(sys, x0, s + t + 0.1);
      bool near_tau = false;
      for (double tau : impulsive_times(tx))
        if (std::abs(s - tau) < 1e-6 || std::abs(s + t - tau) < 1e-6) near_tau = true;
      if (near_tau) continue;
      Vec3 y = trajectory_evaluate(tx, sys, s);
      Trajectory ty = impulsive_trajectory(sys, y, t + 0.05);
      Vec3 a = trajectory_evaluate(tx, sys, s + t);
      Vec3 b = trajectory_evaluate(ty, sys, t);
      INFO(sys.name << " x0=" << x0[0] << "," << x0[1] << "," << x0[2] << " s=" << s << " t=" << t);
      CHECK(sys.space.distance(a, b) <= 1e-6);
      ++done;
    }
    REQUIRE(done == 100);
  };

  SECTION("S1a") {
    ImpulsiveSystem sys = builtin_system("S1a");
    check_system(sys, {{0, 2, 0}, {0, 2.3, 0.2}, {0, 1.7, -0.3}, {1.2, 1.2, 0.1}}, 12.0);
  }

  SECTION("S2") {
    ImpulsiveSystem sys = builtin_system("S2");
    check_system(sys, {{0.5, 0.2, 0.2}, {0.7, 0.9, 0.1}, {0.25, 0.5, 0.75}}, 12.0);
  }
}

TEST_CASE("boundary landings are flagged, not fatal") {
  ImpulsiveSystem sys = builtin_system("S1a");
  // radius 1.52: the D hit at x = 1.52 falls inside the margin band [1.5, 1.55]
  Trajectory traj = impulsive_trajectory(sys, {0, 1.52, 0}, 6.0);
  REQUIRE(traj.events.size() == 1);
  CHECK_FALSE(traj.events[0].interior);
  CHECK(traj.boundary_flagged);
  CHECK(traj.horizon == 6.0);
}

TEST_CASE("travel-time bound holds on S2 trajectories") {
  ImpulsiveSystem sys = builtin_system("S2");
  Trajectory traj = impulsive_trajectory(sys, {0.5, 0.2, 0.2}, 120.0);
  REQUIRE(traj.events.size() >= 2);
  double bound = sys.min_flight_time();
  for (std::size_t i = 1; i < traj.events.size(); ++i)
    CHECK(traj.events[i].tau - traj.events[i - 1].tau >= bound);
  for (const auto& e : traj.events) CHECK(sys.space.distance(e.post, sys.apply_impulse(e.pre)) <= 1e-8);
}
