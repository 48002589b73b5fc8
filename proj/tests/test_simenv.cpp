#include <cmath>
#include <numbers>

#include <catch_amalgamated.hpp>

#include <tending/simenv.hpp>

using namespace tending;
using Catch::Approx;

namespace {

SceneConfig quiet_scene() {
  SceneConfig s;
  s.sensor_noise_sigma = 0;
  return s;
}

Vec3 force_in_hole(const SceneConfig& s, const Wrench& w) { return w.force; }

// Brute-force version of the surface penalty: 500 sunflower-distributed
// points on the peg's bottom disc, each penetrating the flat/chamfer profile
// along its local normal. The total stiffness is spread over the points in
// contact, as in the model.
Vec3 sampled_surface_force(const SceneConfig& s, const Vec3& tip) {
  const int n = 500;
  const double golden = std::numbers::pi * (3 - std::sqrt(5.0));
  const double ro = s.hole_radius + s.chamfer_width;
  const double tc = std::tan(s.chamfer_angle);
  Vec3 sum = Vec3::Zero();
  int touching = 0;
  for (int i = 0; i < n; ++i) {
    const double r = s.peg_radius * std::sqrt((i + 0.5) / n);
    const double th = i * golden;
    const double x = tip.x() + r * std::cos(th), y = tip.y() + r * std::sin(th);
    const double rho = std::hypot(x, y);
    if (rho < s.hole_radius) continue;
    const bool chamfer = rho < ro;
    const double pen_v = chamfer ? tip.z() - (ro - rho) * tc : tip.z();
    if (pen_v <= 0) continue;
    ++touching;
    const double a = chamfer ? s.chamfer_angle : 0.0;
    const double pn = pen_v * std::cos(a);
    const Vec3 radial(x / rho, y / rho, 0);
    sum += pn * (-std::cos(a) * Vec3::UnitZ() - std::sin(a) * radial);
  }
  if (touching == 0) return Vec3::Zero();
  return s.contact_stiffness * sum / touching;
}

}  // namespace

TEST_CASE("scene validation") {
  SceneConfig s;
  CHECK_NOTHROW(validate(s));
  s.hole_radius = s.peg_radius - 0.001;
  try {
    validate(s);
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::validation_error);
    CHECK(std::string(e.what()).find("positive clearance") != std::string::npos);
  }
}

TEST_CASE("reset") {
  const SceneConfig s = quiet_scene();
  SECTION("50 mm above the hole: zero wrench and velocity") {
    for (std::uint64_t seed : {0u, 1u, 99u}) {
      const SimState st = reset(s, pose_in_hole(s, Vec3(0, 0, -0.05)), seed);
      CHECK(st.raw_wrench.vector().isZero());
      CHECK(st.peg_velocity.isZero());
      CHECK(contact_wrench(s, st.peg_pose, Vec3::Zero()).wrench.vector().isZero());
    }
  }
  SECTION("start inside the surface is rejected") {
    try {
      reset(s, pose_in_hole(s, Vec3(0.03, 0, 0.003)), 0);
      FAIL("expected initial_penetration");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::initial_penetration);
    }
  }
  SECTION("resting exactly on the mouth is allowed") { CHECK_NOTHROW(reset(s, hole_entrance_pose(s), 0)); }
}

TEST_CASE("contact wrench") {
  const SceneConfig s = quiet_scene();
  SECTION("centered peg 5 mm above the surface") {
    CHECK(contact_wrench(s, pose_in_hole(s, Vec3(0, 0, -0.005)), Vec3::Zero()).wrench.vector().isZero());
  }
  SECTION("1 mm into the flat surface gives k_n * 1 mm") {
    const auto c = contact_wrench(s, pose_in_hole(s, Vec3(0.05, 0, 0.001)), Vec3::Zero());
    CHECK(c.regime == ContactRegime::surface);
    CHECK(c.wrench.force.z() == Approx(-20.0).epsilon(1e-9));
    CHECK(c.wrench.force.head<2>().norm() < 1e-9);
  }
  SECTION("random overlap poses agree with dense point sampling within 5%") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ue(0.0, 0.012), ua(0, 2 * std::numbers::pi), uz(1e-5, 9e-4);
    int compared = 0;
    for (int i = 0; i < 400 && compared < 100; ++i) {
      const double e = ue(rng), a = ua(rng);
      const Vec3 tip(e * std::cos(a), e * std::sin(a), uz(rng));
      const NormalContact nc = normal_contact(s, tip);
      if (nc.regime != ContactRegime::surface) continue;
      // Slivers carry too few sample points for a meaningful comparison.
      if (nc.contact_area < 0.1 * std::numbers::pi * s.peg_radius * s.peg_radius) continue;
      const Vec3 oracle = sampled_surface_force(s, tip);
      INFO("tip " << tip.transpose() << " model " << nc.force.transpose() << " oracle " << oracle.transpose());
      CHECK((nc.force - oracle).norm() <= 0.05 * oracle.norm());
      ++compared;
    }
    CHECK(compared >= 50);
  }
  SECTION("bore wall pushes the peg back toward the axis") {
    const double pen = 0.0002;
    const Vec3 tip(s.clearance() + pen, 0, 0.008);
    const auto c = contact_wrench(s, pose_in_hole(s, tip), Vec3::Zero());
    CHECK(c.regime == ContactRegime::bore);
    CHECK(c.wrench.force.x() == Approx(-s.contact_stiffness * pen).epsilon(1e-9));
  }
}

TEST_CASE("stepping") {
  SceneConfig s = quiet_scene();
  SECTION("target equal to peg pose in free space leaves the state unchanged") {
    SimState st = reset(s, pose_in_hole(s, Vec3(0, 0, -0.05)), 3);
    const Pose p0 = st.peg_pose;
    const SimState next = step(st, s, st.peg_pose, s.physics_dt);
    CHECK(next.peg_pose == p0);
    CHECK(next.step_count == 1);
    CHECK(next.raw_wrench.vector().isZero());
  }
  SECTION("free space: peg approaches a fixed offset target monotonically") {
    SimState st = reset(s, pose_in_hole(s, Vec3(0, 0, -0.05)), 3);
    const Pose target = pose_in_hole(s, Vec3(0.002, -0.001, -0.047));
    double prev = translation_distance(st.peg_pose, target);
    for (int i = 0; i < 1000; ++i) {
      step_in_place(st, s, target, s.physics_dt);
      const double d = translation_distance(st.peg_pose, target);
      REQUIRE(d <= prev);
      prev = d;
    }
    CHECK(prev < 1e-6);
  }
  SECTION("peg held by friction: 2 mm lateral cup offset reads k_lat * 2 mm") {
    // Press down first so static friction (mu * load) exceeds the lateral spring.
    const Vec3 rest(0.05, 0, 0);
    SimState st = reset(s, pose_in_hole(s, rest), 3);
    for (int i = 0; i < 2000; ++i) step_in_place(st, s, pose_in_hole(s, rest + Vec3(0, 0, 0.01)), s.physics_dt);
    const Vec3 before = to_hole_frame(s, st.peg_pose.position);
    for (int i = 0; i < 2000; ++i) {
      step_in_place(st, s, pose_in_hole(s, rest + Vec3(0.002, 0, 0.01)), s.physics_dt);
    }
    CHECK((to_hole_frame(s, st.peg_pose.position) - before).head<2>().norm() < 1e-9);
    const Wrench w = sensor_read(st, s);
    CHECK(force_in_hole(s, w).x() == Approx(s.cup_lateral_stiffness * 0.002).epsilon(1e-3));
  }
  SECTION("same seed gives bitwise identical streams") {
    s.sensor_noise_sigma = 0.1;
    auto run = [&](std::uint64_t seed) {
      SimState st = reset(s, hole_entrance_pose(s), seed);
      std::vector<double> out;
      for (int i = 0; i < 100; ++i) {
        step_in_place(st, s, pose_in_hole(s, Vec3(0.001, 0.0005, 0.004)), s.physics_dt);
        const Wrench w = sensor_read(st, s);
        out.insert(out.end(), w.vector().data(), w.vector().data() + 6);
        out.insert(out.end(), st.peg_pose.position.data(), st.peg_pose.position.data() + 3);
      }
      return out;
    };
    CHECK(run(17) == run(17));
    CHECK(run(17) != run(18));
  }
}

TEST_CASE("sensor filter and noise") {
  SceneConfig s = quiet_scene();
  SECTION("zero history and zero noise read zero") {
    SimState st = reset(s, pose_in_hole(s, Vec3(0, 0, -0.05)), 0);
    CHECK(sensor_read(st, s).vector().isZero());
  }
  SECTION("unit step crosses 63.2% at one time constant") {
    const double dt = 0.001;
    const double a = filter_coefficient(s.filter_cutoff_hz, dt);
    const double tau = 1.0 / (2 * std::numbers::pi * s.filter_cutoff_hz);
    CHECK(tau == Approx(0.0170).margin(5e-5));
    double y = 0;
    int k = 0;
    while (y < 1 - std::exp(-1.0)) {
      y += a * (1.0 - y);
      ++k;
    }
    CHECK(std::abs(k * dt - tau) <= dt);
  }
  SECTION("noise is zero mean with sigma on forces and sigma * r_p on torques") {
    s.sensor_noise_sigma = 0.1;
    SimState st = reset(s, pose_in_hole(s, Vec3(0, 0, -0.05)), 5);
    st.filtered_wrench = {Vec3(1.0, -2.0, 3.0), Vec3(0.01, 0.02, -0.03), FrameTag::e};
    const int n = 100000;
    Vec6 sum = Vec6::Zero(), sq = Vec6::Zero();
    for (int i = 0; i < n; ++i) {
      const Vec6 v = sensor_read(st, s).vector() - st.filtered_wrench.vector();
      sum += v;
      sq += v.cwiseProduct(v);
    }
    for (int i = 0; i < 6; ++i) {
      const double sigma = i < 3 ? 0.1 : 0.1 * s.peg_radius;
      CHECK(std::abs(sum[i] / n) <= 3 * sigma / std::sqrt(n));
      CHECK(std::sqrt(sq[i] / n) == Approx(sigma).epsilon(0.02));
    }
  }
}

TEST_CASE("success check") {
  const SceneConfig s = quiet_scene();
  auto at = [&](const Vec3& tip) {
    SimState st;
    st.peg_pose = pose_in_hole(s, tip);
    return check_success(st, s);
  };
  CHECK(at(Vec3(0, 0, 0.012)));
  CHECK_FALSE(at(Vec3(0, 0, 0)));
  CHECK(at(Vec3(0, 0, s.success_depth)));
  CHECK_FALSE(at(Vec3(0, 0, s.success_depth - 1e-6)));
  CHECK_FALSE(at(Vec3(0.01, 0, 0.012)));
}
