#include <algorithm>
#include <sstream>

#include <catch_amalgamated.hpp>

#include <tending/servo.hpp>

using namespace tending;
using Catch::Approx;

namespace {

const Eigen::Quaterniond kDown(0, 1, 0, 0);

// Object 0.4 m in front of the camera, slightly off-axis and tilted.
Pose nominal_c_x_o() {
  return {Vec3(0.01, -0.02, 0.4), Eigen::Quaterniond(Eigen::AngleAxisd(0.1, Vec3(1, 2, 0).normalized()))};
}

Eigen::Matrix<double, 8, 1> normalized_stack(const CameraModel& cam, const FeatureSet& f) {
  Eigen::Matrix<double, 8, 1> s;
  for (int i = 0; i < kNumFeatures; ++i) s.segment<2>(2 * i) = pixel_to_normalized(cam, f.image[i]);
  return s;
}

TeachRig rig_at_dvsp(const Pose& object, double height = 0.15) {
  TeachRig rig;
  rig.object = object;
  rig.ee = compose(object, Pose::translation(0, 0, -height));
  return rig;
}

TeachSession captured(TeachRig& rig, const Pose& dgp) {
  TeachSession s;
  const Pose ee = rig.ee;
  rig.ee = dgp;
  teach_capture_dgp(s, rig);
  rig.ee = ee;
  teach_capture_dvsp(s, rig);
  return s;
}

}  // namespace

TEST_CASE("pinhole projection") {
  CameraModel cam;
  for (double z : {0.1, 0.4, 3.0}) {
    const auto px = project(cam, Pose::identity(), {Vec3(0, 0, z)});
    CHECK(px[0].x() == cam.cx);
    CHECK(px[0].y() == cam.cy);
  }
  CameraModel c2;
  c2.fx = 600;
  c2.cx = 320;
  CHECK(project(c2, Pose::identity(), {Vec3(0.5, 0, 0.5)})[0].x() == Approx(920));
  try {
    project(cam, Pose::identity(), {Vec3(0, 0, -0.1)});
    FAIL("expected behind_camera");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::behind_camera);
  }
}

TEST_CASE("interaction matrix matches the numeric projection Jacobian") {
  CameraModel cam;
  const Pose c_x_o = nominal_c_x_o();
  const FeatureSet f = render_features(cam, c_x_o);
  const InteractionMatrix l = interaction_matrix(cam, f);
  const double h = 1e-6;
  for (int k = 0; k < 6; ++k) {
    Vec6 xi = Vec6::Zero();
    xi[k] = h;
    // Camera displaced by +/- xi in its own frame; the object stays put.
    const auto moved = [&](double sign) {
      const Pose c_new = detail::twist_increment(sign * xi);
      return normalized_stack(cam, render_features(cam, compose(inverse(c_new), c_x_o)));
    };
    const Eigen::Matrix<double, 8, 1> fd = (moved(1) - moved(-1)) / (2 * h);
    INFO("column " << k);
    CHECK((fd - l.col(k)).norm() <= 1e-4 * l.col(k).norm());
  }
}

TEST_CASE("ibvs twist") {
  CameraModel cam;
  const FeatureSet ref = render_features(cam, nominal_c_x_o());
  CHECK(ibvs_twist(cam, ref, ref, 2.0).norm() == 0.0);

  SECTION("object shifted along camera x: camera follows along +x") {
    Pose shifted = nominal_c_x_o();
    shifted.position.x() += 0.002;
    const Vec6 tw = ibvs_twist(cam, render_features(cam, shifted), ref, 2.0);
    CHECK(tw[0] > 0);
    CHECK(std::abs(tw[0]) > 5 * std::abs(tw[1]));
    CHECK(std::abs(tw[0]) > 5 * std::abs(tw[2]));
  }
  SECTION("collinear features are rejected") {
    FeatureSet bad = ref;
    for (int i = 0; i < kNumFeatures; ++i) bad.image[i] = Eigen::Vector2d(600 + 10 * i, 300 + 5 * i);
    try {
      ibvs_twist(cam, bad, ref, 2.0);
      FAIL("expected degenerate_features");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::degenerate_features);
    }
  }
}

TEST_CASE("pose estimation") {
  CameraModel cam;
  const Pose truth = nominal_c_x_o();
  SECTION("fixed point") {
    const FeatureSet obs = render_features(cam, truth);
    const Pose est = estimate_object_pose(cam, obs, truth);
    CHECK(feature_error_px(render_features(cam, est), obs) < 1e-9);
  }
  SECTION("recovers a 2 mm perturbation exactly") {
    const Pose init = compose(Pose::translation(0.002, 0, 0), truth);
    const Pose est = estimate_object_pose(cam, render_features(cam, truth), init);
    CHECK(translation_distance(est, truth) < 1e-6);
    CHECK(rotation_distance(est, truth) < 1e-6);
  }
}

TEST_CASE("pose estimation under 0.5 px noise") {
  CameraModel cam;
  const Pose truth = nominal_c_x_o();
  std::mt19937_64 rng(21);
  SECTION("median position error below 1 mm") {
    std::vector<double> errs;
    for (int i = 0; i < 100; ++i) {
      const FeatureSet obs = render_features(cam, truth, 0.5, &rng);
      errs.push_back(translation_distance(estimate_object_pose(cam, obs, truth), truth));
    }
    std::nth_element(errs.begin(), errs.begin() + 50, errs.end());
    CHECK(errs[50] < 1e-3);
  }
  SECTION("position spread matches the Cramer-Rao bound") {
    // Bound from a central-difference Jacobian of the rendered pixels with
    // respect to (origin position, rotation vector).
    auto pixels = [&](const Vec6& th) {
      const Pose p{truth.position + th.head<3>(),
                   Eigen::Quaterniond(Eigen::AngleAxisd(th.tail<3>().norm(),
                                                        th.tail<3>().norm() > 0 ? Vec3(th.tail<3>().normalized())
                                                                                : Vec3::UnitX())) *
                       truth.orientation};
      const FeatureSet f = render_features(cam, p);
      Eigen::Matrix<double, 8, 1> out;
      for (int i = 0; i < kNumFeatures; ++i) out.segment<2>(2 * i) = f.image[i];
      return out;
    };
    Eigen::Matrix<double, 8, 6> jac;
    for (int k = 0; k < 6; ++k) {
      Vec6 d = Vec6::Zero();
      d[k] = 1e-7;
      jac.col(k) = (pixels(d) - pixels(-d)) / 2e-7;
    }
    const Eigen::Matrix<double, 6, 6> cov = 0.25 * (jac.transpose() * jac).inverse();
    const Vec3 bound = cov.diagonal().head<3>().cwiseSqrt();

    const int n = 2000;
    Vec3 sum = Vec3::Zero(), sq = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
      const Vec3 e = estimate_object_pose(cam, render_features(cam, truth, 0.5, &rng), truth).position - truth.position;
      sum += e;
      sq += e.cwiseProduct(e);
    }
    const Vec3 sd = (sq / n - (sum / n).cwiseProduct(sum / n)).cwiseSqrt();
    for (int a = 0; a < 3; ++a) {
      INFO("axis " << a << ": sample sd " << sd[a] << ", bound " << bound[a]);
      // No unbiased estimator beats the bound; nonlinearity costs a little.
      CHECK(sd[a] > 0.9 * bound[a]);
      CHECK(sd[a] < 1.25 * bound[a]);
    }
  }
}

TEST_CASE("teaching capture") {
  const Pose object{Vec3(0.4, 0.15, 0.05), kDown};
  SECTION("DVSP 0.15 m above the DGP: the stored relative pose maps back to the DGP") {
    TeachRig rig = rig_at_dvsp(object);
    TeachSession s = captured(rig, object);
    CHECK(s.phase == TeachPhase::DgpCaptured);
    CHECK(s.dvsp_captured);
    const Pose back = compute_dfp(s.b_x_dvsp, rig.camera.e_x_c, s.c_x_o);
    CHECK(translation_distance(back, s.b_x_dgp) < 1e-12);
    CHECK(rotation_distance(back, s.b_x_dgp) < 1e-9);
    // The stored relative pose is also what the camera sees.
    CHECK(translation_distance(s.c_x_o, rig.true_c_x_o()) < 1e-12);
  }
  SECTION("DVSP before DGP is a phase error") {
    TeachRig rig = rig_at_dvsp(object);
    TeachSession s;
    try {
      teach_capture_dvsp(s, rig);
      FAIL("expected wrong_phase");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::wrong_phase);
    }
  }
  SECTION("object behind the camera is not visible") {
    TeachRig rig = rig_at_dvsp(object, -0.15);
    TeachSession s;
    teach_capture_dgp(s, rig);
    try {
      teach_capture_dvsp(s, rig);
      FAIL("expected object_not_visible");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::object_not_visible);
    }
  }
  SECTION("start_follow needs the DVSP") {
    TeachRig rig = rig_at_dvsp(object);
    TeachSession s;
    teach_capture_dgp(s, rig);
    CHECK_THROWS_AS(teach_start_follow(s, rig), Error);
  }
}

TEST_CASE("teaching follow and finish") {
  const Pose object{Vec3(0.4, 0.15, 0.05), kDown};
  TeachRig rig = rig_at_dvsp(object);
  TeachSession s = captured(rig, object);
  teach_start_follow(s, rig);

  SECTION("stationary object: EE command does not move") {
    const Pose before = rig.ee;
    const Pose after = teach_follow_step(s, rig, object, 0.01);
    CHECK(translation_distance(before, after) < 1e-8);
    CHECK(rotation_distance(before, after) < 1e-8);
    teach_finish(s, rig);
    CHECK(translation_distance(*s.dfp, object) < 1e-6);
  }
  SECTION("object moved 50 mm over 2 s: features converge, trajectory recorded") {
    const std::vector<DemoWaypoint> script{{0.0, object}, {2.0, compose(Pose::translation(0, -0.05, 0), object)}};
    for (int k = 0; k < 500; ++k) teach_follow_step(s, rig, demo_object_at(script, s.t + 0.01), 0.01);
    CHECK(s.last_feature_error < 1.0);
    CHECK(s.trajectory.size() == 500);
    for (std::size_t i = 1; i < s.trajectory.size(); ++i) REQUIRE(s.trajectory[i].t > s.trajectory[i - 1].t);
  }
  SECTION("finish before following is a phase error") {
    TeachSession idle;
    CHECK_THROWS_AS(teach_finish(idle, rig), Error);
  }
}

TEST_CASE("scripted demonstration") {
  const Pose start{Vec3(0.4, 0.15, 0.05), kDown};
  const Vec3 delta(0.02, 0, 0);
  const std::vector<DemoWaypoint> script{{0.0, start}, {1.0, start}, {2.0, compose(Pose::translation(delta), start)}};
  TeachRig rig;
  const TeachSession s = run_scripted_demo(rig, script, DemoOptions{});
  CHECK(s.phase == TeachPhase::Finished);
  CHECK(translation_distance(*s.dfp, compose(Pose::translation(delta), s.b_x_dgp)) < 2e-4);

  SECTION("trajectory file round trip") {
    std::stringstream ss;
    write_trajectory(ss, s);
    const TrajectoryFile f = read_trajectory(ss);
    CHECK(f.points.size() == s.trajectory.size());
    CHECK(f.dfp == *s.dfp);
    CHECK(f.dgp == s.b_x_dgp);
    CHECK(f.duration == s.duration);
  }
  SECTION("truncated trajectory file") {
    std::stringstream ss("{\"t\":0.01,\"ee_pose\":[0,0,0,1,0,0,0]}\n");
    CHECK_THROWS_AS(read_trajectory(ss), Error);
  }
}

TEST_CASE("demo script parsing") {
  std::stringstream ok(R"({"t":0,"object_pose":[0,0,0,1,0,0,0]}
{"t":1,"object_pose":[0.1,0,0,1,0,0,0]}
)");
  const auto script = parse_demo_script(ok);
  REQUIRE(script.size() == 2);
  CHECK(demo_object_at(script, 0.5).position.x() == Approx(0.05));
  CHECK(demo_object_at(script, 9).position.x() == Approx(0.1));

  std::stringstream backwards(R"({"t":1,"object_pose":[0,0,0,1,0,0,0]}
{"t":0.5,"object_pose":[0,0,0,1,0,0,0]}
)");
  CHECK_THROWS_AS(parse_demo_script(backwards), Error);
  std::stringstream empty("");
  CHECK_THROWS_AS(parse_demo_script(empty), Error);
}

TEST_CASE("contact teaching shifts the recorded target by F/k") {
  SceneConfig scene;
  const double f = 5.0;
  const auto r = contact_teach(scene, AdmittanceGains{}, Vec3(f, 0, 0), 0.012, 3.0);
  const Vec3 shift = to_hole_frame(scene, r.recorded_target.position) - to_hole_frame(scene, r.object_pose.position);
  CHECK(r.terminal_force.force.x() == Approx(f).epsilon(0.01));
  CHECK(shift.x() == Approx(r.terminal_force.force.x() / scene.cup_lateral_stiffness).epsilon(0.02));
}
