#include <random>

#include <catch_amalgamated.hpp>

#include <tending/rrrl/agent.hpp>

using namespace tending;
using namespace tending::rrrl;
using Catch::Approx;

namespace {

TaskSetup default_task() {
  TaskSetup t;
  t.dfp = hole_entrance_pose(t.scene);
  t.dfp_true = t.dfp;
  return t;
}

}  // namespace

TEST_CASE("force action set") {
  const Wrench a0 = action_to_wrench(0, 10.0);
  CHECK(a0.vector() == (Vec6() << 10, 10, 10, 0, 0, 0).finished());
  const Wrench a3 = action_to_wrench(3, 10.0);
  CHECK(a3.vector() == (Vec6() << -10, -10, 10, 0, 0, 0).finished());
  for (int a = 0; a < kNumActions; ++a) CHECK(action_to_wrench(a, 10.0).force.z() == 10.0);
  CHECK_THROWS_AS(action_to_wrench(4, 10.0), Error);
}

TEST_CASE("region switch") {
  const Pose dfp = Pose::translation(0.5, 0, 0.05);
  auto at = [&](double dx) { return compose(Pose::translation(dx, 0, 0), dfp); };
  CHECK(alpha_switch(dfp, dfp, 0.01) == 1);
  CHECK(alpha_switch(at(0.0099), dfp, 0.01) == 1);
  CHECK(alpha_switch(at(0.0101), dfp, 0.01) == 0);
  CHECK(alpha_switch(Pose::translation(0.01, 0, 0), Pose::identity(), 0.01) == 0);
  CHECK_THROWS_AS(alpha_switch(dfp, dfp, 0.0), Error);
}

TEST_CASE("hybrid action selects exactly one arm") {
  const Pose step = Pose::translation(0.001, 0, 0);
  const Wrench f = action_to_wrench(1, 10.0);
  const PlantCommand force = hybrid_action(1, step, f);
  REQUIRE(std::holds_alternative<ForceCommand>(force));
  CHECK(std::get<ForceCommand>(force).desired.vector() == f.vector());
  const PlantCommand pos = hybrid_action(0, step, f);
  REQUIRE(std::holds_alternative<PositionCommand>(pos));
  CHECK(std::get<PositionCommand>(pos).increment == step);
}

TEST_CASE("reward") {
  const Pose a = Pose::identity();
  CHECK(reward(true, 0, 50, a, a) == 1.0);
  CHECK(reward(true, 50, 50, a, a) == 0.0);
  CHECK(reward(false, 7, 50, Pose::translation(0.003, 0, 0), a) == Approx(-0.003).epsilon(1e-12));
}

TEST_CASE("state normalization and schedules") {
  const Wrench w{Vec3(10, -5, 2), Vec3(0.15, 0, -0.075), FrameTag::e};
  const Vec6 s = normalize_state(w, 10.0, 0.015);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == -0.5);
  CHECK(s[3] == Approx(1.0));
  CHECK(s[5] == Approx(-0.5));

  const RrrlConfig c;
  CHECK(epsilon_at(c, 0) == 1.0);
  CHECK(epsilon_at(c, 50) == Approx(0.55));
  CHECK(epsilon_at(c, 100) == Approx(0.1));
  CHECK(epsilon_at(c, 180) == Approx(0.1));
  CHECK(beta_at(c, 0) == Approx(0.4));
  CHECK(beta_at(c, c.episodes - 1) == Approx(1.0));
}

TEST_CASE("uncertain target lies 2-4 mm away in the hole plane") {
  const SceneConfig scene;
  const Pose nominal = hole_entrance_pose(scene);
  std::mt19937_64 rng(51);
  for (int i = 0; i < 500; ++i) {
    const Pose p = perturb_target(scene, nominal, 0.002, 0.004, rng);
    const double d = translation_distance(p, nominal);
    REQUIRE(d >= 0.002 - 1e-12);
    REQUIRE(d <= 0.004 + 1e-12);
    REQUIRE(std::abs(to_hole_frame(scene, p.position).z()) < 1e-12);
  }
}

TEST_CASE("td update") {
  SECTION("terminal target is the reward") {
    const QNetwork zero = QNetwork::zeros({6, 8, 4});
    QNetwork net = zero;
    AdamState opt = AdamState::for_network(net, 1e-3);
    Transition t;
    t.a = 2;
    t.r = 0.7;
    t.terminal = true;
    t.s_next = Vec6::Constant(100);
    const TdResult r = td_update(net, zero, opt, {t}, {1.0}, 0.5);
    CHECK(r.td_errors[0] == 0.7);
    CHECK(r.priorities[0] == Approx(0.7 + kPriorityFloor));
  }
  SECTION("double-DQN target by hand") {
    // Linear nets reading only the first state component. The online net
    // picks the next action, the target net evaluates it.
    QNetwork online = QNetwork::zeros({6, 2}), target = QNetwork::zeros({6, 2});
    online.weights[0].col(0) << 1.0, 2.0;
    target.weights[0].col(0) << 5.0, 3.0;
    AdamState opt = AdamState::for_network(online, 1e-3);
    Transition t;
    t.s[0] = 0.5;
    t.s_next[0] = 1.0;
    t.a = 0;
    t.r = 0.2;
    // Online Q(s') = [1, 2] -> a* = 1; target Q(s', 1) = 3 (not its max, 5);
    // y = 0.2 + 0.5 * 3 = 1.7. Q(s, 0) = 0.5, so delta = 1.2 and the
    // weighted loss is 0.5 * 1.44.
    const TdResult r = td_update(online, target, opt, {t}, {0.5}, 0.5);
    CHECK(r.td_errors[0] == Approx(1.2).epsilon(1e-12));
    CHECK(r.loss == Approx(0.72).epsilon(1e-12));
  }
  SECTION("repeated updates on one transition drive the loss down") {
    std::mt19937_64 rng(52);
    QNetwork net = QNetwork::random({6, 64, 64, 4}, rng);
    const QNetwork target = net;
    AdamState opt = AdamState::for_network(net, 1e-3);
    Transition t;
    t.s << 0.3, -0.2, 1.0, 0.1, 0.0, -0.4;
    t.s_next = t.s;
    t.a = 1;
    t.r = 0.8;
    t.terminal = true;
    const double first = td_update(net, target, opt, {t}, {1.0}, 0.5).loss;
    double last = first;
    for (int i = 0; i < 200; ++i) last = td_update(net, target, opt, {t}, {1.0}, 0.5).loss;
    CHECK(last < 0.01 * first);
  }
  SECTION("mismatched weights") {
    QNetwork net = QNetwork::zeros({6, 4});
    AdamState opt = AdamState::for_network(net, 1e-3);
    CHECK_THROWS_AS(td_update(net, net, opt, {Transition{}}, {}, 0.5), Error);
  }
}

TEST_CASE("config validation") {
  RrrlConfig c;
  CHECK_NOTHROW(validate(c));
  c.region_radius = 0.006;
  CHECK_THROWS_AS(validate(c), Error);
  c = {};
  c.discount = 0;
  CHECK_THROWS_AS(validate(c), Error);
}

TEST_CASE("rollouts") {
  const TaskSetup task = default_task();
  const RrrlConfig cfg;
  SECTION("starting on the hole axis inserts within 10 steps") {
    for (int a = 0; a < kNumActions; ++a) {
      const auto r = hybrid_rollout(task, cfg, task.dfp_true, task.dfp_true, 3, [a](const Vec6&) { return a; });
      CHECK(r.success);
      // Lateral push loads the bore wall and friction slows the descent to
      // about 1 mm per decision; 10 mm depth needs at most 10 decisions.
      CHECK(r.steps <= 10);
    }
  }
  SECTION("force commands stay inside the region and below the amplitude") {
    std::mt19937_64 rng(53);
    for (int i = 0; i < 20; ++i) {
      const Pose unc = perturb_target(task.scene, task.dfp, 0.002, 0.004, rng);
      const Pose start = compose(Pose::translation(0.02, 0, 0), unc);  // starts outside the region
      std::uniform_int_distribution<int> ua(0, 3);
      int position_steps = 0, force_steps = 0;
      auto choose = [&](const Vec6&) {
        ++force_steps;
        return ua(rng);
      };
      auto sink = [&](const Transition& t) { REQUIRE((t.a >= 0 && t.a < kNumActions)); };
      const auto r = hybrid_rollout(task, cfg, start, unc, rng(), choose, sink);
      position_steps = r.steps - force_steps;
      CHECK(position_steps >= 4);
      CHECK_FALSE(r.region_violation);
      CHECK(r.max_commanded <= cfg.force_amplitude);
    }
  }
}

TEST_CASE("training is deterministic for a seed") {
  const TaskSetup task = default_task();
  RrrlConfig cfg;
  cfg.episodes = 5;
  cfg.warmup = 20;
  cfg.batch = 8;
  const TrainResult a = train(task, cfg, 9);
  const TrainResult b = train(task, cfg, 9);
  REQUIRE(a.log.size() == 5);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].ret == b.log[i].ret);
    CHECK(a.log[i].steps == b.log[i].steps);
  }
  for (int l = 0; l < a.policy.net.layers(); ++l) CHECK(a.policy.net.weights[l] == b.policy.net.weights[l]);
  const TrainResult c = train(task, cfg, 10);
  CHECK(c.policy.net.weights[0] != a.policy.net.weights[0]);
}
