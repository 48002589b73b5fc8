#include <catch_amalgamated.hpp>

#include <tending/eval.hpp>

using namespace tending;
using Catch::Approx;

namespace {

rrrl::TaskSetup default_task() {
  rrrl::TaskSetup t;
  t.dfp = hole_entrance_pose(t.scene);
  t.dfp_true = t.dfp;
  return t;
}

}  // namespace

TEST_CASE("wilson interval") {
  // Reference values from statsmodels' proportion_confint(method="wilson").
  const Interval a = wilson_interval(69, 200);
  CHECK(a.lo == Approx(0.2825979437674894).epsilon(1e-9));
  CHECK(a.hi == Approx(0.4132441074094632).epsilon(1e-9));
  const Interval b = wilson_interval(91, 100);
  CHECK(b.lo == Approx(0.8377378714728368).epsilon(1e-9));
  CHECK(b.hi == Approx(0.9519274599974349).epsilon(1e-9));
  CHECK(wilson_interval(0, 100).lo == 0.0);
  CHECK(wilson_interval(0, 100).hi == Approx(0.03699349820698569).epsilon(1e-9));
  CHECK(wilson_interval(100, 100).hi == 1.0);
  CHECK(separated_above(b, a));
  CHECK_FALSE(separated_above(a, b));
}

TEST_CASE("action sets") {
  CHECK(action_set(1, 10).size() == 12);
  CHECK(action_set(2, 10).size() == 4);
  const auto s3 = action_set(3, 10);
  REQUIRE(s3.size() == 4);
  CHECK(s3[0].vector() == (Vec6() << 10, 10, 10, 0, 0, 0).finished());
  CHECK(s3[3].vector() == (Vec6() << -10, -10, 10, 0, 0, 0).finished());
  for (const auto& w : action_set(1, 10)) CHECK(w.vector().cwiseAbs().sum() == 10.0);
  for (const auto& w : action_set(2, 10)) {
    CHECK(w.force.z() == 10.0);
    CHECK(w.force.head<2>().cwiseAbs().sum() == 10.0);
  }
  CHECK_THROWS_AS(action_set(4, 10), Error);
}

TEST_CASE("action-set study") {
  const auto task = default_task();
  const rrrl::RrrlConfig cfg;
  ActionStudyOptions opt;
  opt.trials = 30;
  const auto a = compare_action_sets(task, cfg, 5, opt);
  const auto b = compare_action_sets(task, cfg, 5, opt);
  REQUIRE(a.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].successes == b[i].successes);
    CHECK(a[i].trials == 30);
  }
  SECTION("the diagonal set inserts at least twice as often as the single-axis set") {
    const auto full = compare_action_sets(task, cfg, 42);
    CHECK(full[2].successes >= 2 * full[0].successes);
    CHECK(full[2].successes > 0);
  }
}

TEST_CASE("execution benchmark") {
  Artifacts art;
  art.task = default_task();
  SECTION("perfect target: all baselines insert") {
    for (Method m : {Method::pure_replay, Method::spiral}) {
      const auto r = run_execution_benchmark({m, Group::perfect, 5, 1}, art);
      CHECK(r.successes == 5);
      CHECK(r.records.size() == 5);
    }
  }
  SECTION("same seed, same records") {
    const auto a = run_execution_benchmark({Method::spiral, Group::uncertainty, 8, 3}, art);
    const auto b = run_execution_benchmark({Method::spiral, Group::uncertainty, 8, 3}, art);
    CHECK(to_json(Report{{}, {a}}) == to_json(Report{{}, {b}}));
  }
  SECTION("pure replay stops on the protective force limit") {
    const auto r = run_execution_benchmark({Method::pure_replay, Group::uncertainty, 10, 2}, art);
    for (const auto& t : r.records) {
      if (t.success) continue;
      // The stop reads the noisy sensor; the record holds the filtered norm.
      CHECK(t.max_force >= art.baselines.protective_stop - 6 * std::sqrt(3.0) * art.task.scene.sensor_noise_sigma);
      CHECK(t.steps < art.rrrl.k_max);
    }
  }
  SECTION("rrrl needs a policy") {
    try {
      run_execution_benchmark({Method::rrrl, Group::uncertainty, 5, 1}, art);
      FAIL("expected missing_artifact");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::missing_artifact);
    }
  }
  SECTION("trials must be positive") {
    CHECK_THROWS_AS(run_execution_benchmark({Method::spiral, Group::uncertainty, 0, 1}, art), Error);
  }
}

TEST_CASE("method and group names") {
  CHECK(method_from_string("pure") == Method::pure_replay);
  CHECK(method_from_string("pure_replay") == Method::pure_replay);
  CHECK(method_from_string("rrrl") == Method::rrrl);
  CHECK(group_from_string("perfect") == Group::perfect);
  CHECK_THROWS_AS(method_from_string("teleport"), Error);
}

TEST_CASE("report") {
  SECTION("empty report") {
    const Report r;
    const auto j = to_json(r);
    CHECK(j["action_sets"].empty());
    CHECK(j["benchmarks"].empty());
    const std::string md = report_markdown(r);
    CHECK(md.find("# Tending benchmark report") == 0);
    CHECK(md.find('|') == std::string::npos);
  }
  SECTION("one benchmark gives one row") {
    BenchmarkResult b;
    b.method = Method::spiral;
    b.successes = 47;
    b.trials = 100;
    b.max_force_overall = 21.3;
    const std::string md = report_markdown(Report{{}, {b}});
    CHECK(md.find("| spiral | uncertainty | 47/100 |") != std::string::npos);
    CHECK(md.find("| 21.3 |") != std::string::npos);
  }
  SECTION("json round trip") {
    Artifacts art;
    art.task = default_task();
    Report r;
    r.benchmarks.push_back(run_execution_benchmark({Method::spiral, Group::uncertainty, 4, 3}, art));
    r.action_sets.push_back({3, 4, 10, 20, wilson_interval(10, 20)});
    const auto j = to_json(r);
    CHECK(to_json(report_from_json(nlohmann::json::parse(j.dump()))) == j);
    CHECK_THROWS_AS(report_from_json(nlohmann::json::object()), Error);
  }
}
