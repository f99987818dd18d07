#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cprl/dataset.hpp"
#include "cprl/simulator.hpp"
#include "support.hpp"

using namespace cprl;

namespace {

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-8); }

}  // namespace

TEST_CASE("insulin subsystem derivatives match the closed formulas") {
    // zero state leaves only the infusion term
    const auto d0 = insulin_subsystem_derivs(0, 0, 5, {0.1, 0.2, 0.3, 0.4});
    CHECK(d0.dI_l == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(d0.dI_p == doctest::Approx(0.0).epsilon(1e-15));
    // direct substitution
    const auto d1 = insulin_subsystem_derivs(1, 2, 0, {0.1, 0.2, 0.3, 0.4});
    CHECK(d1.dI_l == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(d1.dI_p == doctest::Approx(-1.1).epsilon(1e-12));
    CHECK_THROWS(insulin_subsystem_derivs(std::nan(""), 0, 0, {0.1, 0.2, 0.3, 0.4}));
}

TEST_CASE("insulin subsystem steady state matches integration to convergence") {
    const std::array<double, 4> m = {0.19, 0.484, 0.285, 0.194};
    const double infusion = 1.7;
    const auto [il_solve, ip_solve] = insulin_subsystem_steady_state(infusion, m);
    // integrate the 2x2 system with small Euler steps until it settles
    double il = 0.0, ip = 0.0;
    const double dt = 0.01;
    for (int i = 0; i < 4'000'000; ++i) {
        const auto d = insulin_subsystem_derivs(il, ip, infusion, m);
        il += dt * d.dI_l;
        ip += dt * d.dI_p;
    }
    CHECK(std::abs(il - il_solve) < 1e-6);
    CHECK(std::abs(ip - ip_solve) < 1e-6);
    // and the residual of the solve itself is zero
    const auto r = insulin_subsystem_derivs(il_solve, ip_solve, infusion, m);
    CHECK(std::abs(r.dI_l) < 1e-12);
    CHECK(std::abs(r.dI_p) < 1e-12);
}

TEST_CASE("basal state is a fixed point under zero action and no meals") {
    const CausalGraph& g = glucose_insulin_preset();
    PatientParams p = base_patient(g);
    EnvConfig cfg;
    cfg.meals_enabled = false;
    GraphEnv env(g, p, cfg);
    env.reset(1);
    const Eigen::VectorXd before = env.state();
    for (int t = 0; t < 60; ++t) env.step(0.0);
    for (int v = 0; v < g.node_count(); ++v) {
        CHECK(std::abs(env.state()[v] - before[v]) < 1e-6);
    }
}

TEST_CASE("a meal minute reports exactly the scheduled carbs") {
    const CausalGraph& g = glucose_insulin_preset();
    PatientParams p = base_patient(g);
    p.meals.slots = {{10, 10, 42.5}};
    p.meals.noise_enabled = false;
    GraphEnv env(g, p, EnvConfig{});
    env.reset(7);
    REQUIRE(env.meals().size() == 1);
    for (int t = 0; t < 10; ++t) {
        const auto r = env.step(0.0);
        if (t == 9) {
            CHECK(r.obs.meal_carbs_g == 42.5);  // exact by the hold rule
        } else {
            CHECK(r.obs.meal_carbs_g < 1e-9);
        }
    }
}

TEST_CASE("the previous-dose observation records the action") {
    const CausalGraph& g = glucose_insulin_preset();
    GraphEnv env(g, base_patient(g), EnvConfig{});
    env.reset(3);
    const auto r1 = env.step(0.031);
    CHECK(r1.obs.prev_insulin_U == 0.031);
    const auto r2 = env.step(0.0);
    CHECK(r2.obs.prev_insulin_U == 0.0);
}

TEST_CASE("state blow-up terminates the episode with a failure flag") {
    // runaway positive feedback through an adversarial slot value
    const CausalGraph g = parse_graph_spec(R"(graph runaway
channel const
node x unit=au observed
slot k base=2
knowledge grow target=x
  term 1 slot:k x
  input const gain=const:1
end
)");
    PatientParams p;
    p.id = 1;
    p.theta_true = Eigen::VectorXd::Constant(1, 2.0);
    p.basal_state = Eigen::VectorXd::Constant(1, 1.0);
    EnvConfig cfg;
    cfg.glucose_node = "x";
    cfg.meals_enabled = false;
    GraphEnv env(g, p, cfg);
    env.reset(1);
    bool failed = false;
    for (int t = 0; t < 100 && !failed; ++t) failed = env.step(0.0).failed;
    CHECK(failed);
    CHECK_THROWS(env.step(0.0));
}

TEST_CASE("one-minute steps track a dt=0.05 RK4 oracle within 1e-3") {
    const CausalGraph& g = glucose_insulin_preset();
    PatientParams p = base_patient(g);
    p.meals.slots = {{30, 30, 45.0}, {300, 300, 60.0}};
    p.meals.noise_enabled = false;
    auto policy = [](const EnvObservation&, int t) { return t > 60 ? 0.008 : 0.0; };

    EnvConfig coarse;
    coarse.dt_min = 0.25;
    GraphEnv env(g, p, coarse);
    env.reset(5);
    for (int t = 0; t < 720; ++t) env.step(policy(env.observe(), t));

    EnvConfig fine;
    fine.dt_min = 0.05;
    GraphEnv oracle(g, p, fine);
    oracle.reset(5);
    for (int t = 0; t < 720; ++t) oracle.step(policy(oracle.observe(), t));

    for (int v = 0; v < g.node_count(); ++v) {
        CHECK(rel_diff(env.state()[v], oracle.state()[v]) < 1e-3);
    }
}

TEST_CASE("a single Euler minute stays within 1e-3 of the fine RK4 oracle") {
    const CausalGraph& g = glucose_insulin_preset();
    PatientParams p = base_patient(g);
    // displace the slow glucose block; fast compartments stay at equilibrium
    p.basal_state[g.node_index("G_p")] += 8.0;
    EnvConfig euler;
    euler.integrator = Integrator::Euler;
    euler.dt_min = 1.0;
    euler.meals_enabled = false;
    GraphEnv env(g, p, euler);
    env.reset(2);
    env.step(0.0);

    EnvConfig fine;
    fine.dt_min = 0.05;
    fine.meals_enabled = false;
    GraphEnv oracle(g, p, fine);
    oracle.reset(2);
    oracle.step(0.0);

    for (int v = 0; v < g.node_count(); ++v) {
        CHECK(rel_diff(env.state()[v], oracle.state()[v]) < 1e-3);
    }
}

TEST_CASE("meal schedule: disabled noise gives exact base carbs, seeded draws stay in band") {
    PatientParams p = base_patient(glucose_insulin_preset());
    p.meals.noise_enabled = false;
    const auto exact = meal_schedule(123, p);
    REQUIRE(exact.size() == 3);
    CHECK(exact[0].carbs_g == 45.0);
    CHECK(exact[1].carbs_g == 70.0);
    CHECK(exact[2].carbs_g == 60.0);
    CHECK(exact[0].time_min < exact[1].time_min);
    CHECK(exact[1].time_min < exact[2].time_min);

    p.meals.noise_enabled = true;
    double sum = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const auto events = meal_schedule(1000 + i, p);
        for (std::size_t k = 0; k < events.size(); ++k) {
            const double base = p.meals.slots[k].base_carbs_g;
            CHECK(events[k].carbs_g >= 0.9 * base);
            CHECK(events[k].carbs_g <= 1.1 * base);
            CHECK(events[k].time_min >= p.meals.slots[k].window_lo_min);
            CHECK(events[k].time_min <= p.meals.slots[k].window_hi_min);
        }
        sum += events[0].carbs_g;
    }
    CHECK(std::abs(sum / draws - 45.0) / 45.0 < 0.01);
    // determinism under the same day seed
    const auto a = meal_schedule(42, p);
    const auto b = meal_schedule(42, p);
    CHECK(a[0].carbs_g == b[0].carbs_g);
    CHECK(a[0].time_min == b[0].time_min);
}

TEST_CASE("reward: band, boundaries, quadratic penalty, floor") {
    CHECK(reward(120.0) == 1.0);
    CHECK(reward(70.0) == 1.0);
    CHECK(reward(180.0) == 1.0);
    CHECK(reward(200.0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(reward(50.0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(reward(1000.0) == -100.0);
}

TEST_CASE("zero-insulin rollout on the base patient drifts hyperglycemic") {
    const CausalGraph& g = glucose_insulin_preset();
    const auto ro = rollout([](const EnvObservation&, int) { return 0.0; }, g, base_patient(g),
                            1440, 9);
    CHECK_FALSE(ro.failed);
    CHECK(ro.mean_reward < 0.0);
    double max_glucose = 0.0;
    for (const auto& rec : ro.records) max_glucose = std::max(max_glucose, rec.o_next.glucose_mgdl);
    CHECK(max_glucose > 180.0);
    CHECK(ro.records.size() == 1440);
}

TEST_CASE("horizon zero gives an empty trajectory") {
    const CausalGraph& g = glucose_insulin_preset();
    const auto ro = rollout([](const EnvObservation&, int) { return 0.0; }, g, base_patient(g), 0,
                            1);
    CHECK(ro.records.empty());
    CHECK(ro.mean_reward == 0.0);
    CHECK_THROWS(rollout([](const EnvObservation&, int) { return 0.0; }, g, base_patient(g), 1441,
                         1));
}

TEST_CASE("identical seeds give byte-identical trajectories") {
    const CausalGraph& g = glucose_insulin_preset();
    auto policy = [](const EnvObservation& o, int t) {
        return o.glucose_mgdl > 150 ? 0.01 : (t % 7 == 0 ? 0.002 : 0.0);
    };
    const auto a = rollout(policy, g, base_patient(g), 600, 77);
    const auto b = rollout(policy, g, base_patient(g), 600, 77);
    CHECK(serialize_records(a.records) == serialize_records(b.records));
    const auto c = rollout(policy, g, base_patient(g), 600, 78);
    CHECK(serialize_records(a.records) != serialize_records(c.records));
}

TEST_CASE("all nodes stay non-negative along dosed, fed trajectories") {
    const CausalGraph& g = glucose_insulin_preset();
    const auto cohort = synthetic_cohort(g, 4, 21);
    for (const auto& p : cohort) {
        EnvConfig cfg;
        GraphEnv env(g, p, cfg);
        env.reset(p.id);
        Rng rng(p.id * 13u);
        for (int t = 0; t < 1440; ++t) {
            env.step(rng.uniform(0.0, 0.05));
            if (env.failed()) break;
            CHECK(env.state().minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("emission is a pure function of the underlying state") {
    const CausalGraph& g = glucose_insulin_preset();
    GraphEnv env(g, base_patient(g), EnvConfig{});
    env.reset(4);
    for (int t = 0; t < 100; ++t) env.step(t % 3 == 0 ? 0.01 : 0.0);
    const auto obs1 = env.observe();
    const auto obs2 = env.observe();  // no state change between calls
    CHECK(obs1.glucose_mgdl == obs2.glucose_mgdl);
    CHECK(obs1.meal_carbs_g == obs2.meal_carbs_g);
    CHECK(obs1.prev_insulin_U == obs2.prev_insulin_U);
    // observed dims are exactly the observed nodes of the state vector
    const auto observed = g.observed_nodes();
    CHECK(obs1.glucose_mgdl == env.state()[observed[0]]);
    CHECK(obs1.meal_carbs_g == env.state()[observed[1]]);
    CHECK(obs1.prev_insulin_U == env.state()[observed[2]]);
}

TEST_CASE("trajectory export round-trips through the dataset loader") {
    const CausalGraph& g = glucose_insulin_preset();
    const auto ro = rollout([](const EnvObservation&, int t) { return t % 2 ? 0.004 : 0.0; }, g,
                            base_patient(g), 200, 5);
    const std::string path = "sim_roundtrip.csv";
    save_records(ro.records, path);
    const OfflineDataset ds = load_dataset(path);
    CHECK(ds.rejects.empty());
    CHECK(serialize_records(ds.records) == serialize_records(ro.records));
    std::remove(path.c_str());
}

TEST_CASE("synthetic cohort jitters every slot within 20 percent") {
    const CausalGraph& g = glucose_insulin_preset();
    const auto cohort = synthetic_cohort(g, 10, 99);
    CHECK(cohort.size() == 10);
    const Eigen::VectorXd base = g.base_theta();
    for (const auto& p : cohort) {
        CHECK(p.id >= 1);
        for (int k = 0; k < base.size(); ++k) {
            CHECK(p.theta_true[k] >= 0.8 * base[k] - 1e-12);
            CHECK(p.theta_true[k] <= 1.2 * base[k] + 1e-12);
        }
        const double basal_glucose = p.basal_state[g.node_index("G_sc")];
        CHECK(basal_glucose > 0.0);
        CHECK(basal_glucose <= 600.0);
    }
}
