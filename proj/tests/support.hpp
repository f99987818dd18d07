#pragma once

#include <string>
#include <vector>

#include "cprl/causal_graph.hpp"
#include "cprl/ensemble.hpp"
#include "cprl/simulator.hpp"

namespace cprl::testing {

// Five-node linear chain driven through x0; all nodes observed, four hidden
// parameters. The x4 DC gain is 2/(0.027) * t1*t2*t3/t0, so environments with
// different theta need visibly different drive levels.
inline std::string family_graph_text() {
    return R"(graph linear_family
radius 2
bound 8
channel const
channel drive
node x0 unit=au observed
node x1 unit=au observed
node x2 unit=au observed
node x3 unit=au observed
node x4 unit=au observed
slot t_0 base=0.2
slot t_1 base=0.2
slot t_2 base=0.2
slot t_3 base=0.2
knowledge drive-decay target=x0
  term -1 slot:t_0 x0
  input drive gain=const:1
end
knowledge transfer-01 target=x1
  term 1 slot:t_1 x0
end
knowledge decay-1 target=x1
  term -1 const:0.3 x1
end
knowledge transfer-12 target=x2
  term 1 slot:t_2 x1
end
knowledge decay-2 target=x2
  term -1 const:0.3 x2
end
knowledge transfer-23 target=x3
  term 1 slot:t_3 x2
end
knowledge decay-3 target=x3
  term -1 const:0.3 x3
end
knowledge transfer-34 target=x4
  term 1 const:0.5 x3
end
knowledge sink-decay target=x4
  term -1 const:0.25 x4
end
)";
}

inline const CausalGraph& family_graph() {
    static const CausalGraph g = parse_graph_spec(family_graph_text());
    return g;
}

// Ground-truth hidden parameters, all inside [0.05, 0.5].
inline std::vector<Eigen::VectorXd> family_thetas() {
    std::vector<Eigen::VectorXd> thetas;
    auto push = [&](std::initializer_list<double> v) {
        Eigen::VectorXd t(4);
        int i = 0;
        for (double x : v) t[i++] = x;
        thetas.push_back(t);
    };
    push({0.10, 0.20, 0.30, 0.25});
    push({0.30, 0.15, 0.20, 0.20});
    push({0.20, 0.40, 0.10, 0.30});
    push({0.40, 0.10, 0.25, 0.15});  // held-out environment
    return thetas;
}

// The family's ground truth IS the one-minute Euler map of the chain (a
// discrete-time linear system), so identification has no integration floor.
inline EnvConfig family_env_config() {
    EnvConfig cfg;
    cfg.glucose_node = "x4";
    cfg.reward_spec = {0.8, 1.2, 0.2, -100.0};
    cfg.meals_enabled = false;
    cfg.action_profile = false;
    cfg.action_unit = 1.0;
    cfg.max_action_U = 2.0;
    cfg.infusion_channel = "drive";
    cfg.integrator = Integrator::Euler;
    cfg.dt_min = 1.0;
    return cfg;
}

inline PatientParams family_patient(int id, const Eigen::VectorXd& theta) {
    PatientParams p;
    p.id = id;
    p.theta_true = theta;
    p.basal_state = steady_state(family_graph(), theta);
    p.meals.slots.clear();
    return p;
}

// Seeded excitation episodes: piecewise-constant random drive levels.
inline EnvData family_episodes(int label, const Eigen::VectorXd& theta, int episodes,
                               int horizon, std::uint64_t seed) {
    EnvData env;
    env.env_label = label;
    const PatientParams patient = family_patient(label + 1, theta);
    Rng rng(seed);
    for (int ep = 0; ep < episodes; ++ep) {
        Rng drive_rng = rng.split(100 + ep);
        double level = drive_rng.uniform(0.0, 1.5);
        auto policy = [&](const Eigen::VectorXd&, int t) {
            if (t % 25 == 0) level = drive_rng.uniform(0.0, 1.5);
            return level;
        };
        auto ro = rollout_vec(policy, family_graph(), patient, horizon, rng.split(200 + ep).bits(),
                              family_env_config());
        env.steps.insert(env.steps.end(), ro.steps.begin(), ro.steps.end());
    }
    return env;
}

inline MultiEnvData family_training_data(int envs = 3, int episodes = 3, int horizon = 200,
                                         std::uint64_t seed = 11) {
    MultiEnvData data;
    const auto thetas = family_thetas();
    for (int j = 0; j < envs; ++j) {
        data.push_back(family_episodes(j, thetas[static_cast<std::size_t>(j)], episodes, horizon,
                                       seed + static_cast<std::uint64_t>(j)));
    }
    return data;
}

inline TrainerConfig family_trainer_config(std::uint64_t seed) {
    TrainerConfig cfg;
    cfg.seed = seed;
    cfg.partition_m = 2;
    cfg.reward_obs_dim = 4;  // x4
    cfg.meal_obs_dim = -1;
    cfg.reward_spec = {0.8, 1.2, 0.2, -100.0};
    cfg.fict_meals.slots.clear();
    cfg.fict_horizon = 120;
    cfg.policy.C = 10;
    cfg.policy.action_grid = {0.0, 0.05, 0.1, 0.2, 0.35, 0.6, 1.0, 1.5, 2.0};
    cfg.policy.action_hi = 2.0;
    cfg.targets = {{"x4", {1.0}}};
    cfg.hip.action_channel = "drive";
    cfg.hip.action_profile = false;
    cfg.hip.dose_channel = "";
    return cfg;
}

}  // namespace cprl::testing
