#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "cprl/hip_bcpd.hpp"
#include "cprl/simulator.hpp"
#include "support.hpp"

using namespace cprl;
using cprl::testing::family_env_config;
using cprl::testing::family_episodes;
using cprl::testing::family_graph;
using cprl::testing::family_thetas;
using cprl::testing::family_training_data;

namespace {

// The Table-style insulin exchange prompt: one observed drive, two latent
// compartments, four patient-specific slots.
const CausalGraph& insulin_prompt() {
    static const CausalGraph g = parse_graph_spec(R"(graph insulin_prompt
channel const
channel infusion
node I_in unit=pmol/kg/min observed
node I_l unit=pmol/kg latent
node I_p unit=pmol/kg latent
slot m_1 base=0.19
slot m_2 base=0.484
slot m_3 base=0.285
slot m_4 base=0.194
knowledge liver-utilization target=I_l
  term -1 slot:m_1 I_l
  term -1 slot:m_3 I_l
  term 1 slot:m_2 I_p
  input infusion gain=const:1
end
knowledge plasma-exchange target=I_p
  term -1 slot:m_2 I_p
  term -1 slot:m_4 I_p
  term 1 slot:m_1 I_l
end
)");
    return g;
}

HipBcpdConfig raw_action_config() {
    HipBcpdConfig cfg;
    cfg.action_channel = "infusion";
    cfg.action_profile = false;
    cfg.action_unit = 1.0;
    return cfg;
}

HipBcpdConfig family_config() {
    HipBcpdConfig cfg;
    cfg.action_channel = "drive";
    cfg.action_profile = false;
    cfg.action_unit = 1.0;
    return cfg;
}

// Perfect transitions generated by the model itself under theta.
EnvData self_consistent_env(const HipBcpd& hip, const Eigen::VectorXd& theta, int label,
                            int steps, std::uint64_t seed) {
    EnvData env;
    env.env_label = label;
    Rng rng(seed);
    HipBcpd::Carry carry = hip.initial_carry();
    Eigen::VectorXd o = Eigen::VectorXd::Constant(hip.obs_dim(), 1.0);
    HiddenParams hp{theta, label};
    for (int t = 0; t < steps; ++t) {
        Transition tr;
        tr.o = o;
        tr.action = rng.uniform(0.0, 1.0);
        tr.timestamp = t + 1;  // strictly increasing: one episode
        const auto pred = hip.reconstruct_and_predict(o, tr.action, hp, carry);
        tr.o_next = pred.predicted_obs;
        o = pred.predicted_obs;
        env.steps.push_back(tr);
    }
    return env;
}

}  // namespace

TEST_CASE("the insulin prompt exposes exactly four hidden-parameter slots") {
    HipBcpd hip(insulin_prompt(), 2, raw_action_config(), 1);
    const HiddenParams hp = hip.infer_theta(0);
    CHECK(hp.theta.size() == 4);
    CHECK(hp.env_label == 0);
    CHECK_THROWS(hip.infer_theta(5));
    // same environment queried twice without training in between
    const HiddenParams again = hip.infer_theta(0);
    for (int k = 0; k < 4; ++k) CHECK(hp.theta[k] == again.theta[k]);
    // empty context for an unknown environment is an error
    CHECK_THROWS(hip.infer_theta(std::span<const Transition>{}));
}

TEST_CASE("zero theta leaves only the exogenous input in the latent derivative") {
    HipBcpd hip(insulin_prompt(), 1, raw_action_config(), 1);
    HipBcpd::Carry carry = hip.initial_carry();
    carry.state.setZero();
    HiddenParams hp{Eigen::VectorXd::Zero(4), 0};
    Eigen::VectorXd o(1);
    o << 0.0;
    const double infusion = 2.5;
    const auto pred = hip.reconstruct_and_predict(o, infusion, hp, carry);
    const int il = insulin_prompt().node_index("I_l");
    const int ip = insulin_prompt().node_index("I_p");
    CHECK(pred.reconstructed[il] == doctest::Approx(infusion * hip.config().dt).epsilon(1e-15));
    CHECK(pred.reconstructed[ip] == 0.0);
}

TEST_CASE("two-node chain performs the hand-checked Euler update") {
    const CausalGraph g = parse_graph_spec(R"(graph chain2
channel const
node s1 unit=au observed
node s2 unit=au observed
slot w base=1
knowledge flow target=s2
  term 1 slot:w s1
end
)");
    HipBcpd hip(g, 1, HipBcpdConfig{}, 1);
    HipBcpd::Carry carry = hip.initial_carry();
    Eigen::VectorXd o(2);
    o << 3.0, 10.0;
    HiddenParams hp{Eigen::VectorXd::Ones(1), 0};
    const auto pred = hip.reconstruct_and_predict(o, 0.0, hp, carry);
    CHECK(pred.predicted_obs[0] == 3.0);          // s1 has no dynamics
    CHECK(pred.predicted_obs[1] == 10.0 + 3.0);   // s2 + dt * s1
}

TEST_CASE("reconstruct keeps the observed coordinates exactly") {
    const CausalGraph& g = glucose_insulin_preset();
    HipBcpd hip(g, 1, HipBcpdConfig{}, 1);
    const HipBcpd::Carry carry = hip.initial_carry();
    Eigen::Vector3d o(137.25, 42.0, 0.013);
    const Eigen::VectorXd s = hip.reconstruct(o, carry);
    CHECK(s.size() == g.node_count());
    const auto observed = g.observed_nodes();
    CHECK(s[observed[0]] == 137.25);
    CHECK(s[observed[1]] == 42.0);
    CHECK(s[observed[2]] == 0.013);
    // latent coordinates come from the carry
    for (int v : g.latent_nodes()) CHECK(s[v] == carry.state[v]);
}

TEST_CASE("ground-truth theta reproduces simulator steps within tolerance") {
    const CausalGraph& g = glucose_insulin_preset();
    PatientParams patient = base_patient(g);
    patient.meals.slots = {{40, 40, 50.0}};
    patient.meals.noise_enabled = false;
    GraphEnv env(g, patient, EnvConfig{});
    env.reset(3);

    HipBcpd hip(g, 1, HipBcpdConfig{}, 1);
    hip.set_theta(0, patient.theta_true);
    const HiddenParams hp = hip.infer_theta(0);
    HipBcpd::Carry carry = hip.initial_carry();

    REQUIRE(env.meals().size() == 1);
    const int meal_minute = env.meals()[0].time_min;
    Rng rng(4);
    for (int t = 0; t < 240; ++t) {
        carry.state = env.state();  // teacher-forced latents from the simulator
        const Eigen::VectorXd o = env.observe_vector();
        const double action = (t % 11 == 0) ? rng.uniform(0.0, 0.02) : 0.0;
        const auto pred = hip.reconstruct_and_predict(o, action, hp, carry);
        env.step(action);
        const Eigen::VectorXd truth = env.observe_vector();
        CHECK(std::abs(pred.predicted_obs[0] - truth[0]) /
                  std::max(1.0, std::abs(truth[0])) <
              1e-3);
        if (t + 1 != meal_minute) {
            // between events the meal signal follows its knowledge ODE
            CHECK(std::abs(pred.predicted_obs[1] - truth[1]) /
                      std::max(1.0, std::abs(truth[1])) <
                  1e-3);
        }
        CHECK(pred.predicted_obs[2] == truth[2]);  // dose recorder is pinned
    }
}

TEST_CASE("dynamics_loss hand values: perfect, constant offset, two environments") {
    const CausalGraph g = parse_graph_spec(R"(graph decay1
channel const
node x unit=au observed
slot k base=0.1
knowledge fade target=x
  term -1 slot:k x
end
)");
    DynamicsModel model = make_hip_bcpd(g, 2, HipBcpdConfig{}, 1);
    auto& hip = std::get<HipBcpd>(model.impl);
    hip.set_theta(0, Eigen::VectorXd::Constant(1, 0.1));
    hip.set_theta(1, Eigen::VectorXd::Constant(1, 0.1));

    EnvData env0 = self_consistent_env(hip, hip.theta(0), 0, 40, 7);
    CHECK(dynamics_loss(model, {env0}) == doctest::Approx(0.0).epsilon(1e-18));

    // constant prediction error of 0.5 -> MSE 0.25
    EnvData off = env0;
    for (auto& tr : off.steps) tr.o_next[0] += 0.5;
    CHECK(dynamics_loss(model, {off}) == doctest::Approx(0.25).epsilon(1e-12));

    // per-env MSEs 0.1 and 0.3 sum to 0.4
    EnvData env1 = self_consistent_env(hip, hip.theta(1), 1, 40, 8);
    EnvData a = env0, b = env1;
    for (auto& tr : a.steps) tr.o_next[0] += std::sqrt(0.1);
    for (auto& tr : b.steps) tr.o_next[0] += std::sqrt(0.3);
    CHECK(dynamics_loss(model, {a, b}) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK_THROWS(dynamics_loss(model, {}));
}

TEST_CASE("theta gradient matches finite differences on the family graph") {
    const EnvData env = family_episodes(0, family_thetas()[0], 1, 120, 5);
    HipBcpd hip(family_graph(), 1, family_config(), 1);
    Eigen::VectorXd theta(4);
    theta << 0.15, 0.25, 0.18, 0.31;
    const Eigen::VectorXd grad = hip.theta_grad(env, theta, 0, static_cast<int>(env.steps.size()));
    for (int k = 0; k < 4; ++k) {
        const double h = 1e-6;
        Eigen::VectorXd up = theta, down = theta;
        up[k] += h;
        down[k] -= h;
        const double fd = (hip.env_mse(env, up) - hip.env_mse(env, down)) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-8});
        CHECK(std::abs(grad[k] - fd) / denom < 1e-4);
    }
}

TEST_CASE("fitting the family identifies per-environment hidden parameters") {
    const MultiEnvData data = family_training_data(3, 2, 150, 13);
    DynamicsModel model = make_hip_bcpd(family_graph(), 3, family_config(), 5);
    FitConfig fit;
    fit.epochs = 40;
    fit.lr = 0.02;
    fit.seed = 99;
    const FitResult result = fit_dynamics(model, data, fit);
    CHECK(result.loss_curve.front() > result.loss_curve.back());
    CHECK(result.loss_curve.back() <= result.loss_curve.front());
    CHECK(result.loss_curve.back() < 1e-4);

    const auto& hip = std::get<HipBcpd>(model.impl);
    const auto thetas = family_thetas();
    for (int j = 0; j < 3; ++j) {
        const Eigen::VectorXd got = hip.theta(j);
        for (int k = 0; k < 4; ++k) {
            CHECK(std::abs(got[k] - thetas[j][k]) / thetas[j][k] < 0.10);
        }
    }
}

TEST_CASE("environments differing in one slot differ most in that slot after fitting") {
    Eigen::VectorXd theta_a(4), theta_b(4);
    theta_a << 0.20, 0.20, 0.20, 0.20;
    theta_b << 0.20, 0.45, 0.20, 0.20;  // slot 1 carries the difference
    MultiEnvData data;
    data.push_back(family_episodes(0, theta_a, 2, 150, 21));
    data.push_back(family_episodes(1, theta_b, 2, 150, 22));
    DynamicsModel model = make_hip_bcpd(family_graph(), 2, family_config(), 5);
    FitConfig fit;
    fit.epochs = 40;
    fit.lr = 0.02;
    fit.seed = 17;
    fit_dynamics(model, data, fit);
    const auto& hip = std::get<HipBcpd>(model.impl);
    const Eigen::VectorXd delta = (hip.theta(0) - hip.theta(1)).cwiseAbs();
    int argmax = 0;
    delta.maxCoeff(&argmax);
    CHECK(argmax == 1);
}

TEST_CASE("zero epochs leave the model unchanged") {
    const MultiEnvData data = family_training_data(2, 1, 60, 31);
    DynamicsModel model = make_hip_bcpd(family_graph(), 2, family_config(), 5);
    const std::uint64_t before = model.param_hash();
    FitConfig fit;
    fit.epochs = 0;
    const FitResult result = fit_dynamics(model, data, fit);
    CHECK(model.param_hash() == before);
    CHECK(result.loss_curve.size() == 1);
}

TEST_CASE("divergence is reported with the epoch index") {
    const MultiEnvData data = family_training_data(1, 1, 60, 32);
    DynamicsModel model = make_hip_bcpd(family_graph(), 1, family_config(), 5);
    FitConfig fit;
    fit.epochs = 5;
    fit.lr = 1e200;
    fit.clip_norm = 0.0;  // disable the safety clip to provoke blow-up
    try {
        fit_dynamics(model, data, fit);
        FAIL("expected divergence");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("context window inference recovers theta for an unseen environment") {
    const auto thetas = family_thetas();
    const EnvData held_out = family_episodes(3, thetas[3], 1, 100, 41);
    HipBcpd hip(family_graph(), 1, family_config(), 5);
    const std::span<const Transition> context(held_out.steps.data(), 16);
    const HiddenParams hp = hip.infer_theta(context);
    for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(hp.theta[k] - thetas[3][k]) / thetas[3][k] < 0.05);
    }
}

TEST_CASE("baselines: dimensions, hidden state, trainability") {
    DynamicsModel mlp = make_baseline("mlp", 5, 3);
    CHECK(mlp.kind() == DynKind::Mlp);
    CHECK(std::get<MlpDynamics>(mlp.impl).net().input_dim() == 6);  // |o| + |a|
    CHECK(std::get<MlpDynamics>(mlp.impl).net().output_dim() == 5);

    DynamicsModel rnn = make_baseline("rnn", 5, 3);
    auto& cell = std::get<RnnDynamics>(rnn.impl);
    Eigen::VectorXd h1 = cell.initial_state();
    Eigen::VectorXd h2 = cell.initial_state();
    const Eigen::VectorXd o = Eigen::VectorXd::Ones(5);
    cell.predict(o, 0.3, h1);                       // advance one history
    const Eigen::VectorXd p1 = cell.predict(o, 0.3, h1);
    const Eigen::VectorXd p2 = cell.predict(o, 0.3, h2);
    CHECK((p1 - p2).norm() > 0.0);  // prediction depends on carried state

    CHECK_THROWS(make_baseline("transformer", 5, 3));

    // both train through the shared fit path, all environments pooled
    const MultiEnvData data = family_training_data(2, 1, 80, 51);
    for (auto* model : {&mlp, &rnn}) {
        FitConfig fit;
        fit.epochs = 8;
        fit.lr = 0.02;
        fit.seed = 5;
        const FitResult r = fit_dynamics(*model, data, fit);
        CHECK(r.loss_curve.back() < r.loss_curve.front());
    }
}

TEST_CASE("training never mutates the shared causal prompt") {
    const CausalGraph& g = family_graph();
    const std::uint64_t hash_before = graph_hash(g);
    const MultiEnvData data = family_training_data(2, 1, 80, 61);
    DynamicsModel model = make_hip_bcpd(g, 2, family_config(), 5);
    FitConfig fit;
    fit.epochs = 10;
    fit.lr = 0.02;
    fit_dynamics(model, data, fit);
    CHECK(graph_hash(g) == hash_before);
}

TEST_CASE("dynamics checkpoints round-trip and reject wrong graphs") {
    const MultiEnvData data = family_training_data(2, 1, 60, 71);
    DynamicsModel model = make_hip_bcpd(family_graph(), 2, family_config(), 5);
    FitConfig fit;
    fit.epochs = 4;
    fit.lr = 0.05;
    fit_dynamics(model, data, fit);
    const std::string path = "dyn_roundtrip.ckpt";
    save_dynamics_checkpoint(model, graph_hash(family_graph()), path);
    const DynamicsModel loaded =
        load_dynamics_checkpoint(family_graph(), path, graph_hash(family_graph()));
    CHECK(loaded.param_hash() == model.param_hash());
    CHECK_THROWS(load_dynamics_checkpoint(family_graph(), path, 12345));
    std::remove(path.c_str());
}
