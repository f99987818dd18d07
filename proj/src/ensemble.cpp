#include "cprl/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>

namespace cprl {

double improvement_ratio(std::span<const double> perf_old, std::span<const double> perf_new) {
    if (perf_old.size() != perf_new.size()) {
        throw std::invalid_argument("improvement_ratio: member count mismatch");
    }
    if (perf_old.empty()) throw std::invalid_argument("improvement_ratio: needs M >= 1");
    int improved = 0;
    for (std::size_t m = 0; m < perf_old.size(); ++m) {
        if (perf_new[m] > perf_old[m]) ++improved;  // strict
    }
    return static_cast<double>(improved) / static_cast<double>(perf_old.size());
}

GateDecision gate_decision_from(std::span<const double> ratios, const GateConfig& gate) {
    if (static_cast<int>(ratios.size()) < gate.patience) return GateDecision::Continue;
    for (std::size_t i = ratios.size() - static_cast<std::size_t>(gate.patience);
         i < ratios.size(); ++i) {
        if (ratios[i] >= gate.threshold) return GateDecision::Continue;
    }
    return GateDecision::Stop;
}

GateDecision gate_decision(EnsembleState& state, double ratio) {
    state.ratio_history.push_back(ratio);
    while (static_cast<int>(state.ratio_history.size()) > state.gate.patience) {
        state.ratio_history.pop_front();
    }
    const std::vector<double> recent(state.ratio_history.begin(), state.ratio_history.end());
    return gate_decision_from(recent, state.gate);
}

std::string format_log_entry(const TrainLogEntry& e) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%c", e.outer, e.inner,
                  e.member, e.eta_old, e.eta_new, e.model_mse, e.ratio, e.decision);
    return buf;
}

void save_train_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write train log: " + path);
    out << "outer,inner,member,eta_old,eta_new,model_mse,ratio,decision\n";
    for (const auto& e : log) out << format_log_entry(e) << '\n';
}

FictitiousEnv::FictitiousEnv(const DynamicsModel& member, HiddenParams theta,
                             Eigen::VectorXd obs0, int start_minute, std::vector<MealEvent> meals,
                             BandRewardSpec reward_spec, int reward_dim, int meal_dim)
    : member_(&member),
      theta_(std::move(theta)),
      carry_(member.initial_carry()),
      obs_(std::move(obs0)),
      meals_(std::move(meals)),
      reward_spec_(reward_spec),
      reward_dim_(reward_dim),
      meal_dim_(meal_dim),
      minute_(start_minute) {}

FictitiousEnv::Step FictitiousEnv::step(double action) {
    Eigen::VectorXd next = member_->predict(obs_, action, theta_, carry_);
    next = next.cwiseMax(0.0);
    ++minute_;
    if (meal_dim_ >= 0) {
        for (const auto& ev : meals_) {
            if (ev.time_min == minute_) next[meal_dim_] = ev.carbs_g;
        }
    }
    obs_ = std::move(next);
    Step out;
    out.obs = obs_;
    out.reward = band_reward(obs_[reward_dim_], reward_spec_);
    return out;
}

Eigen::VectorXd FictitiousEnv::reconstructed_state() const {
    if (const auto* hip = std::get_if<HipBcpd>(&member_->impl)) {
        return hip->reconstruct(obs_, carry_.hip);
    }
    // Baselines carry no prompt; fall back to the observation itself.
    return obs_;
}

namespace {

// Baseline dynamics expose only the observation, but the hierarchical policy
// expects a full node vector; embed the observation into the basal template.
Eigen::VectorXd embed_obs(const CausalGraph& graph, const Eigen::VectorXd& basal,
                          const Eigen::VectorXd& obs) {
    Eigen::VectorXd s = basal;
    const auto observed = graph.observed_nodes();
    for (std::size_t i = 0; i < observed.size(); ++i) s[observed[i]] = obs[static_cast<Eigen::Index>(i)];
    return s;
}

struct FictContext {
    const CausalGraph* graph;
    Eigen::VectorXd basal;
    const MultiEnvData* data;
    const TrainerConfig* cfg;
};

Eigen::VectorXd policy_state(const FictContext& ctx, const FictitiousEnv& env,
                             const DynamicsModel& member) {
    if (member.kind() == DynKind::HipBcpd) return env.reconstructed_state();
    return embed_obs(*ctx.graph, ctx.basal, env.obs());
}

// Seeded fictitious episode start: a dataset record plus a fresh meal day.
FictitiousEnv make_fict_env(const FictContext& ctx, const DynamicsModel& member,
                            const HiddenParams& theta, const EnvData& env_data, Rng& rng) {
    const auto& steps = env_data.steps;
    const auto idx = rng.uniform_index(steps.size());
    const int start_minute = static_cast<int>(steps[idx].timestamp);
    std::vector<MealEvent> meals;
    if (ctx.cfg->meal_obs_dim >= 0 && !ctx.cfg->fict_meals.slots.empty()) {
        meals = meal_schedule(rng.bits(), ctx.cfg->fict_meals);
    }
    return FictitiousEnv(member, theta, steps[idx].o, start_minute, std::move(meals),
                         ctx.cfg->reward_spec, ctx.cfg->reward_obs_dim, ctx.cfg->meal_obs_dim);
}

HiddenParams member_theta(const DynamicsModel& member, int env_label) {
    if (const auto* hip = std::get_if<HipBcpd>(&member.impl)) return hip->infer_theta(env_label);
    HiddenParams hp;
    hp.env_label = env_label;
    return hp;
}

double shaped_reward(const FictContext& ctx, HierarchicalPolicy& policy, double env_reward,
                     const Eigen::VectorXd& s_next, const HighLevelAction& act) {
    if (ctx.cfg->goal_shaping <= 0.0) return env_reward;
    const auto& nodes = policy.partition().subsystems[static_cast<std::size_t>(act.subsystem)];
    double dist = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const double scale = policy.node_scales()[nodes[i]];
        const double d = (s_next[nodes[i]] - act.goal[static_cast<Eigen::Index>(i)]) / scale;
        dist += d * d;
    }
    dist /= static_cast<double>(nodes.size());
    return env_reward - ctx.cfg->goal_shaping * dist;
}

struct CollectedWindows {
    std::map<int, std::vector<LowWindow>> low;  // per subsystem
    std::vector<HighStep> high;
};

// One exploration window of C steps inside one member.
void collect_window(const FictContext& ctx, HierarchicalPolicy& policy,
                    const DynamicsModel& member, const HiddenParams& theta,
                    const EnvData& env_data, Rng& rng, CollectedWindows& out,
                    int* prev_subsystem) {
    FictitiousEnv fict = make_fict_env(ctx, member, theta, env_data, rng);
    const int C = policy.config().C;

    Eigen::VectorXd s = policy_state(ctx, fict, member);
    const HighLevelAction act = policy.high_act(s, &rng);
    HighStep high;
    high.features = policy.high_features(s);
    high.catalog_index = act.catalog_index;
    high.prev_subsystem = *prev_subsystem;

    LowWindow window;
    window.subsystem = act.subsystem;
    std::vector<double> shaped;
    shaped.reserve(C);
    const Skill& skill = policy.skill_for(act.subsystem);
    for (int i = 0; i < C; ++i) {
        LowStep step;
        step.features = policy.skill_features(s, act);
        int action_index = 0;
        const double a = policy.low_act(skill, s, act, &rng, &action_index);
        step.action_index = action_index;
        const auto result = fict.step(a);
        s = policy_state(ctx, fict, member);
        step.reward = shaped_reward(ctx, policy, result.reward, s, act);
        shaped.push_back(step.reward);
        window.steps.push_back(std::move(step));
    }
    high.window_return = high_reward(shaped, policy.config().gamma, C);
    out.low[act.subsystem].push_back(std::move(window));
    out.high.push_back(std::move(high));
    *prev_subsystem = act.subsystem;
}

}  // namespace

double fictitious_return(const CausalGraph& graph, const DynamicsModel& member,
                         HierarchicalPolicy& policy, const MultiEnvData& data,
                         const TrainerConfig& cfg, std::uint64_t seed) {
    FictContext ctx{&graph, steady_state(graph, graph.base_theta()), &data, &cfg};
    Rng rng(seed);
    double total = 0.0;
    for (int r = 0; r < cfg.eta_rollouts; ++r) {
        const auto& env_data = data[rng.uniform_index(data.size())];
        const HiddenParams hp = member_theta(member, env_data.env_label);
        FictitiousEnv fict = make_fict_env(ctx, member, hp, env_data, rng);
        PolicyRuntime rt;
        double ret = 0.0;
        for (int t = 0; t < cfg.fict_horizon; ++t) {
            const Eigen::VectorXd s = policy_state(ctx, fict, member);
            const double a = policy.act(rt, s, nullptr);
            ret += fict.step(a).reward;
        }
        total += ret;
    }
    return total / cfg.eta_rollouts;
}

namespace {

DynamicsModel make_member(const CausalGraph& graph, const TrainerConfig& cfg, int env_count,
                          int member_index) {
    const std::uint64_t seed = Rng(cfg.seed).split(0x6d656d00ull + member_index).bits();
    if (cfg.dynamics_kind == "hip_bcpd") {
        return make_hip_bcpd(graph, env_count, cfg.hip, seed);
    }
    const int obs_dim = static_cast<int>(graph.observed_nodes().size());
    return make_baseline(cfg.dynamics_kind, obs_dim, seed, cfg.baseline_hidden);
}

HierarchicalPolicy make_policy(const CausalGraph& graph, const TrainerConfig& cfg,
                               SkillPartition partition) {
    GoalCatalog catalog = cfg.catalog;
    if (catalog.entries.empty()) {
        const Eigen::VectorXd basal = steady_state(graph, graph.base_theta());
        catalog = make_goal_catalog(graph, partition, basal, cfg.targets);
    }
    return HierarchicalPolicy(graph, std::move(partition), std::move(catalog), cfg.policy,
                              Rng(cfg.seed).split(0x706f6cull).bits());
}

SkillPartition default_partition(const CausalGraph& graph, const TrainerConfig& cfg) {
    const int m = std::min<int>(cfg.partition_m, graph.node_count());
    auto candidates = enumerate_partitions(graph, m, 50000, cfg.seed);
    if (candidates.empty()) throw std::runtime_error("no connected partition with m parts");
    // Deterministic heuristic: prefer the candidate with the most balanced
    // subsystem sizes, ties broken by canonical order.
    std::size_t best = 0;
    double best_spread = 1e18;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double lo = 1e18, hi = 0;
        for (const auto& sub : candidates[i].subsystems) {
            lo = std::min(lo, static_cast<double>(sub.size()));
            hi = std::max(hi, static_cast<double>(sub.size()));
        }
        const double spread = hi - lo;
        if (spread < best_spread) {
            best_spread = spread;
            best = i;
        }
    }
    return candidates[best];
}

struct InnerLoopIO {
    std::vector<TrainLogEntry>* log;
    EnsembleState* ensemble;
};

// Shared inner loop of Algorithms 1 and 2: fictitious collection, policy
// updates, per-member eta-hat estimation, improvement gate.
void run_inner_loop(const CausalGraph& graph, const MultiEnvData& data, TrainerConfig& cfg,
                    HierarchicalPolicy& policy, EnsembleState& ensemble, int outer,
                    std::vector<TrainLogEntry>& log, Rng& rng, std::string& stop_reason) {
    FictContext ctx{&graph, steady_state(graph, graph.base_theta()), &data, &cfg};
    const int M = static_cast<int>(ensemble.members.size());
    std::vector<double> model_mse(M, 0.0);
    for (int m = 0; m < M; ++m) model_mse[m] = dynamics_loss(ensemble.members[m], data);

    const std::uint64_t eta_seed_base = rng.split(0x657461ull).bits();
    std::vector<double> eta_old(M, 0.0);
    for (int m = 0; m < M; ++m) {
        eta_old[m] = fictitious_return(graph, ensemble.members[m], policy, data, cfg,
                                       eta_seed_base + static_cast<std::uint64_t>(m));
    }

    int prev_subsystem = -1;
    for (int inner = 0; inner < cfg.inner_iters; ++inner) {
        CollectedWindows windows;
        Rng collect_rng = rng.split(0x636f6cull + static_cast<std::uint64_t>(inner));
        for (int w = 0; w < cfg.windows_per_update; ++w) {
            const auto& member = ensemble.members[w % M];
            const auto& env_data = data[collect_rng.uniform_index(data.size())];
            const HiddenParams hp = member_theta(member, env_data.env_label);
            collect_window(ctx, policy, member, hp, env_data, collect_rng, windows,
                           &prev_subsystem);
        }
        for (auto& [subsystem, low_windows] : windows.low) {
            policy.update_low(subsystem, low_windows, cfg.policy_lr);
        }
        policy.update_high(windows.high, cfg.policy.fcr_weight, cfg.policy_lr);

        std::vector<double> eta_new(M, 0.0);
        for (int m = 0; m < M; ++m) {
            eta_new[m] = fictitious_return(graph, ensemble.members[m], policy, data, cfg,
                                           eta_seed_base + static_cast<std::uint64_t>(m));
        }
        const double ratio = improvement_ratio(eta_old, eta_new);
        const GateDecision decision = gate_decision(ensemble, ratio);
        for (int m = 0; m < M; ++m) {
            TrainLogEntry e;
            e.outer = outer;
            e.inner = inner;
            e.member = m;
            e.eta_old = eta_old[m];
            e.eta_new = eta_new[m];
            e.model_mse = model_mse[m];
            e.ratio = ratio;
            e.decision = decision == GateDecision::Stop ? 's' : 'c';
            log.push_back(e);
        }
        eta_old = eta_new;
        if (decision == GateDecision::Stop) {
            stop_reason = "gate";
            return;
        }
    }
    stop_reason = "budget";
}

void fit_members(EnsembleState& ensemble, const MultiEnvData& data, const TrainerConfig& cfg,
                 std::vector<std::string>& warnings, int outer) {
    std::size_t transitions = 0;
    for (const auto& env : data) transitions += env.steps.size();
    const std::size_t need = static_cast<std::size_t>(ensemble.members.size()) *
                             static_cast<std::size_t>(cfg.model_window);
    if (transitions < need && outer == 0) {
        warnings.push_back("dataset too small for " + std::to_string(ensemble.members.size()) +
                           " disjoint mini-batch streams; streams overlap");
    }
    for (std::size_t m = 0; m < ensemble.members.size(); ++m) {
        FitConfig fit;
        fit.epochs = cfg.model_epochs;
        fit.lr = cfg.model_lr;
        fit.window = cfg.model_window;
        fit.batches_per_epoch = cfg.model_batches_per_epoch;
        fit.seed = Rng(cfg.seed)
                       .split(0x666974ull + m * 1000 + static_cast<std::uint64_t>(outer))
                       .bits();
        fit_dynamics(ensemble.members[m], data, fit);
    }
}

}  // namespace

TrainResult train_offline(const CausalGraph& graph, const MultiEnvData& data, TrainerConfig cfg) {
    if (data.empty()) throw std::invalid_argument("train_offline: dataset has no environments");
    TrainResult result;
    result.partition = default_partition(graph, cfg);
    result.policy = make_policy(graph, cfg, result.partition);
    result.ensemble.gate = cfg.gate;
    const int env_count = static_cast<int>(data.size());
    for (int m = 0; m < cfg.members; ++m) {
        result.ensemble.members.push_back(make_member(graph, cfg, env_count, m));
    }
    for (const auto& env : data) result.env_ids.push_back(env.env_label);
    result.stop_reason = "budget";

    Rng rng(cfg.seed);
    for (int outer = 0; outer < cfg.outer_iters; ++outer) {
        fit_members(result.ensemble, data, cfg, result.warnings, outer);
        run_inner_loop(graph, data, cfg, result.policy, result.ensemble, outer, result.log, rng,
                       result.stop_reason);
    }
    return result;
}

TrainResult train_online(const CausalGraph& graph, const std::vector<PatientParams>& cohort,
                         TrainerConfig cfg, EnvConfig env_config) {
    if (cohort.empty()) throw std::invalid_argument("train_online: empty cohort");
    TrainResult result;
    result.partition = default_partition(graph, cfg);
    result.policy = make_policy(graph, cfg, result.partition);
    result.ensemble.gate = cfg.gate;
    for (std::size_t m = 0; m < static_cast<std::size_t>(cfg.members); ++m) {
        result.ensemble.members.push_back(
            make_member(graph, cfg, static_cast<int>(cohort.size()), static_cast<int>(m)));
    }
    for (const auto& p : cohort) result.env_ids.push_back(p.id);
    result.stop_reason = "budget";

    MultiEnvData data(cohort.size());
    for (std::size_t j = 0; j < cohort.size(); ++j) data[j].env_label = static_cast<int>(j);

    Rng rng(cfg.seed);
    const Eigen::VectorXd basal = steady_state(graph, graph.base_theta());
    for (int outer = 0; outer < cfg.outer_iters; ++outer) {
        // Collect real samples with the current stochastic policy. State
        // reconstruction during collection uses member 0 when it carries the
        // prompt, otherwise the basal embedding.
        for (int ep = 0; ep < cfg.online_episodes_per_iter; ++ep) {
            for (std::size_t j = 0; j < cohort.size(); ++j) {
                Rng explore = rng.split(0x657870ull + j * 977 + static_cast<std::uint64_t>(ep));
                PolicyRuntime rt;
                DynamicsModel::Carry carry = result.ensemble.members[0].initial_carry();
                const HiddenParams hp =
                    member_theta(result.ensemble.members[0], static_cast<int>(j));
                auto& member0 = result.ensemble.members[0];
                auto policy_fn = [&](const Eigen::VectorXd& obs, int) {
                    Eigen::VectorXd s;
                    if (const auto* hip = std::get_if<HipBcpd>(&member0.impl)) {
                        s = hip->reconstruct(obs, carry.hip);
                    } else {
                        s = embed_obs(graph, basal, obs);
                    }
                    const double a = result.policy.act(rt, s, &explore);
                    member0.predict(obs, a, hp, carry);
                    return a;
                };
                auto ro = rollout_vec(policy_fn, graph, cohort[j], cfg.online_horizon,
                                      rng.split(0x726f6cull + j).bits(), env_config);
                auto& steps = data[j].steps;
                steps.insert(steps.end(), ro.steps.begin(), ro.steps.end());
            }
        }
        fit_members(result.ensemble, data, cfg, result.warnings, outer);
        run_inner_loop(graph, data, cfg, result.policy, result.ensemble, outer, result.log, rng,
                       result.stop_reason);
    }
    return result;
}

ActionFn make_model_policy(HierarchicalPolicy& policy, const DynamicsModel& recon_member,
                           HiddenParams theta) {
    auto carry = std::make_shared<DynamicsModel::Carry>(recon_member.initial_carry());
    auto rt = std::make_shared<PolicyRuntime>();
    return [&policy, &recon_member, theta, carry, rt](const EnvObservation& obs, int) {
        const Eigen::Vector3d o = obs_to_vector(obs);
        Eigen::VectorXd s;
        if (const auto* hip = std::get_if<HipBcpd>(&recon_member.impl)) {
            s = hip->reconstruct(o, carry->hip);
        } else {
            s = o;
        }
        const double a = policy.act(*rt, s, nullptr);
        recon_member.predict(o, a, theta, *carry);
        return a;
    };
}

}  // namespace cprl
