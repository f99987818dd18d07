#include "cprl/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cprl {

namespace {

std::atomic<std::uint64_t> g_total_steps{0};

void check_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

}  // namespace

MealPlan default_meal_plan() {
    MealPlan plan;
    plan.slots = {{420, 480, 45.0}, {720, 780, 70.0}, {1080, 1140, 60.0}};
    plan.noise_frac = 0.1;
    plan.noise_enabled = true;
    return plan;
}

std::vector<MealEvent> meal_schedule(std::uint64_t day_seed, const MealPlan& plan) {
    Rng rng(day_seed);
    std::vector<MealEvent> events;
    events.reserve(plan.slots.size());
    for (const auto& slot : plan.slots) {
        MealEvent ev;
        const int span = slot.window_hi_min - slot.window_lo_min + 1;
        ev.time_min = slot.window_lo_min + static_cast<int>(rng.uniform_index(span));
        const double u = plan.noise_enabled
                             ? rng.uniform(1.0 - plan.noise_frac, 1.0 + plan.noise_frac)
                             : 1.0;
        ev.carbs_g = slot.base_carbs_g * u;
        events.push_back(ev);
    }
    return events;
}

std::vector<MealEvent> meal_schedule(std::uint64_t day_seed, const PatientParams& patient) {
    return meal_schedule(day_seed, patient.meals);
}

double band_reward(double value, const BandRewardSpec& spec) {
    if (value >= spec.lo && value <= spec.hi) return 1.0;
    const double d = value < spec.lo ? spec.lo - value : value - spec.hi;
    const double penalty = (d / spec.scale) * (d / spec.scale);
    return -std::min(-spec.floor, penalty);
}

double reward(double glucose_mgdl) { return band_reward(glucose_mgdl, BandRewardSpec{}); }

Eigen::VectorXd steady_state(const CausalGraph& graph, const Eigen::VectorXd& theta) {
    const int cc = graph.channel_index("const");
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<int>(graph.channels.size()));
    if (cc >= 0) u[cc] = 1.0;
    const Eigen::MatrixXd a = graph.system_matrix(theta);
    const Eigen::VectorXd b = graph.input_matrix(theta) * u;
    // Solver noise can leave -1e-18 in coordinates that are exactly zero.
    return a.fullPivLu().solve(-b).cwiseMax(0.0);
}

PatientParams base_patient(const CausalGraph& graph) {
    PatientParams p;
    p.id = 0;
    p.theta_true = graph.base_theta();
    p.basal_state = steady_state(graph, p.theta_true);
    p.meals = default_meal_plan();
    return p;
}

std::vector<PatientParams> synthetic_cohort(const CausalGraph& graph, int count,
                                            std::uint64_t seed, double jitter) {
    std::vector<PatientParams> cohort;
    cohort.reserve(count);
    Rng rng(seed);
    const Eigen::VectorXd base = graph.base_theta();
    for (int i = 0; i < count; ++i) {
        Rng member = rng.split(static_cast<std::uint64_t>(i) + 1);
        PatientParams p;
        p.id = i + 1;
        p.theta_true = base;
        for (int k = 0; k < base.size(); ++k) {
            p.theta_true[k] = base[k] * member.uniform(1.0 - jitter, 1.0 + jitter);
            if (p.theta_true[k] < 0) {
                throw std::runtime_error("synthetic_cohort: negative rate parameter");
            }
        }
        p.basal_state = steady_state(graph, p.theta_true);
        p.meals = default_meal_plan();
        const int g = graph.node_index("G_sc");
        if (g >= 0) {
            const double basal_glucose = p.basal_state[g];
            if (!(basal_glucose > 0.0 && basal_glucose <= 600.0)) {
                throw std::runtime_error("synthetic_cohort: basal glucose out of (0, 600] for id " +
                                         std::to_string(p.id));
            }
        }
        cohort.push_back(std::move(p));
    }
    return cohort;
}

InsulinDerivs insulin_subsystem_derivs(double I_l, double I_p, double I_in_pmol_kg_min,
                                       const std::array<double, 4>& m) {
    for (double v : {I_l, I_p, I_in_pmol_kg_min, m[0], m[1], m[2], m[3]}) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument("insulin_subsystem_derivs: non-finite input");
        }
    }
    InsulinDerivs d;
    d.dI_l = -(m[0] + m[2]) * I_l + m[1] * I_p + I_in_pmol_kg_min;
    d.dI_p = -(m[1] + m[3]) * I_p + m[0] * I_l;
    return d;
}

std::pair<double, double> insulin_subsystem_steady_state(double I_in_pmol_kg_min,
                                                         const std::array<double, 4>& m) {
    Eigen::Matrix2d a;
    a << -(m[0] + m[2]), m[1], m[0], -(m[1] + m[3]);
    Eigen::Vector2d b(-I_in_pmol_kg_min, 0.0);
    const Eigen::Vector2d s = a.fullPivLu().solve(b);
    return {s[0], s[1]};
}

GraphEnv::GraphEnv(const CausalGraph& graph, PatientParams patient, EnvConfig config)
    : graph_(graph), patient_(std::move(patient)), config_(std::move(config)) {
    if (patient_.theta_true.size() != graph_.param_slot_count()) {
        throw std::invalid_argument("GraphEnv: theta length does not match graph slots");
    }
    if ((patient_.theta_true.array() < 0).any()) {
        throw std::invalid_argument("GraphEnv: rate parameters must be >= 0");
    }
    check_finite(patient_.basal_state, "GraphEnv basal state");
    system_ = graph_.system_matrix(patient_.theta_true);
    const Eigen::MatrixXd b = graph_.input_matrix(patient_.theta_true);
    const int n = graph_.node_count();
    const int cc = graph_.channel_index("const");
    const int ic = graph_.channel_index(config_.infusion_channel);
    const_drive_ = cc >= 0 ? Eigen::VectorXd(b.col(cc)) : Eigen::VectorXd::Zero(n);
    infusion_gain_ = ic >= 0 ? Eigen::VectorXd(b.col(ic)) : Eigen::VectorXd::Zero(n);
    observed_ = graph_.observed_nodes();
    glucose_node_ = graph_.node_index(config_.glucose_node);
    if (glucose_node_ < 0) throw std::invalid_argument("GraphEnv: unknown reward node");
    for (int v = 0; v < n; ++v) {
        if (!graph_.nodes[v].is_hold()) continue;
        if (graph_.nodes[v].hold_channel == config_.meal_channel) meal_node_ = v;
        if (graph_.nodes[v].hold_channel == config_.dose_channel) dose_node_ = v;
    }
    reset(0);
}

void GraphEnv::reset(std::uint64_t episode_seed) {
    state_ = patient_.basal_state;
    minute_ = 0;
    failed_ = false;
    pending_bolus_.clear();
    meals_.clear();
    if (config_.meals_enabled && meal_node_ >= 0) {
        meals_ = meal_schedule(Rng(episode_seed).split(0x6d65616cULL).bits(), patient_);
    }
}

EnvObservation GraphEnv::observe() const {
    EnvObservation obs;
    obs.glucose_mgdl = state_[glucose_node_];
    obs.meal_carbs_g = meal_node_ >= 0 ? state_[meal_node_] : 0.0;
    obs.prev_insulin_U = dose_node_ >= 0 ? state_[dose_node_] : 0.0;
    return obs;
}

Eigen::VectorXd GraphEnv::observe_vector() const {
    Eigen::VectorXd obs(observed_.size());
    for (std::size_t i = 0; i < observed_.size(); ++i) obs[static_cast<Eigen::Index>(i)] = state_[observed_[i]];
    return obs;
}

Eigen::VectorXd GraphEnv::derivative(const Eigen::VectorXd& s, double infusion_rate) const {
    return system_ * s + const_drive_ + infusion_rate * infusion_gain_;
}

void GraphEnv::advance_minute(double infusion_rate) {
    const double dt = config_.dt_min;
    const int substeps = static_cast<int>(std::lround(1.0 / dt));
    for (int i = 0; i < substeps; ++i) {
        if (config_.integrator == Integrator::Euler) {
            state_ += dt * derivative(state_, infusion_rate);
        } else {
            const Eigen::VectorXd k1 = derivative(state_, infusion_rate);
            const Eigen::VectorXd k2 = derivative(state_ + 0.5 * dt * k1, infusion_rate);
            const Eigen::VectorXd k3 = derivative(state_ + 0.5 * dt * k2, infusion_rate);
            const Eigen::VectorXd k4 = derivative(state_ + dt * k3, infusion_rate);
            state_ += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        state_ = state_.cwiseMax(0.0);  // mass-like nodes never go negative
    }
}

GraphEnv::StepResult GraphEnv::step(double action_U) {
    if (failed_) throw std::logic_error("GraphEnv::step called after failure");
    g_total_steps.fetch_add(1, std::memory_order_relaxed);

    const double a = std::clamp(action_U, 0.0, config_.max_action_U);
    double infusion = 0.0;
    if (config_.action_profile) {
        pending_bolus_.push_back(a * config_.action_unit / kBolusSpreadMin);
        if (static_cast<int>(pending_bolus_.size()) > kBolusSpreadMin) pending_bolus_.pop_front();
        for (double r : pending_bolus_) infusion += r;
    } else {
        infusion = a * config_.action_unit;
    }

    advance_minute(infusion);
    ++minute_;

    // Hold nodes are pinned to their channel's event magnitude: the dose
    // channel fires every minute, the meal channel at scheduled minutes.
    if (dose_node_ >= 0) state_[dose_node_] = a;
    if (meal_node_ >= 0) {
        for (const auto& ev : meals_) {
            if (ev.time_min == minute_) state_[meal_node_] = ev.carbs_g;
        }
    }

    StepResult result;
    if (!state_.allFinite() || state_.cwiseAbs().maxCoeff() > config_.overflow_guard) {
        failed_ = true;
        result.failed = true;
        result.obs = observe();
        result.reward = config_.reward_spec.floor;
        return result;
    }
    result.obs = observe();
    result.reward = band_reward(state_[glucose_node_], config_.reward_spec);
    return result;
}

std::uint64_t GraphEnv::total_steps() { return g_total_steps.load(std::memory_order_relaxed); }

Rollout rollout(const ActionFn& policy, const CausalGraph& graph, const PatientParams& patient,
                int horizon, std::uint64_t seed, EnvConfig config) {
    if (horizon > kEpisodeMinutes) {
        throw std::invalid_argument("rollout: horizon exceeds the 1440-minute episode limit");
    }
    Rollout out;
    GraphEnv env(graph, patient, std::move(config));
    env.reset(seed);
    double reward_sum = 0.0;
    int in_range = 0;
    for (int t = 0; t < horizon; ++t) {
        const EnvObservation obs = env.observe();
        const double a = policy(obs, t);
        const auto step = env.step(a);
        TransitionRecord rec;
        rec.env_id = patient.id;
        rec.timestamp_min = t;
        rec.o = obs;
        rec.action_U = std::clamp(a, 0.0, env.config().max_action_U);
        rec.o_next = step.obs;
        rec.reward = step.reward;
        out.records.push_back(rec);
        reward_sum += step.reward;
        const auto& spec = env.config().reward_spec;
        if (step.obs.glucose_mgdl >= spec.lo && step.obs.glucose_mgdl <= spec.hi) ++in_range;
        if (step.failed) {
            out.failed = true;
            break;
        }
    }
    const auto steps = static_cast<double>(out.records.size());
    out.mean_reward = steps > 0 ? reward_sum / steps : 0.0;
    out.time_in_range = steps > 0 ? in_range / steps : 0.0;
    return out;
}

void save_records(const std::vector<TransitionRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
    for (const auto& rec : records) out << format_record(rec) << '\n';
}

VecRollout rollout_vec(const VecActionFn& policy, const CausalGraph& graph,
                       const PatientParams& patient, int horizon, std::uint64_t seed,
                       EnvConfig config) {
    if (horizon > kEpisodeMinutes) {
        throw std::invalid_argument("rollout_vec: horizon exceeds the 1440-minute episode limit");
    }
    VecRollout out;
    GraphEnv env(graph, patient, std::move(config));
    env.reset(seed);
    double reward_sum = 0.0;
    int in_range = 0;
    for (int t = 0; t < horizon; ++t) {
        Transition tr;
        tr.o = env.observe_vector();
        tr.timestamp = t;
        const double a = policy(tr.o, t);
        const auto step = env.step(a);
        tr.action = std::clamp(a, 0.0, env.config().max_action_U);
        tr.o_next = env.observe_vector();
        out.steps.push_back(std::move(tr));
        reward_sum += step.reward;
        const auto& spec = env.config().reward_spec;
        if (step.obs.glucose_mgdl >= spec.lo && step.obs.glucose_mgdl <= spec.hi) ++in_range;
        if (step.failed) {
            out.failed = true;
            break;
        }
    }
    const auto steps = static_cast<double>(out.steps.size());
    out.mean_reward = steps > 0 ? reward_sum / steps : 0.0;
    out.time_in_range = steps > 0 ? in_range / steps : 0.0;
    return out;
}

}  // namespace cprl
