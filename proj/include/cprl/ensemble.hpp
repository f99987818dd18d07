#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "cprl/hip_bcpd.hpp"
#include "cprl/policy.hpp"
#include "cprl/simulator.hpp"

namespace cprl {

struct GateConfig {
    double threshold = 0.70;
    int patience = 5;
};

enum class GateDecision { Continue, Stop };

// Fraction of members whose performance strictly improved.
double improvement_ratio(std::span<const double> perf_old, std::span<const double> perf_new);

// Stop exactly when the latest `patience` consecutive ratios all sit below
// the threshold; any ratio at or above it resets the streak.
GateDecision gate_decision_from(std::span<const double> ratios, const GateConfig& gate);

struct EnsembleState {
    std::vector<DynamicsModel> members;
    std::deque<double> ratio_history;  // most recent last, trimmed to patience
    GateConfig gate;
};

// Pushes the ratio into the state's history and applies the stop rule.
GateDecision gate_decision(EnsembleState& state, double ratio);

struct TrainerConfig {
    int members = 5;
    int outer_iters = 2;
    int inner_iters = 40;

    // member fitting
    std::string dynamics_kind = "hip_bcpd";  // hip_bcpd | mlp | rnn
    int baseline_hidden = 32;
    HipBcpdConfig hip;
    int model_epochs = 25;
    double model_lr = 0.05;
    int model_window = 16;
    int model_batches_per_epoch = 64;

    // fictitious rollouts and policy optimization
    int fict_horizon = 240;
    int eta_rollouts = 5;
    int windows_per_update = 8;
    double policy_lr = 3e-3;
    double goal_shaping = 0.25;  // weight of the scaled goal term in shaped rewards
    PolicyConfig policy;
    GoalCatalog catalog;         // empty -> built from `targets` at train time
    std::vector<TargetLevels> targets;
    int partition_m = 4;

    GateConfig gate;
    std::uint64_t seed = 0;

    // environment conventions shared with the fictitious rollouts
    BandRewardSpec reward_spec;
    int reward_obs_dim = 0;   // observed dim carrying the reward signal
    int meal_obs_dim = -1;    // observed dim pinned by exogenous meal events
    MealPlan fict_meals;      // injected into fictitious rollouts (empty slots = none)

    // online collection (Alg 1)
    int online_episodes_per_iter = 1;
    int online_horizon = kEpisodeMinutes;
};

struct TrainLogEntry {
    int outer = 0;
    int inner = 0;
    int member = 0;
    double eta_old = 0.0;
    double eta_new = 0.0;
    double model_mse = 0.0;
    double ratio = 0.0;
    char decision = 'c';  // 'c' continue, 's' stop
};

std::string format_log_entry(const TrainLogEntry& e);
void save_train_log(const std::vector<TrainLogEntry>& log, const std::string& path);

struct TrainResult {
    HierarchicalPolicy policy;
    SkillPartition partition;
    EnsembleState ensemble;
    std::vector<TrainLogEntry> log;
    std::vector<std::string> warnings;
    std::string stop_reason;      // "budget" or "gate"
    std::vector<int> env_ids;     // label -> external env id
};

// Alg-2 style offline loop: members are fitted on their own seeded mini-batch
// streams of the fixed dataset, the policy is optimized purely on fictitious
// rollouts, and the improvement gate bounds each inner loop. No environment
// is ever constructed or stepped.
TrainResult train_offline(const CausalGraph& graph, const MultiEnvData& data, TrainerConfig cfg);

// Alg-1 style online loop: each outer iteration collects fresh episodes from
// the environment family with the current (stochastic) policy, then proceeds
// as in the offline inner loop.
TrainResult train_online(const CausalGraph& graph, const std::vector<PatientParams>& cohort,
                         TrainerConfig cfg, EnvConfig env_config = {});

// Rolls the policy inside one ensemble member. Exogenous meal events are
// pinned onto the meal observation dim, mirroring the environment's hold rule.
class FictitiousEnv {
  public:
    FictitiousEnv(const DynamicsModel& member, HiddenParams theta, Eigen::VectorXd obs0,
                  int start_minute, std::vector<MealEvent> meals, BandRewardSpec reward_spec,
                  int reward_dim, int meal_dim);

    struct Step {
        Eigen::VectorXd obs;
        double reward = 0.0;
    };
    Step step(double action);

    const Eigen::VectorXd& obs() const { return obs_; }
    int minute() const { return minute_; }
    // Reconstructed full state when the member carries the prompt, otherwise
    // the basal template with observed coordinates substituted.
    Eigen::VectorXd reconstructed_state() const;

  private:
    const DynamicsModel* member_;
    HiddenParams theta_;
    DynamicsModel::Carry carry_;
    Eigen::VectorXd obs_;
    std::vector<MealEvent> meals_;
    BandRewardSpec reward_spec_;
    int reward_dim_;
    int meal_dim_;
    int minute_;
};

// Greedy policy evaluation inside one member: mean return over seeded
// fictitious rollouts (the eta-hat of the gate).
double fictitious_return(const CausalGraph& graph, const DynamicsModel& member,
                         HierarchicalPolicy& policy, const MultiEnvData& data,
                         const TrainerConfig& cfg, std::uint64_t seed);

// Evaluation adapter: drives a trained policy in a real environment, using a
// prompt-carrying member for state reconstruction. Returns a fresh stateful
// ActionFn (one per episode).
ActionFn make_model_policy(HierarchicalPolicy& policy, const DynamicsModel& recon_member,
                           HiddenParams theta);

}  // namespace cprl
