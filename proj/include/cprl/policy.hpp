#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cprl/causal_graph.hpp"
#include "cprl/nets.hpp"
#include "cprl/rng.hpp"

namespace cprl {

struct PolicyConfig {
    int C = 30;               // steps between high-level decisions
    double gamma = 0.99;
    double fcr_weight = 0.0;  // cascade-consistency reuse regularizer (stand-in)
    std::vector<double> action_grid = {0.0, 0.002, 0.004, 0.006, 0.009, 0.013, 0.02, 0.035};
    double action_lo = 0.0;
    double action_hi = 0.05;  // action-space box, low-level output is clipped to it
    int hidden = 32;
    double entropy_bonus = 0.01;
};

struct HighLevelAction {
    int subsystem = 0;
    Eigen::VectorXd goal;  // target values for the subsystem's nodes, node order
    int catalog_index = 0;
};

// The discrete set of (subsystem, goal) pairs the high level chooses from.
struct GoalCatalog {
    std::vector<HighLevelAction> entries;
};

struct TargetLevels {
    std::string node;
    std::vector<double> levels;
};

// One catalog entry per subsystem and per combination of listed target levels
// inside it; nodes without listed levels sit at their basal values.
GoalCatalog make_goal_catalog(const CausalGraph& graph, const SkillPartition& partition,
                              const Eigen::VectorXd& basal,
                              const std::vector<TargetLevels>& targets);

// Eq-style window aggregation: (1/C) * sum_{i=1..C} gamma^i * low[i-1].
double high_reward(const std::vector<double>& low_rewards, double gamma, int C);

// Negated squared goal distance; 0 exactly when the goal is reached.
double low_reward(const Eigen::VectorXd& s_next_restricted, const Eigen::VectorXd& goal);

// One low-level controller, reusable across environments through its
// subsystem signature.
struct Skill {
    std::uint64_t signature = 0;
    int subsystem = -1;
    Mlp actor;   // [s_sub, goal] (scaled) -> logits over the action grid
    Mlp critic;  // same input -> value estimate
};

class SkillLibrary {
  public:
    Skill& ensure(std::uint64_t signature, int subsystem, int input_dim, int actions, int hidden,
                  Rng& rng);
    Skill& at(std::uint64_t signature);
    const Skill& at(std::uint64_t signature) const;
    bool contains(std::uint64_t signature) const;
    std::size_t size() const { return skills_.size(); }
    std::map<std::uint64_t, Skill>& storage() { return skills_; }
    const std::map<std::uint64_t, Skill>& storage() const { return skills_; }

  private:
    std::map<std::uint64_t, Skill> skills_;
};

struct LowStep {
    Eigen::VectorXd features;
    int action_index = 0;
    double reward = 0.0;  // shaped per-step low reward supplied by the trainer
};

struct LowWindow {
    int subsystem = 0;
    std::vector<LowStep> steps;
};

struct HighStep {
    Eigen::VectorXd features;
    int catalog_index = 0;
    int prev_subsystem = -1;
    double window_return = 0.0;  // high_reward over the completed window
};

struct UpdateStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double reuse_loss = 0.0;
    double entropy = 0.0;
    double mean_advantage = 0.0;
};

// Per-trajectory decision bookkeeping (the policy object itself stays const
// during action selection).
struct PolicyRuntime {
    HighLevelAction current;
    int steps_left = 0;
    int prev_subsystem = -1;
    bool initialized = false;
};

// High-level controller plus the skill library for one causal graph and one
// fixed skill partition. Stochastic (seeded) when an exploration Rng is
// given, greedy and deterministic otherwise.
class HierarchicalPolicy {
  public:
    HierarchicalPolicy() = default;
    HierarchicalPolicy(const CausalGraph& graph, SkillPartition partition, GoalCatalog catalog,
                       PolicyConfig config, std::uint64_t seed);

    const PolicyConfig& config() const { return config_; }
    const SkillPartition& partition() const { return partition_; }
    const GoalCatalog& catalog() const { return catalog_; }
    int subsystem_count() const { return static_cast<int>(partition_.subsystems.size()); }

    Eigen::VectorXd high_features(const Eigen::VectorXd& s) const;
    Eigen::VectorXd high_logits(const Eigen::VectorXd& s) const;
    HighLevelAction high_act(const Eigen::VectorXd& s, Rng* explore) const;

    Eigen::VectorXd skill_features(const Eigen::VectorXd& s, const HighLevelAction& a) const;
    double low_act(const Skill& skill, const Eigen::VectorXd& s, const HighLevelAction& a,
                   Rng* explore, int* action_index = nullptr) const;

    // Full pipeline: re-decides every C steps, then drives the chosen skill.
    double act(PolicyRuntime& rt, const Eigen::VectorXd& s, Rng* explore,
               int* action_index = nullptr);

    Skill& skill_for(int subsystem);
    const Skill& skill_for(int subsystem) const;
    SkillLibrary& library() { return library_; }

    // One gradient step each; buffers must be non-empty.
    UpdateStats update_high(const std::vector<HighStep>& buffer, double fcr_weight, double lr);
    UpdateStats update_low(int subsystem, const std::vector<LowWindow>& buffer, double lr);

    // Cascade-consistency prior over catalog entries given the previously
    // actuated subsystem (uniform when prev < 0).
    Eigen::VectorXd reuse_prior(int prev_subsystem) const;

    const Eigen::VectorXd& node_scales() const { return scales_; }
    Mlp& high_actor() { return high_actor_; }
    Mlp& high_critic() { return high_critic_; }

    void save(const std::string& path, std::uint64_t graph_hash) const;
    static HierarchicalPolicy load(const CausalGraph& graph, const std::string& path,
                                   std::uint64_t expected_graph_hash);

  private:
    const CausalGraph* graph_ = nullptr;
    SkillPartition partition_;
    GoalCatalog catalog_;
    PolicyConfig config_;
    Eigen::VectorXd scales_;  // per-node feature scale
    Mlp high_actor_;
    Mlp high_critic_;
    SkillLibrary library_;
    std::vector<std::vector<int>> downstream_;  // per subsystem
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
int sample_categorical(const Eigen::VectorXd& probs, Rng& rng);
int argmax_index(const Eigen::VectorXd& v);

}  // namespace cprl
