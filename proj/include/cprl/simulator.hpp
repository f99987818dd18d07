#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "cprl/causal_graph.hpp"
#include "cprl/record.hpp"
#include "cprl/rng.hpp"

namespace cprl {

inline constexpr int kEpisodeMinutes = 1440;
inline constexpr double kUnitPmolPerKg = 6000.0 / 70.0;  // 1 U for a 70 kg adult
inline constexpr int kBolusSpreadMin = 5;

struct MealSlot {
    int window_lo_min = 0;  // inclusive
    int window_hi_min = 0;  // inclusive
    double base_carbs_g = 0.0;
};

struct MealPlan {
    std::vector<MealSlot> slots;    // strictly increasing, disjoint windows
    double noise_frac = 0.1;        // carbs multiplier drawn from [1-f, 1+f]
    bool noise_enabled = true;
};

MealPlan default_meal_plan();

struct MealEvent {
    int time_min = 0;
    double carbs_g = 0.0;
};

struct PatientParams {
    int id = 0;
    Eigen::VectorXd theta_true;
    Eigen::VectorXd basal_state;
    MealPlan meals;
};

// Exactly one event per plan slot, times uniform in the windows and carbs
// scaled by u ~ U[1-f, 1+f]; fully determined by day_seed.
std::vector<MealEvent> meal_schedule(std::uint64_t day_seed, const MealPlan& plan);
std::vector<MealEvent> meal_schedule(std::uint64_t day_seed, const PatientParams& patient);

// +1 inside the normative range, quadratic penalty outside, floored at -100.
double reward(double glucose_mgdl);

struct BandRewardSpec {
    double lo = 70.0;
    double hi = 180.0;
    double scale = 20.0;
    double floor = -100.0;
};

double band_reward(double value, const BandRewardSpec& spec);

// Zero-input fixed point of the graph dynamics (const channel only).
Eigen::VectorXd steady_state(const CausalGraph& graph, const Eigen::VectorXd& theta);

// Base adult calibrated to the preset's slot values; cohort members jitter
// every slot by +-jitter around it (ids 1..count).
PatientParams base_patient(const CausalGraph& graph);
std::vector<PatientParams> synthetic_cohort(const CausalGraph& graph, int count,
                                            std::uint64_t seed, double jitter = 0.2);

// Table 1 insulin kinetics, m = [m1, m2, m3, m4].
struct InsulinDerivs {
    double dI_l = 0.0;
    double dI_p = 0.0;
};
InsulinDerivs insulin_subsystem_derivs(double I_l, double I_p, double I_in_pmol_kg_min,
                                       const std::array<double, 4>& m);
// (I_l, I_p) with both derivatives zero under a constant infusion.
std::pair<double, double> insulin_subsystem_steady_state(double I_in_pmol_kg_min,
                                                         const std::array<double, 4>& m);

enum class Integrator { Rk4, Euler };

struct EnvConfig {
    double dt_min = 0.25;           // substep of the 1-minute advance
    Integrator integrator = Integrator::Rk4;
    double overflow_guard = 1e9;
    double max_action_U = 0.05;     // per-minute dose box [0, max]
    BandRewardSpec reward_spec;     // defaults to the 70-180 mg/dL band
    std::string glucose_node = "G_sc";  // node the reward is computed on
    std::string meal_channel = "meal";
    std::string infusion_channel = "infusion";
    std::string dose_channel = "dose";
    bool meals_enabled = true;
    bool action_profile = true;         // spread each dose over kBolusSpreadMin
    double action_unit = kUnitPmolPerKg;  // channel units per action unit
};

// One hidden-parameter environment: integrates the causal-graph ODEs minute
// by minute, schedules noisy meals, pins hold nodes to their channel events
// and emits the observed node values. Instances own all state; independent
// instances may run concurrently.
class GraphEnv {
  public:
    GraphEnv(const CausalGraph& graph, PatientParams patient, EnvConfig config = {});

    void reset(std::uint64_t episode_seed);

    struct StepResult {
        EnvObservation obs;
        double reward = 0.0;
        bool failed = false;
    };
    // Advances exactly one minute. `action_U` is clipped to the action box.
    StepResult step(double action_U);

    EnvObservation observe() const;
    // Observed node values in graph node order (any graph, any width).
    Eigen::VectorXd observe_vector() const;
    const Eigen::VectorXd& state() const { return state_; }
    int minute() const { return minute_; }
    bool failed() const { return failed_; }
    const PatientParams& patient() const { return patient_; }
    const CausalGraph& graph() const { return graph_; }
    const EnvConfig& config() const { return config_; }
    const std::vector<MealEvent>& meals() const { return meals_; }

    // Process-wide instrumentation used by the offline-purity tests.
    static std::uint64_t total_steps();

  private:
    Eigen::VectorXd derivative(const Eigen::VectorXd& s, double infusion_rate) const;
    void advance_minute(double infusion_rate);

    const CausalGraph& graph_;
    PatientParams patient_;
    EnvConfig config_;
    Eigen::MatrixXd system_;          // A(theta)
    Eigen::VectorXd const_drive_;     // B(theta) restricted to the const channel
    Eigen::VectorXd infusion_gain_;   // B(theta) column of the infusion channel
    std::vector<int> observed_;
    int glucose_node_ = -1;
    int meal_node_ = -1;              // hold node of the meal channel (-1 if none)
    int dose_node_ = -1;              // hold node of the dose channel (-1 if none)
    Eigen::VectorXd state_;
    std::vector<MealEvent> meals_;
    std::deque<double> pending_bolus_;  // pmol/kg/min contributions of recent doses
    int minute_ = 0;
    bool failed_ = false;
};

using ActionFn = std::function<double(const EnvObservation& obs, int minute)>;

struct Rollout {
    std::vector<TransitionRecord> records;
    bool failed = false;
    double mean_reward = 0.0;
    double time_in_range = 0.0;  // fraction of minutes with glucose in band
};

Rollout rollout(const ActionFn& policy, const CausalGraph& graph, const PatientParams& patient,
                int horizon, std::uint64_t seed, EnvConfig config = {});

// Newline-delimited trajectory export (see record.hpp for the field order).
void save_records(const std::vector<TransitionRecord>& records, const std::string& path);

// Generic vector-observation collection for model learning on any graph.
using VecActionFn = std::function<double(const Eigen::VectorXd& obs, int minute)>;

struct VecRollout {
    std::vector<Transition> steps;
    bool failed = false;
    double mean_reward = 0.0;
    double time_in_range = 0.0;
};

VecRollout rollout_vec(const VecActionFn& policy, const CausalGraph& graph,
                       const PatientParams& patient, int horizon, std::uint64_t seed,
                       EnvConfig config = {});

}  // namespace cprl
