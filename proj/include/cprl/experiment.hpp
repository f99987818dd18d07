#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cprl/dataset.hpp"
#include "cprl/ensemble.hpp"

namespace cprl {

struct ExperimentConfig {
    std::string mode;  // simulate | train-dynamics | train-policy | evaluate |
                       // analyze-noise | export-graph
    std::string graph_path;   // empty -> builtin glucose-insulin preset
    std::string dataset_path;
    std::string output_dir = ".";
    std::optional<std::uint64_t> seed;  // required for stochastic modes

    // simulate
    int patients = 3;
    int episodes = 10;
    int horizon = kEpisodeMinutes;
    std::uint64_t cohort_seed = 7;
    std::string behavior = "heuristic";  // heuristic | random | zero
    NoiseSpec noise;                     // zero spec = no corruption artifacts

    // train-dynamics
    std::string variant = "hip_bcpd";  // hip_bcpd | mlp | rnn
    int epochs = 40;
    double lr = 0.05;

    // train-policy
    int members = 5;
    int outer_iters = 2;
    int inner_iters = 40;
    bool online = false;

    // evaluate
    std::string policy_kind = "trained";  // trained | random | zero | basal
    std::string policy_path;              // trained: policy checkpoint
    std::string model_path;               // trained: reconstruction member
    int eval_seeds = 6;

    // export-graph
    int partition_m = 4;
};

// Every problem found, before any work starts; empty means valid.
std::vector<std::string> validate_config(const ExperimentConfig& config);

struct ConfigError : std::runtime_error {
    explicit ConfigError(std::vector<std::string> errors_arg);
    std::vector<std::string> errors;
};

struct EvalRow {
    std::string method;
    int env_id = 0;
    double mean_step_reward = 0.0;
    double time_in_range = 0.0;
};

struct MethodSummary {
    std::string method;
    double average = 0.0;   // mean of the per-env rows
    double avedev = 0.0;    // mean absolute deviation from that mean
    double mean_tir = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<MethodSummary> summaries() const;
    std::string to_csv() const;  // rows, then one summary line per method
};

// Dispatches on config.mode, writes artifacts under output_dir and returns
// the report (empty for modes that produce none). Deterministic given seeds.
EvalReport run_experiment(const ExperimentConfig& config);

// DOT export with one cluster per subsystem and one edge per mechanism arrow;
// theta, when given, is recorded as slot-value comments.
std::string export_graph(const CausalGraph& graph, const SkillPartition& partition,
                         const Eigen::VectorXd* theta = nullptr);

struct CurveTable {
    std::vector<std::string> variants;             // column order
    std::vector<std::vector<double>> loss_by_epoch;  // NaN marks a missing epoch
    std::string to_csv() const;
};

// Aligns loss_<variant>.csv files (epoch,loss lines) found in a directory.
CurveTable learning_curves(const std::string& log_dir);

// Behavior policies for dataset generation and baselines.
ActionFn make_behavior_policy(const std::string& kind, double max_action,
                              std::uint64_t seed);

// Constant infusion rate (channel units/min) that holds `node` at `target`
// in the zero-meal steady state; the dynamics are linear in the drive.
double infusion_for_target(const CausalGraph& graph, const Eigen::VectorXd& theta,
                           const std::string& node, double target);
Eigen::VectorXd steady_state_with_infusion(const CausalGraph& graph, const Eigen::VectorXd& theta,
                                           const std::string& channel, double rate);

// Goal-catalog target levels for the glucose preset (glucose setpoints plus
// insulin operating levels derived from the base patient).
std::vector<TargetLevels> glucose_target_levels(const CausalGraph& graph);

}  // namespace cprl
