#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "cprl/causal_graph.hpp"
#include "cprl/nets.hpp"
#include "cprl/record.hpp"
#include "cprl/rng.hpp"

namespace cprl {

struct HiddenParams {
    Eigen::VectorXd theta;
    int env_label = -1;
};

struct HipBcpdConfig {
    double dt = 1.0;                      // Euler substep per recorded transition
    std::string action_channel = "infusion";
    bool action_profile = true;           // spread each dose like the environment
    double action_unit = 6000.0 / 70.0;   // channel units per action unit
    std::string dose_channel = "dose";    // hold nodes here are pinned to the raw action
    int context_window = 16;
    double ridge = 1e-8;
    double theta_init = 0.1;
    double init_jitter = 0.02;            // seeded spread of initial table rows
};

// The prompt-guided dynamics family. The causal graph is the shared template;
// the only learnable parameters are the per-environment hidden-parameter rows
// of the masked-model table. Unseen environments get theta from a ridge
// least-squares fit over a context window (the prompt dynamics are linear in
// theta, so the masked-model posterior collapses to this solve).
class HipBcpd {
  public:
    HipBcpd(const CausalGraph& graph, int env_count, HipBcpdConfig config, std::uint64_t seed);

    const CausalGraph& graph() const { return *graph_; }
    const HipBcpdConfig& config() const { return config_; }
    int env_count() const { return static_cast<int>(theta_table_.rows()); }
    int obs_dim() const { return static_cast<int>(observed_.size()); }

    // Hidden parameters are trained as per-slot multipliers of the prompt's
    // base values, which conditions the gradient across slots of very
    // different magnitude. `theta` accessors speak physical units.
    Eigen::VectorXd theta(int env_label) const;
    void set_theta(int env_label, const Eigen::VectorXd& theta);
    Eigen::MatrixXd& multipliers() { return theta_table_; }
    const Eigen::MatrixXd& multipliers() const { return theta_table_; }

    HiddenParams infer_theta(int env_label) const;
    HiddenParams infer_theta(std::span<const Transition> context) const;

    struct Carry {
        Eigen::VectorXd state;          // full node vector estimate
        std::deque<double> pending;     // action profile tail
    };
    Carry initial_carry() const;        // warm start at the prompt's basal values

    // Reconstructed state for an observation: observed coordinates equal `o`
    // exactly, latent coordinates come from the carry.
    Eigen::VectorXd reconstruct(const Eigen::VectorXd& o, const Carry& carry) const;

    struct Prediction {
        Eigen::VectorXd reconstructed;   // s_{t+1}, graph node order
        Eigen::VectorXd predicted_obs;   // observed coordinates of s_{t+1}
    };
    // Advances the reconstructed state one step under the prompt formulas with
    // coefficients theta and updates the carry.
    Prediction reconstruct_and_predict(const Eigen::VectorXd& o, double action,
                                       const HiddenParams& theta, Carry& carry) const;

    // Mean squared one-step error over one environment's ordered steps.
    double env_mse(const EnvData& env, const Eigen::VectorXd& theta) const;

    // Gradient of env_mse with respect to theta over a window of steps
    // starting at `start` (carry is teacher-forced through the window).
    Eigen::VectorXd theta_grad(const EnvData& env, const Eigen::VectorXd& theta, int start,
                               int window, double* loss_out = nullptr) const;

    const std::vector<int>& observed_nodes() const { return observed_; }

  private:
    friend struct HipBcpdLinearizer;
    struct SlotArrow {
        int target;
        int source;  // -1 for input arrows
        int channel;
        double scale;
    };

    double channel_drive(const Eigen::VectorXd& u_channels, int target) const;
    Eigen::VectorXd derivative(const Eigen::VectorXd& s, const Eigen::VectorXd& theta,
                               const Eigen::VectorXd& u) const;
    Eigen::VectorXd channels_for(double action, Carry& carry) const;

    const CausalGraph* graph_;
    HipBcpdConfig config_;
    Eigen::MatrixXd theta_table_;
    std::vector<int> observed_;
    std::vector<int> hold_dose_nodes_;
    Eigen::MatrixXd a_const_;
    Eigen::MatrixXd b_const_;
    std::vector<std::vector<SlotArrow>> slot_arrows_;  // per slot
    Eigen::VectorXd basal_;
    int action_channel_ = -1;
    int const_channel_ = -1;
};

// Hidden-parameter-free baselines; both ignore the prompt entirely and are
// trained with all environments pooled.
class MlpDynamics {
  public:
    MlpDynamics() = default;
    MlpDynamics(int obs_dim, int hidden, std::uint64_t seed);

    Eigen::VectorXd predict(const Eigen::VectorXd& o, double action) const;
    void fit_scales(const MultiEnvData& data);

    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }
    int obs_dim() const { return obs_dim_; }
    Eigen::VectorXd encode(const Eigen::VectorXd& o, double action) const;
    const Eigen::VectorXd& scales() const { return scales_; }

  private:
    int obs_dim_ = 0;
    Mlp net_;                 // [o_scaled; a_scaled] -> scaled delta
    Eigen::VectorXd scales_;  // per-dim, last entry scales the action
};

class RnnDynamics {
  public:
    RnnDynamics() = default;
    RnnDynamics(int obs_dim, int hidden, std::uint64_t seed);

    Eigen::VectorXd initial_state() const { return cell_.initial_state(); }
    Eigen::VectorXd predict(const Eigen::VectorXd& o, double action, Eigen::VectorXd& h) const;
    void fit_scales(const MultiEnvData& data);

    RnnCell& cell() { return cell_; }
    const RnnCell& cell() const { return cell_; }
    int obs_dim() const { return obs_dim_; }
    Eigen::VectorXd encode(const Eigen::VectorXd& o, double action) const;
    const Eigen::VectorXd& scales() const { return scales_; }

  private:
    int obs_dim_ = 0;
    RnnCell cell_;
    Eigen::VectorXd scales_;
};

enum class DynKind { HipBcpd, Mlp, Rnn };

std::string to_string(DynKind kind);
DynKind dyn_kind_from_string(const std::string& name);

// Value-like tagged dynamics model with a uniform one-step interface.
struct DynamicsModel {
    std::variant<HipBcpd, MlpDynamics, RnnDynamics> impl;

    DynKind kind() const;
    int obs_dim() const;

    struct Carry {
        HipBcpd::Carry hip;
        Eigen::VectorXd rnn_h;
    };
    Carry initial_carry() const;

    // One-step prediction; for Hip-BCPD `theta` selects the environment row.
    Eigen::VectorXd predict(const Eigen::VectorXd& o, double action, const HiddenParams& theta,
                            Carry& carry) const;

    // Hash of all learnable parameters (distinctness checks in tests).
    std::uint64_t param_hash() const;
};

DynamicsModel make_hip_bcpd(const CausalGraph& graph, int env_count, HipBcpdConfig config,
                            std::uint64_t seed);
// kind must be "mlp" or "rnn"; hidden defaults to a desk-scale 32.
DynamicsModel make_baseline(const std::string& kind, int obs_dim, std::uint64_t seed,
                            int hidden = 32);

// Sum over environments of the mean one-step squared error (teacher forced).
double dynamics_loss(const DynamicsModel& model, const MultiEnvData& data);

struct FitResult {
    std::vector<double> loss_curve;  // [initial, after epoch 1, ...]
    std::vector<std::string> warnings;
};

struct FitConfig {
    int epochs = 50;
    double lr = 0.05;
    std::uint64_t seed = 0;
    int window = 16;            // transitions per sampled gradient window
    int batches_per_epoch = 64;
    double clip_norm = 10.0;
};

// Stochastic-gradient fit; records the loss curve and throws (with the epoch
// index) if the loss goes non-finite. `final <= initial` is asserted by the
// callers' tests, not here.
FitResult fit_dynamics(DynamicsModel& model, const MultiEnvData& data, const FitConfig& config);

// Model checkpoint: net/theta payload plus the graph hash it was built with.
void save_dynamics_checkpoint(const DynamicsModel& model, std::uint64_t graph_hash,
                              const std::string& path);
DynamicsModel load_dynamics_checkpoint(const CausalGraph& graph, const std::string& path,
                                       std::uint64_t expected_graph_hash);

}  // namespace cprl
