#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cprl/rng.hpp"

namespace cprl {

// Feed-forward net with tanh hidden layers and a linear output, parameters in
// one flat vector [W0, b0, W1, b1, ...] (column-major weights). Value-like:
// copy freely, no shared state.
class Mlp {
  public:
    Mlp() = default;
    Mlp(std::vector<int> widths, Rng& rng);  // Xavier-uniform init, zero biases

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;

    // Reverse pass for one sample. Accumulates dL/dparams into `param_grad`
    // (same layout as params) and returns dL/dx.
    Eigen::VectorXd backward(const Eigen::VectorXd& x, const Eigen::VectorXd& output_grad,
                             Eigen::VectorXd& param_grad) const;

    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    int param_count() const { return static_cast<int>(params_.size()); }
    const std::vector<int>& widths() const { return widths_; }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    std::vector<std::pair<int, int>> shapes() const;  // per-block (rows, cols)

  private:
    friend class RnnCell;
    Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

    std::vector<int> widths_;
    std::vector<int> offsets_;  // params_ offset of each layer's weight block
    Eigen::VectorXd params_;
};

// Single-layer recurrent cell h' = tanh(Wx x + Wh h + b) with linear readout
// y = Wo h' + bo. Backward-through-time is driven by the caller over a window
// of cached steps.
class RnnCell {
  public:
    RnnCell() = default;
    RnnCell(int input_dim, int hidden_dim, int output_dim, Rng& rng);

    Eigen::VectorXd initial_state() const { return Eigen::VectorXd::Zero(hidden_); }
    Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& h) const;
    Eigen::VectorXd readout(const Eigen::VectorXd& h) const;

    struct StepCache {
        Eigen::VectorXd x;
        Eigen::VectorXd h_prev;
        Eigen::VectorXd h;
    };
    Eigen::VectorXd step_cached(const Eigen::VectorXd& x, const Eigen::VectorXd& h,
                                StepCache& cache) const;

    // Accumulates dL/dparams for a window given per-step readout gradients;
    // returns dL/dh0.
    Eigen::VectorXd backward_window(const std::vector<StepCache>& steps,
                                    const std::vector<Eigen::VectorXd>& readout_grads,
                                    Eigen::VectorXd& param_grad) const;

    int input_dim() const { return input_; }
    int hidden_dim() const { return hidden_; }
    int output_dim() const { return output_; }
    int param_count() const { return static_cast<int>(params_.size()); }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }
    std::vector<std::pair<int, int>> shapes() const;

  private:
    Eigen::Map<const Eigen::MatrixXd> block(int index, int rows, int cols) const;

    int input_ = 0, hidden_ = 0, output_ = 0;
    std::vector<int> offsets_;
    Eigen::VectorXd params_;
};

// Column-per-sample batch.
struct Batch {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
    int size() const { return static_cast<int>(inputs.cols()); }
};

// loss(y, target) -> (loss value, dloss/dy)
using LossFn =
    std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

LossFn squared_error_loss();

// Mean batch loss and its gradient with respect to the parameters.
std::pair<double, Eigen::VectorXd> net_grad(const Mlp& net, const Batch& batch, const LossFn& loss);
double batch_loss(const Mlp& net, const Batch& batch, const LossFn& loss);

// params <- params - lr * grad, with the gradient norm clipped first.
void sgd_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr,
              double clip_norm = 10.0);

// Flat 64-bit-float checkpoint with a small header (shape list + seed).
struct Checkpoint {
    std::uint64_t seed = 0;
    std::vector<std::pair<std::int32_t, std::int32_t>> shapes;
    Eigen::VectorXd values;
    std::vector<double> extra;  // trailing payload blocks (theta tables, config)
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cprl
