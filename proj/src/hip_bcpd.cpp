#include "cprl/hip_bcpd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cprl/simulator.hpp"

namespace cprl {

namespace {

constexpr int kProfileSpread = kBolusSpreadMin;

std::uint64_t hash_doubles(std::uint64_t h, const double* data, std::size_t count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < count * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

bool episode_boundary(const EnvData& env, std::size_t i) {
    return i == 0 || env.steps[i].timestamp <= env.steps[i - 1].timestamp;
}

}  // namespace

HipBcpd::HipBcpd(const CausalGraph& graph, int env_count, HipBcpdConfig config,
                 std::uint64_t seed)
    : graph_(&graph), config_(std::move(config)) {
    if (env_count < 1) throw std::invalid_argument("HipBcpd: env_count must be >= 1");
    observed_ = graph.observed_nodes();
    if (observed_.empty()) throw std::invalid_argument("HipBcpd: graph has no observed nodes");
    const int slots = graph.param_slot_count();
    const Eigen::VectorXd base = graph.base_theta();
    for (int k = 0; k < slots; ++k) {
        if (base[k] <= 0) {
            throw std::invalid_argument("HipBcpd: slot '" + graph.slots[k].name +
                                        "' needs a positive base value");
        }
    }
    Rng rng(seed);
    theta_table_ = Eigen::MatrixXd::Ones(env_count, slots);
    for (int j = 0; j < env_count; ++j) {
        for (int k = 0; k < slots; ++k) {
            theta_table_(j, k) += rng.uniform(-config_.init_jitter, config_.init_jitter);
        }
    }
    a_const_ = graph.constant_state_matrix();
    b_const_ = graph.constant_input_matrix();
    slot_arrows_.resize(slots);
    for (const auto& kn : graph.knowledge) {
        for (const auto& t : kn.terms) {
            if (t.is_slot) slot_arrows_[t.slot].push_back({kn.target, t.source, -1, t.scale});
        }
        if (kn.input && kn.input->is_slot) {
            slot_arrows_[kn.input->slot].push_back(
                {kn.target, -1, kn.input->channel, kn.input->scale});
        }
    }
    for (int v = 0; v < graph.node_count(); ++v) {
        if (graph.nodes[v].is_hold() && graph.nodes[v].hold_channel == config_.dose_channel) {
            hold_dose_nodes_.push_back(v);
        }
    }
    basal_ = steady_state(graph, base);
    action_channel_ = graph.channel_index(config_.action_channel);
    const_channel_ = graph.channel_index("const");
}

Eigen::VectorXd HipBcpd::theta(int env_label) const {
    if (env_label < 0 || env_label >= env_count()) {
        throw std::out_of_range("HipBcpd::theta: unknown environment label " +
                                std::to_string(env_label));
    }
    return theta_table_.row(env_label).transpose().cwiseProduct(graph_->base_theta());
}

void HipBcpd::set_theta(int env_label, const Eigen::VectorXd& theta) {
    const Eigen::VectorXd base = graph_->base_theta();
    if (theta.size() != base.size()) throw std::invalid_argument("set_theta: slot count mismatch");
    theta_table_.row(env_label) = theta.cwiseQuotient(base).transpose();
}

HiddenParams HipBcpd::infer_theta(int env_label) const {
    HiddenParams out;
    out.env_label = env_label;
    out.theta = theta(env_label);
    return out;
}

HipBcpd::Carry HipBcpd::initial_carry() const {
    Carry c;
    c.state = basal_;
    return c;
}

double HipBcpd::channel_drive(const Eigen::VectorXd& u, int target) const {
    return b_const_.row(target) * u;
}

Eigen::VectorXd HipBcpd::derivative(const Eigen::VectorXd& s, const Eigen::VectorXd& theta,
                                    const Eigen::VectorXd& u) const {
    Eigen::VectorXd sdot = a_const_ * s + b_const_ * u;
    for (int k = 0; k < theta.size(); ++k) {
        const double th = theta[k];
        if (th == 0.0) continue;
        for (const auto& arrow : slot_arrows_[k]) {
            const double drive = arrow.source >= 0 ? s[arrow.source] : u[arrow.channel];
            sdot[arrow.target] += th * arrow.scale * drive;
        }
    }
    return sdot;
}

Eigen::VectorXd HipBcpd::channels_for(double action, Carry& carry) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<int>(graph_->channels.size()));
    if (const_channel_ >= 0) u[const_channel_] = 1.0;
    if (action_channel_ >= 0) {
        if (config_.action_profile) {
            carry.pending.push_back(action * config_.action_unit / kProfileSpread);
            if (static_cast<int>(carry.pending.size()) > kProfileSpread) carry.pending.pop_front();
            double rate = 0.0;
            for (double r : carry.pending) rate += r;
            u[action_channel_] = rate;
        } else {
            u[action_channel_] = action;
        }
    }
    return u;
}

Eigen::VectorXd HipBcpd::reconstruct(const Eigen::VectorXd& o, const Carry& carry) const {
    if (o.size() != obs_dim()) throw std::invalid_argument("reconstruct: observation width mismatch");
    Eigen::VectorXd s = carry.state;
    for (std::size_t i = 0; i < observed_.size(); ++i) s[observed_[i]] = o[i];
    return s;
}

HipBcpd::Prediction HipBcpd::reconstruct_and_predict(const Eigen::VectorXd& o, double action,
                                                     const HiddenParams& theta,
                                                     Carry& carry) const {
    if (theta.theta.size() != graph_->param_slot_count()) {
        throw std::invalid_argument("reconstruct_and_predict: theta slot count mismatch");
    }
    const Eigen::VectorXd s = reconstruct(o, carry);
    const Eigen::VectorXd u = channels_for(action, carry);
    Eigen::VectorXd s_next = s + config_.dt * derivative(s, theta.theta, u);
    for (int v : hold_dose_nodes_) s_next[v] = action;
    if (!s_next.allFinite()) {
        throw std::runtime_error("reconstruct_and_predict: non-finite intermediate state");
    }
    Prediction pred;
    pred.predicted_obs.resize(obs_dim());
    for (std::size_t i = 0; i < observed_.size(); ++i) pred.predicted_obs[i] = s_next[observed_[i]];
    pred.reconstructed = s_next;
    carry.state = std::move(s_next);
    return pred;
}

double HipBcpd::env_mse(const EnvData& env, const Eigen::VectorXd& theta) const {
    if (env.steps.empty()) throw std::invalid_argument("env_mse: empty environment data");
    HiddenParams hp{theta, env.env_label};
    Carry carry = initial_carry();
    double total = 0.0;
    for (std::size_t i = 0; i < env.steps.size(); ++i) {
        if (episode_boundary(env, i)) carry = initial_carry();
        const auto& tr = env.steps[i];
        const auto pred = reconstruct_and_predict(tr.o, tr.action, hp, carry);
        total += (pred.predicted_obs - tr.o_next).squaredNorm();
    }
    return total / static_cast<double>(env.steps.size());
}

Eigen::VectorXd HipBcpd::theta_grad(const EnvData& env, const Eigen::VectorXd& theta, int start,
                                    int window, double* loss_out) const {
    const int n_steps = static_cast<int>(env.steps.size());
    start = std::clamp(start, 0, std::max(0, n_steps - 1));
    const int stop = std::min(n_steps, start + window);
    HiddenParams hp{theta, env.env_label};
    Carry carry = initial_carry();
    // Roll the carry up to the window so latents are warm, gradients are
    // truncated at one step (teacher-forced observations dominate).
    for (int i = 0; i < start; ++i) {
        if (episode_boundary(env, static_cast<std::size_t>(i))) carry = initial_carry();
        reconstruct_and_predict(env.steps[i].o, env.steps[i].action, hp, carry);
    }
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
    double loss = 0.0;
    int count = 0;
    for (int i = start; i < stop; ++i) {
        if (episode_boundary(env, static_cast<std::size_t>(i))) carry = initial_carry();
        const auto& tr = env.steps[i];
        const Eigen::VectorXd s = reconstruct(tr.o, carry);
        Carry probe = carry;  // channels_for mutates the profile tail
        const Eigen::VectorXd u = channels_for(tr.action, probe);
        const auto pred = reconstruct_and_predict(tr.o, tr.action, hp, carry);
        const Eigen::VectorXd err = pred.predicted_obs - tr.o_next;
        loss += err.squaredNorm();
        ++count;
        for (int k = 0; k < theta.size(); ++k) {
            double acc = 0.0;
            for (const auto& arrow : slot_arrows_[k]) {
                const bool held = std::find(hold_dose_nodes_.begin(), hold_dose_nodes_.end(),
                                            arrow.target) != hold_dose_nodes_.end();
                if (held) continue;  // hold nodes are pinned, the ODE row is overridden
                const auto it = std::find(observed_.begin(), observed_.end(), arrow.target);
                if (it == observed_.end()) continue;
                const auto row = static_cast<int>(it - observed_.begin());
                const double drive = arrow.source >= 0 ? s[arrow.source] : u[arrow.channel];
                acc += 2.0 * err[row] * config_.dt * arrow.scale * drive;
            }
            grad[k] += acc;
        }
    }
    if (count > 0) {
        grad /= count;
        loss /= count;
    }
    if (loss_out) *loss_out = loss;
    return grad;
}

HiddenParams HipBcpd::infer_theta(std::span<const Transition> context) const {
    if (context.empty()) {
        throw std::invalid_argument(
            "infer_theta: unknown environment and empty context window");
    }
    const int slots = graph_->param_slot_count();
    const int d = obs_dim();
    Eigen::VectorXd theta = graph_->base_theta();  // refinement start
    const int window = std::min<int>(config_.context_window, static_cast<int>(context.size()));
    const auto begin = context.size() - static_cast<std::size_t>(window);

    for (int pass = 0; pass < 3; ++pass) {
        HiddenParams hp{theta, -1};
        Carry carry = initial_carry();
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(window * d, slots);
        Eigen::VectorXd y = Eigen::VectorXd::Zero(window * d);
        for (int i = 0; i < window; ++i) {
            const auto& tr = context[begin + static_cast<std::size_t>(i)];
            const Eigen::VectorXd s = reconstruct(tr.o, carry);
            Carry probe = carry;
            const Eigen::VectorXd u = channels_for(tr.action, probe);
            // residual after the theta-independent part of the step
            Eigen::VectorXd base_next =
                s + config_.dt * (a_const_ * s + b_const_ * u);
            for (int r = 0; r < d; ++r) {
                const int node = observed_[r];
                const bool held = std::find(hold_dose_nodes_.begin(), hold_dose_nodes_.end(),
                                            node) != hold_dose_nodes_.end();
                if (held) continue;
                y[i * d + r] = tr.o_next[r] - base_next[node];
            }
            for (int k = 0; k < slots; ++k) {
                for (const auto& arrow : slot_arrows_[k]) {
                    const auto it = std::find(observed_.begin(), observed_.end(), arrow.target);
                    if (it == observed_.end()) continue;
                    const bool held = std::find(hold_dose_nodes_.begin(), hold_dose_nodes_.end(),
                                                arrow.target) != hold_dose_nodes_.end();
                    if (held) continue;
                    const auto row = static_cast<int>(it - observed_.begin());
                    const double drive = arrow.source >= 0 ? s[arrow.source] : u[arrow.channel];
                    m(i * d + row, k) += config_.dt * arrow.scale * drive;
                }
            }
            reconstruct_and_predict(tr.o, tr.action, hp, carry);
        }
        Eigen::MatrixXd normal = m.transpose() * m;
        normal.diagonal().array() += config_.ridge;
        theta = normal.ldlt().solve(m.transpose() * y).cwiseMax(0.0);
        if (graph_->latent_nodes().empty()) break;  // solve is exact, no refinement needed
    }
    HiddenParams out;
    out.theta = theta;
    out.env_label = -1;
    return out;
}

MlpDynamics::MlpDynamics(int obs_dim, int hidden, std::uint64_t seed) : obs_dim_(obs_dim) {
    Rng rng(seed);
    net_ = Mlp({obs_dim + 1, hidden, hidden, obs_dim}, rng);
    scales_ = Eigen::VectorXd::Ones(obs_dim + 1);
}

Eigen::VectorXd MlpDynamics::encode(const Eigen::VectorXd& o, double action) const {
    Eigen::VectorXd x(obs_dim_ + 1);
    x.head(obs_dim_) = o.cwiseQuotient(scales_.head(obs_dim_));
    x[obs_dim_] = action / scales_[obs_dim_];
    return x;
}

Eigen::VectorXd MlpDynamics::predict(const Eigen::VectorXd& o, double action) const {
    const Eigen::VectorXd delta = net_.forward(encode(o, action));
    return o + delta.cwiseProduct(scales_.head(obs_dim_));
}

void MlpDynamics::fit_scales(const MultiEnvData& data) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(obs_dim_ + 1);
    long count = 0;
    for (const auto& env : data) {
        for (const auto& tr : env.steps) {
            acc.head(obs_dim_) += tr.o.cwiseAbs();
            acc[obs_dim_] += std::abs(tr.action);
            ++count;
        }
    }
    if (count == 0) return;
    scales_ = (acc / static_cast<double>(count)).cwiseMax(1e-3);
}

RnnDynamics::RnnDynamics(int obs_dim, int hidden, std::uint64_t seed) : obs_dim_(obs_dim) {
    Rng rng(seed);
    cell_ = RnnCell(obs_dim + 1, hidden, obs_dim, rng);
    scales_ = Eigen::VectorXd::Ones(obs_dim + 1);
}

Eigen::VectorXd RnnDynamics::encode(const Eigen::VectorXd& o, double action) const {
    Eigen::VectorXd x(obs_dim_ + 1);
    x.head(obs_dim_) = o.cwiseQuotient(scales_.head(obs_dim_));
    x[obs_dim_] = action / scales_[obs_dim_];
    return x;
}

Eigen::VectorXd RnnDynamics::predict(const Eigen::VectorXd& o, double action,
                                     Eigen::VectorXd& h) const {
    h = cell_.step(encode(o, action), h);
    return o + cell_.readout(h).cwiseProduct(scales_.head(obs_dim_));
}

void RnnDynamics::fit_scales(const MultiEnvData& data) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(obs_dim_ + 1);
    long count = 0;
    for (const auto& env : data) {
        for (const auto& tr : env.steps) {
            acc.head(obs_dim_) += tr.o.cwiseAbs();
            acc[obs_dim_] += std::abs(tr.action);
            ++count;
        }
    }
    if (count == 0) return;
    scales_ = (acc / static_cast<double>(count)).cwiseMax(1e-3);
}

std::string to_string(DynKind kind) {
    switch (kind) {
        case DynKind::HipBcpd: return "hip_bcpd";
        case DynKind::Mlp: return "mlp";
        case DynKind::Rnn: return "rnn";
    }
    return "?";
}

DynKind dyn_kind_from_string(const std::string& name) {
    if (name == "hip_bcpd") return DynKind::HipBcpd;
    if (name == "mlp") return DynKind::Mlp;
    if (name == "rnn") return DynKind::Rnn;
    throw std::invalid_argument("unknown dynamics kind '" + name + "'");
}

DynKind DynamicsModel::kind() const {
    if (std::holds_alternative<HipBcpd>(impl)) return DynKind::HipBcpd;
    if (std::holds_alternative<MlpDynamics>(impl)) return DynKind::Mlp;
    return DynKind::Rnn;
}

int DynamicsModel::obs_dim() const {
    return std::visit([](const auto& m) { return m.obs_dim(); }, impl);
}

DynamicsModel::Carry DynamicsModel::initial_carry() const {
    Carry c;
    if (const auto* hip = std::get_if<HipBcpd>(&impl)) {
        c.hip = hip->initial_carry();
    } else if (const auto* rnn = std::get_if<RnnDynamics>(&impl)) {
        c.rnn_h = rnn->initial_state();
    }
    return c;
}

Eigen::VectorXd DynamicsModel::predict(const Eigen::VectorXd& o, double action,
                                       const HiddenParams& theta, Carry& carry) const {
    if (const auto* hip = std::get_if<HipBcpd>(&impl)) {
        return hip->reconstruct_and_predict(o, action, theta, carry.hip).predicted_obs;
    }
    if (const auto* mlp = std::get_if<MlpDynamics>(&impl)) {
        return mlp->predict(o, action);
    }
    return std::get<RnnDynamics>(impl).predict(o, action, carry.rnn_h);
}

std::uint64_t DynamicsModel::param_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    if (const auto* hip = std::get_if<HipBcpd>(&impl)) {
        h = hash_doubles(h, hip->multipliers().data(),
                         static_cast<std::size_t>(hip->multipliers().size()));
    } else if (const auto* mlp = std::get_if<MlpDynamics>(&impl)) {
        h = hash_doubles(h, mlp->net().params().data(),
                         static_cast<std::size_t>(mlp->net().params().size()));
    } else {
        const auto& rnn = std::get<RnnDynamics>(impl);
        h = hash_doubles(h, rnn.cell().params().data(),
                         static_cast<std::size_t>(rnn.cell().params().size()));
    }
    return h;
}

DynamicsModel make_hip_bcpd(const CausalGraph& graph, int env_count, HipBcpdConfig config,
                            std::uint64_t seed) {
    return DynamicsModel{HipBcpd(graph, env_count, std::move(config), seed)};
}

DynamicsModel make_baseline(const std::string& kind, int obs_dim, std::uint64_t seed, int hidden) {
    const DynKind k = dyn_kind_from_string(kind);
    if (k == DynKind::Mlp) return DynamicsModel{MlpDynamics(obs_dim, hidden, seed)};
    if (k == DynKind::Rnn) return DynamicsModel{RnnDynamics(obs_dim, hidden, seed)};
    throw std::invalid_argument("make_baseline: kind must be mlp or rnn");
}

double dynamics_loss(const DynamicsModel& model, const MultiEnvData& data) {
    if (data.empty()) throw std::invalid_argument("dynamics_loss: empty dataset");
    double total = 0.0;
    for (const auto& env : data) {
        if (env.steps.empty()) throw std::invalid_argument("dynamics_loss: empty environment batch");
        if (const auto* hip = std::get_if<HipBcpd>(&model.impl)) {
            total += hip->env_mse(env, hip->theta(env.env_label));
            continue;
        }
        DynamicsModel::Carry carry = model.initial_carry();
        HiddenParams hp;
        double env_total = 0.0;
        for (std::size_t i = 0; i < env.steps.size(); ++i) {
            if (episode_boundary(env, i)) carry = model.initial_carry();
            const auto& tr = env.steps[i];
            env_total += (model.predict(tr.o, tr.action, hp, carry) - tr.o_next).squaredNorm();
        }
        total += env_total / static_cast<double>(env.steps.size());
    }
    return total;
}

namespace {

void fit_epoch_hip(HipBcpd& hip, const MultiEnvData& data, const FitConfig& cfg, double lr,
                   Rng& rng, Eigen::MatrixXd& grad_sq_acc) {
    // Per-slot gradient preconditioning: the slots drive states of very
    // different magnitude, so a shared step size stalls on the small ones.
    const Eigen::VectorXd base = hip.graph().base_theta();
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
        const auto& env = data[rng.uniform_index(data.size())];
        const int max_start = std::max<int>(1, static_cast<int>(env.steps.size()) - cfg.window);
        const int start = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_start)));
        const Eigen::VectorXd theta = hip.theta(env.env_label);
        const Eigen::VectorXd g_theta = hip.theta_grad(env, theta, start, cfg.window);
        const Eigen::VectorXd g_mult = g_theta.cwiseProduct(base);
        auto acc = grad_sq_acc.row(env.env_label).transpose();
        acc = 0.9 * acc + 0.1 * g_mult.cwiseAbs2();
        grad_sq_acc.row(env.env_label) = acc.transpose();
        Eigen::VectorXd scaled = g_mult.cwiseQuotient((acc.cwiseSqrt().array() + 1e-8).matrix());
        Eigen::VectorXd row = hip.multipliers().row(env.env_label).transpose();
        sgd_step(row, scaled, lr, cfg.clip_norm);
        hip.multipliers().row(env.env_label) = row.transpose();
    }
}

void fit_epoch_mlp(MlpDynamics& mlp, const std::vector<const Transition*>& pool,
                   const FitConfig& cfg, Rng& rng) {
    const int batch_size = 64;
    const int d = mlp.obs_dim();
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
        Batch batch;
        batch.inputs.resize(d + 1, batch_size);
        batch.targets.resize(d, batch_size);
        for (int i = 0; i < batch_size; ++i) {
            const Transition& tr = *pool[rng.uniform_index(pool.size())];
            batch.inputs.col(i) = mlp.encode(tr.o, tr.action);
            batch.targets.col(i) =
                (tr.o_next - tr.o).cwiseQuotient(mlp.scales().head(d));
        }
        auto [loss, grad] = net_grad(mlp.net(), batch, squared_error_loss());
        (void)loss;
        sgd_step(mlp.net().params(), grad, cfg.lr, cfg.clip_norm);
    }
}

void fit_epoch_rnn(RnnDynamics& rnn, const MultiEnvData& data, const FitConfig& cfg, Rng& rng) {
    const int d = rnn.obs_dim();
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
        const auto& env = data[rng.uniform_index(data.size())];
        const int max_start = std::max<int>(1, static_cast<int>(env.steps.size()) - cfg.window);
        const int start = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(max_start)));
        const int stop = std::min<int>(static_cast<int>(env.steps.size()), start + cfg.window);
        Eigen::VectorXd h = rnn.initial_state();
        std::vector<RnnCell::StepCache> caches;
        std::vector<Eigen::VectorXd> readout_grads;
        for (int i = start; i < stop; ++i) {
            const auto& tr = env.steps[i];
            RnnCell::StepCache cache;
            h = rnn.cell().step_cached(rnn.encode(tr.o, tr.action), h, cache);
            const Eigen::VectorXd pred_scaled = rnn.cell().readout(h);
            const Eigen::VectorXd target_scaled =
                (tr.o_next - tr.o).cwiseQuotient(rnn.scales().head(d));
            caches.push_back(cache);
            readout_grads.push_back(2.0 * (pred_scaled - target_scaled));
        }
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(rnn.cell().param_count());
        rnn.cell().backward_window(caches, readout_grads, grad);
        grad /= static_cast<double>(caches.size());
        sgd_step(rnn.cell().params(), grad, cfg.lr, cfg.clip_norm);
    }
}

}  // namespace

FitResult fit_dynamics(DynamicsModel& model, const MultiEnvData& data, const FitConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("fit_dynamics: dataset has no environments");
    FitResult result;
    Rng rng(cfg.seed);

    if (auto* mlp = std::get_if<MlpDynamics>(&model.impl)) mlp->fit_scales(data);
    if (auto* rnn = std::get_if<RnnDynamics>(&model.impl)) rnn->fit_scales(data);

    std::vector<const Transition*> pool;
    for (const auto& env : data) {
        for (const auto& tr : env.steps) pool.push_back(&tr);
    }
    if (pool.empty()) throw std::invalid_argument("fit_dynamics: dataset has no transitions");

    Eigen::MatrixXd grad_sq_acc;
    if (const auto* hip = std::get_if<HipBcpd>(&model.impl)) {
        grad_sq_acc = Eigen::MatrixXd::Zero(hip->env_count(), hip->graph().param_slot_count());
    }

    result.loss_curve.push_back(dynamics_loss(model, data));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        try {
            if (auto* hip = std::get_if<HipBcpd>(&model.impl)) {
                // harmonic step-size decay settles the noisy tail
                const double lr = cfg.lr / (1.0 + 4.0 * epoch / std::max(1, cfg.epochs));
                fit_epoch_hip(*hip, data, cfg, lr, rng, grad_sq_acc);
            } else if (auto* mlp = std::get_if<MlpDynamics>(&model.impl)) {
                fit_epoch_mlp(*mlp, pool, cfg, rng);
            } else {
                fit_epoch_rnn(std::get<RnnDynamics>(model.impl), data, cfg, rng);
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("fit_dynamics: diverged at epoch " +
                                     std::to_string(epoch + 1) + ": " + e.what());
        }
        const double loss = dynamics_loss(model, data);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("fit_dynamics: loss diverged at epoch " +
                                     std::to_string(epoch + 1));
        }
        result.loss_curve.push_back(loss);
    }
    return result;
}

void save_dynamics_checkpoint(const DynamicsModel& model, std::uint64_t graph_hash,
                              const std::string& path) {
    Checkpoint ckpt;
    ckpt.seed = graph_hash;
    ckpt.extra.push_back(static_cast<double>(static_cast<int>(model.kind())));
    if (const auto* hip = std::get_if<HipBcpd>(&model.impl)) {
        ckpt.shapes.emplace_back(static_cast<std::int32_t>(hip->multipliers().rows()),
                                 static_cast<std::int32_t>(hip->multipliers().cols()));
        ckpt.values = Eigen::Map<const Eigen::VectorXd>(hip->multipliers().data(),
                                                        hip->multipliers().size());
    } else if (const auto* mlp = std::get_if<MlpDynamics>(&model.impl)) {
        for (auto [r, c] : mlp->net().shapes()) ckpt.shapes.emplace_back(r, c);
        ckpt.values = mlp->net().params();
        ckpt.extra.push_back(static_cast<double>(mlp->obs_dim()));
        for (int i = 0; i < mlp->scales().size(); ++i) ckpt.extra.push_back(mlp->scales()[i]);
    } else {
        const auto& rnn = std::get<RnnDynamics>(model.impl);
        for (auto [r, c] : rnn.cell().shapes()) ckpt.shapes.emplace_back(r, c);
        ckpt.values = rnn.cell().params();
        ckpt.extra.push_back(static_cast<double>(rnn.obs_dim()));
    }
    save_checkpoint(ckpt, path);
}

DynamicsModel load_dynamics_checkpoint(const CausalGraph& graph, const std::string& path,
                                       std::uint64_t expected_graph_hash) {
    const Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.seed != expected_graph_hash) {
        throw std::runtime_error("dynamics checkpoint was built against a different graph spec");
    }
    if (ckpt.extra.empty()) throw std::runtime_error("dynamics checkpoint missing kind tag");
    const auto kind = static_cast<DynKind>(static_cast<int>(ckpt.extra[0]));
    if (kind == DynKind::HipBcpd) {
        const auto rows = static_cast<int>(ckpt.shapes.at(0).first);
        DynamicsModel model = make_hip_bcpd(graph, rows, HipBcpdConfig{}, 0);
        auto& hip = std::get<HipBcpd>(model.impl);
        hip.multipliers() =
            Eigen::Map<const Eigen::MatrixXd>(ckpt.values.data(), rows, ckpt.shapes.at(0).second);
        return model;
    }
    const int obs_dim = static_cast<int>(ckpt.extra.at(1));
    const int hidden = static_cast<int>(ckpt.shapes.at(0).first);
    DynamicsModel model = make_baseline(to_string(kind), obs_dim, 0, hidden);
    if (kind == DynKind::Mlp) {
        auto& mlp = std::get<MlpDynamics>(model.impl);
        mlp.net().params() = ckpt.values;
    } else {
        std::get<RnnDynamics>(model.impl).cell().params() = ckpt.values;
    }
    return model;
}

}  // namespace cprl
