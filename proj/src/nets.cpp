#include "cprl/nets.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cprl {

Mlp::Mlp(std::vector<int> widths, Rng& rng) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
    int total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(total);
        total += widths_[l + 1] * widths_[l] + widths_[l + 1];
    }
    params_ = Eigen::VectorXd::Zero(total);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        const int fan_in = widths_[l];
        const int fan_out = widths_[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        double* w = params_.data() + offsets_[l];
        for (int i = 0; i < fan_out * fan_in; ++i) w[i] = rng.uniform(-bound, bound);
        // biases stay zero
    }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(int layer) const {
    return {params_.data() + offsets_[layer], widths_[layer + 1], widths_[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(int layer) const {
    return {params_.data() + offsets_[layer] + widths_[layer + 1] * widths_[layer],
            widths_[layer + 1]};
}

std::vector<std::pair<int, int>> Mlp::shapes() const {
    std::vector<std::pair<int, int>> out;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        out.emplace_back(widths_[l + 1], widths_[l]);
        out.emplace_back(widths_[l + 1], 1);
    }
    return out;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
    if (x.size() != widths_.front()) throw std::invalid_argument("Mlp::forward: input width mismatch");
    Eigen::VectorXd h = x;
    const int layers = static_cast<int>(widths_.size()) - 1;
    for (int l = 0; l < layers; ++l) {
        h = weight(l) * h + bias(l);
        if (l + 1 < layers) h = h.array().tanh().matrix();
    }
    return h;
}

Eigen::VectorXd Mlp::backward(const Eigen::VectorXd& x, const Eigen::VectorXd& output_grad,
                              Eigen::VectorXd& param_grad) const {
    if (param_grad.size() != params_.size()) {
        throw std::invalid_argument("Mlp::backward: gradient buffer size mismatch");
    }
    const int layers = static_cast<int>(widths_.size()) - 1;
    std::vector<Eigen::VectorXd> acts(layers + 1);
    acts[0] = x;
    for (int l = 0; l < layers; ++l) {
        acts[l + 1] = weight(l) * acts[l] + bias(l);
        if (l + 1 < layers) acts[l + 1] = acts[l + 1].array().tanh().matrix();
    }
    Eigen::VectorXd delta = output_grad;
    for (int l = layers - 1; l >= 0; --l) {
        if (l + 1 < layers) {
            // acts[l+1] already holds tanh(z)
            delta = delta.cwiseProduct((1.0 - acts[l + 1].array().square()).matrix());
        }
        const int rows = widths_[l + 1];
        const int cols = widths_[l];
        Eigen::Map<Eigen::MatrixXd> wgrad(param_grad.data() + offsets_[l], rows, cols);
        Eigen::Map<Eigen::VectorXd> bgrad(param_grad.data() + offsets_[l] + rows * cols, rows);
        wgrad.noalias() += delta * acts[l].transpose();
        bgrad += delta;
        delta = weight(l).transpose() * delta;
    }
    return delta;
}

RnnCell::RnnCell(int input_dim, int hidden_dim, int output_dim, Rng& rng)
    : input_(input_dim), hidden_(hidden_dim), output_(output_dim) {
    const int sizes[] = {hidden_ * input_, hidden_ * hidden_, hidden_, output_ * hidden_, output_};
    int total = 0;
    for (int s : sizes) {
        offsets_.push_back(total);
        total += s;
    }
    params_ = Eigen::VectorXd::Zero(total);
    auto init = [&](int index, int rows, int cols) {
        const double bound = std::sqrt(6.0 / (rows + cols));
        double* p = params_.data() + offsets_[index];
        for (int i = 0; i < rows * cols; ++i) p[i] = rng.uniform(-bound, bound);
    };
    init(0, hidden_, input_);
    init(1, hidden_, hidden_);
    init(3, output_, hidden_);
}

Eigen::Map<const Eigen::MatrixXd> RnnCell::block(int index, int rows, int cols) const {
    return {params_.data() + offsets_[index], rows, cols};
}

std::vector<std::pair<int, int>> RnnCell::shapes() const {
    return {{hidden_, input_}, {hidden_, hidden_}, {hidden_, 1}, {output_, hidden_}, {output_, 1}};
}

Eigen::VectorXd RnnCell::step(const Eigen::VectorXd& x, const Eigen::VectorXd& h) const {
    if (x.size() != input_ || h.size() != hidden_) {
        throw std::invalid_argument("RnnCell::step: dimension mismatch");
    }
    return (block(0, hidden_, input_) * x + block(1, hidden_, hidden_) * h +
            block(2, hidden_, 1).col(0))
        .array()
        .tanh()
        .matrix();
}

Eigen::VectorXd RnnCell::readout(const Eigen::VectorXd& h) const {
    return block(3, output_, hidden_) * h + block(4, output_, 1).col(0);
}

Eigen::VectorXd RnnCell::step_cached(const Eigen::VectorXd& x, const Eigen::VectorXd& h,
                                     StepCache& cache) const {
    cache.x = x;
    cache.h_prev = h;
    cache.h = step(x, h);
    return cache.h;
}

Eigen::VectorXd RnnCell::backward_window(const std::vector<StepCache>& steps,
                                         const std::vector<Eigen::VectorXd>& readout_grads,
                                         Eigen::VectorXd& param_grad) const {
    if (steps.size() != readout_grads.size()) {
        throw std::invalid_argument("RnnCell::backward_window: cache/grad length mismatch");
    }
    if (param_grad.size() != params_.size()) {
        throw std::invalid_argument("RnnCell::backward_window: gradient buffer size mismatch");
    }
    Eigen::Map<Eigen::MatrixXd> gwx(param_grad.data() + offsets_[0], hidden_, input_);
    Eigen::Map<Eigen::MatrixXd> gwh(param_grad.data() + offsets_[1], hidden_, hidden_);
    Eigen::Map<Eigen::VectorXd> gb(param_grad.data() + offsets_[2], hidden_);
    Eigen::Map<Eigen::MatrixXd> gwo(param_grad.data() + offsets_[3], output_, hidden_);
    Eigen::Map<Eigen::VectorXd> gbo(param_grad.data() + offsets_[4], output_);

    Eigen::VectorXd dh = Eigen::VectorXd::Zero(hidden_);
    for (int t = static_cast<int>(steps.size()) - 1; t >= 0; --t) {
        const auto& c = steps[t];
        if (readout_grads[t].size() > 0) {
            gwo.noalias() += readout_grads[t] * c.h.transpose();
            gbo += readout_grads[t];
            dh += block(3, output_, hidden_).transpose() * readout_grads[t];
        }
        const Eigen::VectorXd dz = dh.cwiseProduct((1.0 - c.h.array().square()).matrix());
        gwx.noalias() += dz * c.x.transpose();
        gwh.noalias() += dz * c.h_prev.transpose();
        gb += dz;
        dh = block(1, hidden_, hidden_).transpose() * dz;
    }
    return dh;
}

LossFn squared_error_loss() {
    return [](const Eigen::VectorXd& y, const Eigen::VectorXd& target) {
        const Eigen::VectorXd err = y - target;
        return std::make_pair(err.squaredNorm(), Eigen::VectorXd(2.0 * err));
    };
}

std::pair<double, Eigen::VectorXd> net_grad(const Mlp& net, const Batch& batch,
                                            const LossFn& loss) {
    if (batch.size() == 0) throw std::invalid_argument("net_grad: empty batch");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.param_count());
    double total = 0.0;
    for (int i = 0; i < batch.size(); ++i) {
        const Eigen::VectorXd y = net.forward(batch.inputs.col(i));
        auto [value, dy] = loss(y, batch.targets.col(i));
        if (!std::isfinite(value)) throw std::runtime_error("net_grad: non-finite loss");
        total += value;
        net.backward(batch.inputs.col(i), dy, grad);
    }
    grad /= batch.size();
    return {total / batch.size(), std::move(grad)};
}

double batch_loss(const Mlp& net, const Batch& batch, const LossFn& loss) {
    double total = 0.0;
    for (int i = 0; i < batch.size(); ++i) {
        total += loss(net.forward(batch.inputs.col(i)), batch.targets.col(i)).first;
    }
    return batch.size() > 0 ? total / batch.size() : 0.0;
}

void sgd_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr, double clip_norm) {
    if (lr < 0) throw std::invalid_argument("sgd_step: lr must be >= 0");
    if (params.size() != grad.size()) throw std::invalid_argument("sgd_step: size mismatch");
    const double norm = grad.norm();
    const double factor = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    params -= lr * factor * grad;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    const char magic[8] = {'C', 'P', 'R', 'L', 'C', 'K', 'P', '1'};
    out.write(magic, 8);
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u64(ckpt.seed);
    put_i32(static_cast<std::int32_t>(ckpt.shapes.size()));
    for (const auto& [r, c] : ckpt.shapes) {
        put_i32(r);
        put_i32(c);
    }
    put_u64(static_cast<std::uint64_t>(ckpt.values.size()));
    out.write(reinterpret_cast<const char*>(ckpt.values.data()),
              static_cast<std::streamsize>(ckpt.values.size() * sizeof(double)));
    put_u64(static_cast<std::uint64_t>(ckpt.extra.size()));
    out.write(reinterpret_cast<const char*>(ckpt.extra.data()),
              static_cast<std::streamsize>(ckpt.extra.size() * sizeof(double)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "CPRLCKP1", 8) != 0) {
        throw std::runtime_error("bad checkpoint magic in " + path);
    }
    auto get_u64 = [&] {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto get_i32 = [&] {
        std::int32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    Checkpoint ckpt;
    ckpt.seed = get_u64();
    const int nshapes = get_i32();
    for (int i = 0; i < nshapes; ++i) {
        const std::int32_t r = get_i32();
        const std::int32_t c = get_i32();
        ckpt.shapes.emplace_back(r, c);
    }
    const auto nvalues = get_u64();
    ckpt.values.resize(static_cast<Eigen::Index>(nvalues));
    in.read(reinterpret_cast<char*>(ckpt.values.data()),
            static_cast<std::streamsize>(nvalues * sizeof(double)));
    const auto nextra = get_u64();
    ckpt.extra.resize(nextra);
    in.read(reinterpret_cast<char*>(ckpt.extra.data()),
            static_cast<std::streamsize>(nextra * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return ckpt;
}

}  // namespace cprl
