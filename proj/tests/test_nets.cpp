#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "cprl/nets.hpp"

using namespace cprl;

namespace {

// Central finite differences over every parameter coordinate.
Eigen::VectorXd fd_gradient(Mlp& net, const Batch& batch, const LossFn& loss, double h = 1e-5) {
    Eigen::VectorXd grad(net.param_count());
    for (int i = 0; i < net.param_count(); ++i) {
        const double saved = net.params()[i];
        net.params()[i] = saved + h;
        const double up = batch_loss(net, batch, loss);
        net.params()[i] = saved - h;
        const double down = batch_loss(net, batch, loss);
        net.params()[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

Batch random_batch(int in_dim, int out_dim, int n, Rng& rng) {
    Batch b;
    b.inputs.resize(in_dim, n);
    b.targets.resize(out_dim, n);
    for (int i = 0; i < in_dim * n; ++i) b.inputs.data()[i] = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < out_dim * n; ++i) b.targets.data()[i] = rng.uniform(-1.0, 1.0);
    return b;
}

}  // namespace

TEST_CASE("identity-initialized linear layer reproduces its input") {
    Rng rng(1);
    Mlp net({3, 3}, rng);
    net.params().setZero();
    // weight is column-major 3x3 at offset 0
    for (int i = 0; i < 3; ++i) net.params()[i * 3 + i] = 1.0;
    const Eigen::Vector3d x(0.3, -1.2, 2.5);
    CHECK((net.forward(x) - x).norm() == 0.0);
}

TEST_CASE("zero weights with bias c output exactly c") {
    Rng rng(2);
    Mlp net({4, 2}, rng);
    net.params().setZero();
    net.params()[4 * 2] = 1.5;   // bias block follows the 2x4 weight
    net.params()[4 * 2 + 1] = -0.25;
    const Eigen::VectorXd y = net.forward(Eigen::VectorXd::Random(4));
    CHECK(y[0] == 1.5);
    CHECK(y[1] == -0.25);
}

TEST_CASE("forward is pure: re-evaluation is bit-identical") {
    Rng rng(3);
    Mlp net({5, 16, 4}, rng);
    const Eigen::VectorXd x = Eigen::VectorXd::Random(5);
    const Eigen::VectorXd y1 = net.forward(x);
    const Eigen::VectorXd y2 = net.forward(x);
    for (int i = 0; i < 4; ++i) CHECK(y1[i] == y2[i]);
    CHECK_THROWS(net.forward(Eigen::VectorXd::Random(6)));
}

TEST_CASE("backward matches central finite differences on a 2-layer net") {
    Rng rng(4);
    Mlp net({4, 12, 3}, rng);
    Batch batch = random_batch(4, 3, 8, rng);
    auto [loss, grad] = net_grad(net, batch, squared_error_loss());
    CHECK(std::isfinite(loss));
    const Eigen::VectorXd fd = fd_gradient(net, batch, squared_error_loss());
    int probes = 0;
    Rng probe_rng(5);
    while (probes < 100) {
        const int i = static_cast<int>(probe_rng.uniform_index(net.param_count()));
        const double denom = std::max({std::abs(grad[i]), std::abs(fd[i]), 1e-8});
        CHECK(std::abs(grad[i] - fd[i]) / denom < 1e-4);
        ++probes;
    }
}

TEST_CASE("constant loss yields a zero gradient") {
    Rng rng(6);
    Mlp net({3, 8, 2}, rng);
    Batch batch = random_batch(3, 2, 5, rng);
    const LossFn constant = [](const Eigen::VectorXd& y, const Eigen::VectorXd&) {
        return std::make_pair(7.0, Eigen::VectorXd::Zero(y.size()));
    };
    auto [loss, grad] = net_grad(net, batch, constant);
    CHECK(loss == 7.0);
    CHECK(grad.norm() == 0.0);
}

TEST_CASE("linear-regression gradient at zero weights is -2 X^T y / n") {
    Rng rng(7);
    Mlp net({3, 1}, rng);
    net.params().setZero();
    Batch batch = random_batch(3, 1, 16, rng);
    auto [loss, grad] = net_grad(net, batch, squared_error_loss());
    (void)loss;
    const Eigen::VectorXd closed_form =
        -2.0 * batch.inputs * batch.targets.transpose() / batch.size();
    for (int i = 0; i < 3; ++i) CHECK(grad[i] == doctest::Approx(closed_form[i]).epsilon(1e-12));
    CHECK(grad[3] == doctest::Approx(-2.0 * batch.targets.mean()).epsilon(1e-12));
}

TEST_CASE("sgd_step: zero grad and zero lr leave parameters unchanged") {
    Rng rng(8);
    Mlp net({2, 2}, rng);
    const Eigen::VectorXd before = net.params();
    sgd_step(net.params(), Eigen::VectorXd::Zero(net.param_count()), 0.5);
    CHECK((net.params() - before).norm() == 0.0);
    sgd_step(net.params(), Eigen::VectorXd::Ones(net.param_count()), 0.0);
    CHECK((net.params() - before).norm() == 0.0);
    CHECK_THROWS(sgd_step(net.params(), Eigen::VectorXd::Zero(1), 0.1));
}

TEST_CASE("sgd on a quadratic bowl converges to the argmin") {
    // f(p) = ||p - c||^2, gradient 2(p - c)
    Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd c(4);
    c << 1.0, -2.0, 0.5, 3.0;
    for (int i = 0; i < 1000; ++i) sgd_step(p, 2.0 * (p - c), 0.05);
    CHECK((p - c).norm() < 1e-6);
}

TEST_CASE("gradient-norm clip bounds the applied step") {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd g(2);
    g << 300.0, 400.0;  // norm 500
    sgd_step(p, g, 1.0, 10.0);
    CHECK(p.norm() == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("a one-layer net recovers W from y = Wx data") {
    Rng rng(9);
    Eigen::MatrixXd w_true(2, 3);
    w_true << 0.7, -1.2, 0.4, 0.1, 0.9, -0.5;
    Mlp net({3, 2}, rng);
    Batch batch;
    batch.inputs.resize(3, 64);
    batch.targets.resize(2, 64);
    for (int i = 0; i < 3 * 64; ++i) batch.inputs.data()[i] = rng.uniform(-1.0, 1.0);
    batch.targets = w_true * batch.inputs;
    for (int it = 0; it < 4000; ++it) {
        auto [loss, grad] = net_grad(net, batch, squared_error_loss());
        (void)loss;
        sgd_step(net.params(), grad, 0.05);
    }
    const Eigen::Map<const Eigen::MatrixXd> w_hat(net.params().data(), 2, 3);
    CHECK((w_hat - w_true).norm() / w_true.norm() < 1e-3);
}

TEST_CASE("recurrent cell BPTT gradient matches finite differences") {
    Rng rng(10);
    RnnCell cell(3, 8, 2, rng);
    const int window = 6;
    std::vector<Eigen::VectorXd> xs, targets;
    for (int t = 0; t < window; ++t) {
        xs.push_back(Eigen::VectorXd::Random(3));
        targets.push_back(Eigen::VectorXd::Random(2));
    }
    auto window_loss = [&](const RnnCell& c) {
        Eigen::VectorXd h = c.initial_state();
        double total = 0.0;
        for (int t = 0; t < window; ++t) {
            h = c.step(xs[t], h);
            total += (c.readout(h) - targets[t]).squaredNorm();
        }
        return total;
    };
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(cell.param_count());
    {
        Eigen::VectorXd h = cell.initial_state();
        std::vector<RnnCell::StepCache> caches(window);
        std::vector<Eigen::VectorXd> readout_grads(window);
        for (int t = 0; t < window; ++t) {
            h = cell.step_cached(xs[t], h, caches[t]);
            readout_grads[t] = 2.0 * (cell.readout(h) - targets[t]);
        }
        cell.backward_window(caches, readout_grads, grad);
    }
    Rng probe_rng(11);
    for (int probe = 0; probe < 100; ++probe) {
        const int i = static_cast<int>(probe_rng.uniform_index(cell.param_count()));
        const double h0 = 1e-5;
        const double saved = cell.params()[i];
        cell.params()[i] = saved + h0;
        const double up = window_loss(cell);
        cell.params()[i] = saved - h0;
        const double down = window_loss(cell);
        cell.params()[i] = saved;
        const double fd = (up - down) / (2.0 * h0);
        const double denom = std::max({std::abs(grad[i]), std::abs(fd), 1e-8});
        CHECK(std::abs(grad[i] - fd) / denom < 1e-4);
    }
}

TEST_CASE("checkpoints round-trip exactly") {
    Rng rng(12);
    Mlp net({4, 8, 2}, rng);
    Checkpoint ckpt;
    ckpt.seed = 987654321;
    ckpt.shapes = net.shapes();
    ckpt.values = net.params();
    ckpt.extra = {1.0, 2.5, -3.75};
    const std::string path = "ckpt_roundtrip.bin";
    save_checkpoint(ckpt, path);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.seed == ckpt.seed);
    CHECK(loaded.shapes == ckpt.shapes);
    REQUIRE(loaded.values.size() == ckpt.values.size());
    for (int i = 0; i < ckpt.values.size(); ++i) CHECK(loaded.values[i] == ckpt.values[i]);
    CHECK(loaded.extra == ckpt.extra);
    std::remove(path.c_str());
}
