#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "lpsgld/data.hpp"
#include "lpsgld/models.hpp"
#include "lpsgld/rng.hpp"

using namespace lpsgld;

namespace {

double directional_fd(const EnergyModel& m, std::span<const double> theta,
                      std::span<const double> dir, double h) {
    std::vector<double> tp(theta.begin(), theta.end());
    std::vector<double> tm(theta.begin(), theta.end());
    for (size_t i = 0; i < theta.size(); ++i) {
        tp[i] += h * dir[i];
        tm[i] -= h * dir[i];
    }
    return (m.energy(tp) - m.energy(tm)) / (2.0 * h);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Relative agreement between analytic and finite-difference directional
// derivatives, with a floor that keeps near-zero derivatives meaningful.
double grad_fd_relerr(const EnergyModel& m, RngStream& rng, double point_scale) {
    int d = m.dim();
    std::vector<double> theta(d), dir(d), grad(d);
    for (int i = 0; i < d; ++i) theta[i] = point_scale * rng.next_gaussian();
    double norm = 0.0;
    for (int i = 0; i < d; ++i) {
        dir[i] = rng.next_gaussian();
        norm += dir[i] * dir[i];
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < d; ++i) dir[i] /= norm;
    m.grad(theta, grad);
    double an = dot(grad, dir);
    double fd = directional_fd(m, theta, dir, 1e-5);
    return std::fabs(an - fd) / std::max(std::fabs(fd), 1e-3);
}

std::shared_ptr<const Dataset> tiny_data() {
    return std::make_shared<const Dataset>(synth_classify(60, 7, 3, 1.5, 5, 0));
}

} // namespace

TEST_CASE("gaussian target has closed-form energy and gradient") {
    GaussianTarget g1(1, 0.0, 0.0625);
    std::vector<double> theta = {0.5}, grad(1);
    CHECK(g1.energy(theta) == doctest::Approx(2.0).epsilon(1e-15));
    g1.grad(theta, grad);
    CHECK(grad[0] == doctest::Approx(8.0).epsilon(1e-15));

    GaussianTarget g2(std::vector<double>{1.0, -2.0}, 4.0);
    std::vector<double> t2 = {1.0, 0.0}, gr2(2);
    CHECK(g2.energy(t2) == doctest::Approx(0.5).epsilon(1e-15));
    g2.grad(t2, gr2);
    CHECK(gr2[0] == 0.0);
    CHECK(gr2[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g2.dim() == 2);
    CHECK(g2.data_size() == 0);

    // Default initialization starts chains at the origin.
    RngStream rng(1, 0);
    std::vector<double> init = {9.0, 9.0};
    g2.init_theta(init, rng);
    CHECK(init == std::vector<double>{0.0, 0.0});
}

TEST_CASE("logistic regression gradient matches finite differences") {
    auto data = tiny_data();
    LogisticRegressionModel model(data);
    CHECK(model.dim() == 3 * 7);
    CHECK(model.data_size() == 60);
    RngStream rng(77, 0);
    for (int rep = 0; rep < 20; ++rep)
        CHECK(grad_fd_relerr(model, rng, 0.4) < 1e-5);
}

TEST_CASE("full-batch stochastic gradient equals the exact gradient") {
    auto data = tiny_data();
    LogisticRegressionModel model(data);
    int d = model.dim();
    std::vector<double> theta(d), g_full(d), g_batch(d);
    RngStream rng(3, 0);
    for (int i = 0; i < d; ++i) theta[i] = 0.3 * rng.next_gaussian();
    model.grad(theta, g_full);
    std::vector<int32_t> all(data->n);
    for (int64_t i = 0; i < data->n; ++i) all[i] = static_cast<int32_t>(i);
    RngStream quant(3, 1);
    model.stoch_grad(theta, all, g_batch, quant);
    // Identity batch, scale factor exactly 1: bitwise identical.
    CHECK(g_full == g_batch);
    CHECK_THROWS_AS(
        model.stoch_grad(theta, std::span<const int32_t>{}, g_batch, quant),
        std::invalid_argument);
}

TEST_CASE("minibatch gradients are unbiased for the full gradient") {
    auto data = tiny_data();
    LogisticRegressionModel model(data);
    int d = model.dim();
    std::vector<double> theta(d), g_full(d), g_batch(d), g_mean(d, 0.0);
    RngStream rng(9, 0);
    for (int i = 0; i < d; ++i) theta[i] = 0.2 * rng.next_gaussian();
    model.grad(theta, g_full);
    // Average the batch gradient over full epochs: without-replacement
    // batches tile the data, so epoch averages hit the full gradient's
    // likelihood part exactly (prior enters every batch identically).
    BatchIterator it(data->n, 20, 4, 0);
    const int batches = 30; // 10 epochs of 3 batches
    RngStream quant(4, 1);
    for (int b = 0; b < batches; ++b) {
        model.stoch_grad(theta, it.next(), g_batch, quant);
        for (int i = 0; i < d; ++i) g_mean[i] += g_batch[i];
    }
    double worst = 0.0;
    for (int i = 0; i < d; ++i)
        worst = std::max(worst,
                         std::fabs(g_mean[i] / batches - g_full[i]));
    CHECK(worst < 1e-10);
}

TEST_CASE("logistic predictions are simplex rows, uniform at zero weights") {
    auto data = tiny_data();
    LogisticRegressionModel model(data);
    std::vector<double> theta(model.dim(), 0.0);
    std::vector<int32_t> idx = {0, 5, 17};
    std::vector<double> probs(idx.size() * 3);
    model.predict(theta, *data, idx, probs);
    for (size_t r = 0; r < idx.size(); ++r) {
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
            double p = probs[r * 3 + c];
            CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
            sum += p;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("two-layer network forward pass matches a hand computation") {
    auto ds = std::make_shared<Dataset>();
    ds->n = 1;
    ds->dim = 1;
    ds->classes = 2;
    ds->features = {2.0};
    ds->labels = {0};
    ds->shift = {0.0};
    ds->scale = {1.0};
    MlpModel model(ds, /*hidden_units=*/1);
    CHECK(model.dim() == 6); // W1(1) + b1(1) + W2(2) + b2(2)

    // theta = [w1, b1, w2_row0, w2_row1, b2_0, b2_1]
    std::vector<double> theta = {0.5, 0.1, 1.0, -1.0, 0.2, -0.2};
    // hidden = relu(0.5 * 2 + 0.1) = 1.1; logits = (1.3, -1.3).
    std::vector<int32_t> idx = {0};
    std::vector<double> probs(2);
    model.predict(theta, *ds, idx, probs);
    double p0 = 1.0 / (1.0 + std::exp(-2.6));
    CHECK(probs[0] == doctest::Approx(p0).epsilon(1e-14));
    CHECK(probs[1] == doctest::Approx(1.0 - p0).epsilon(1e-12));

    // Energy = cross-entropy + prior quadratic with weight 1/(2 * 1/6) = 3.
    double sumsq = 0.25 + 0.01 + 1.0 + 1.0 + 0.04 + 0.04;
    double expect = -std::log(p0) + 3.0 * sumsq;
    CHECK(model.energy(theta) == doctest::Approx(expect).epsilon(1e-12));

    // Dead ReLU: negative pre-activation zeroes the hidden unit, so the
    // logits collapse to the output biases.
    ds.reset(); // model holds its own shared copy
    auto ds2 = std::make_shared<Dataset>();
    ds2->n = 1;
    ds2->dim = 1;
    ds2->classes = 2;
    ds2->features = {-2.0};
    ds2->labels = {1};
    ds2->shift = {0.0};
    ds2->scale = {1.0};
    MlpModel m2(ds2, 1);
    std::vector<double> probs2(2);
    m2.predict(theta, *ds2, idx, probs2);
    double q0 = 1.0 / (1.0 + std::exp(-0.4)); // logits (0.2, -0.2)
    CHECK(probs2[0] == doctest::Approx(q0).epsilon(1e-14));
}

TEST_CASE("network gradient matches finite differences") {
    auto data = tiny_data();
    MlpModel model(data, /*hidden_units=*/16);
    CHECK(model.dim() == 16 * 7 + 16 + 3 * 16 + 3);
    RngStream rng(78, 0);
    for (int rep = 0; rep < 10; ++rep)
        CHECK(grad_fd_relerr(model, rng, 0.3) < 1e-5);
}

TEST_CASE("network initialization is deterministic and in the fan bounds") {
    auto data = tiny_data();
    MlpModel model(data, 16);
    int d = model.dim();
    std::vector<double> a(d), b(d);
    RngStream r1(5, 2), r2(5, 2);
    model.init_theta(a, r1);
    model.init_theta(b, r2);
    CHECK(a == b);
    double w1 = std::sqrt(6.0 / (7 + 16));
    for (int j = 0; j < 16 * 7; ++j) CHECK(std::fabs(a[j]) <= w1);
    // Biases start at zero.
    for (int j = 16 * 7; j < 16 * 7 + 16; ++j) CHECK(a[j] == 0.0);
}

TEST_CASE("posterior-averaged predictions are the mean of per-sample rows") {
    auto data = tiny_data();
    LogisticRegressionModel model(data);
    int d = model.dim();
    std::vector<double> stack(2 * d);
    RngStream rng(6, 0);
    for (double& x : stack) x = 0.3 * rng.next_gaussian();
    std::vector<int32_t> idx = {1, 2, 3};
    std::vector<double> pa(idx.size() * 3), pb(idx.size() * 3);
    model.predict(std::span<const double>(stack).subspan(0, d), *data, idx, pa);
    model.predict(std::span<const double>(stack).subspan(d, d), *data, idx, pb);
    auto avg = bma_predict(stack, 2, model, *data, idx);
    REQUIRE(avg.size() == pa.size());
    for (size_t k = 0; k < avg.size(); ++k)
        CHECK(avg[k] == doctest::Approx(0.5 * (pa[k] + pb[k])).epsilon(1e-15));

    CHECK_THROWS_AS(bma_predict(stack, 3, model, *data, idx),
                    std::invalid_argument);
    CHECK_THROWS_AS(bma_predict(stack, 0, model, *data, idx),
                    std::invalid_argument);
}

TEST_CASE("quantized training pipeline still produces finite gradients") {
    auto data = tiny_data();
    QuantizerSpec q8 = QuantizerSpec::fixed_stoch(8, 3);
    MlpModel model(data, 8, 1.0 / 6.0, q8, q8, q8);
    int d = model.dim();
    std::vector<double> theta(d), g(d);
    RngStream init(7, 0), quant(7, 1);
    model.init_theta(theta, init);
    std::vector<int32_t> batch = {0, 1, 2, 3, 4, 5, 6, 7};
    model.stoch_grad(theta, batch, g, quant);
    for (double x : g) CHECK(std::isfinite(x));
    // The quantized path must differ from the exact one: the activation,
    // error, and gradient quantizers all touch it.
    std::vector<double> g_exact(d);
    MlpModel exact(data, 8);
    RngStream quant2(7, 1);
    exact.stoch_grad(theta, batch, g_exact, quant2);
    CHECK(g != g_exact);
}
