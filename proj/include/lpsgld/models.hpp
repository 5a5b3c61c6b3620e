#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "lpsgld/data.hpp"
#include "lpsgld/formats.hpp"
#include "lpsgld/quantize.hpp"
#include "lpsgld/rng.hpp"

namespace lpsgld {

/// A target distribution exp(-U) presented through its energy U and
/// gradients.  `stoch_grad` returns the minibatch estimate at the scale of
/// the full energy: (N/|B|) * sum over the batch of per-example gradients,
/// plus the prior gradient.  Models without data fall back to the exact
/// gradient.
class EnergyModel {
  public:
    virtual ~EnergyModel() = default;

    virtual int dim() const = 0;
    virtual int64_t data_size() const { return 0; }

    virtual double energy(std::span<const double> theta) const = 0;
    virtual void grad(std::span<const double> theta,
                      std::span<double> out) const = 0;

    virtual void stoch_grad(std::span<const double> theta,
                            std::span<const int32_t> batch,
                            std::span<double> out, RngStream& rng) const {
        (void)batch;
        (void)rng;
        grad(theta, out);
    }

    virtual void init_theta(std::span<double> theta, RngStream& rng) const {
        (void)rng;
        std::fill(theta.begin(), theta.end(), 0.0);
    }
};

/// Classification models additionally expose predictive probabilities.
class Classifier : public EnergyModel {
  public:
    virtual int classes() const = 0;

    /// Predictive probabilities p(y | x, theta) for the selected examples,
    /// written row-major (idx.size() * classes).
    virtual void predict(std::span<const double> theta, const Dataset& data,
                         std::span<const int32_t> idx,
                         std::span<double> probs) const = 0;
};

/// Isotropic Gaussian energy U(theta) = |theta - mean|^2 / (2 variance).
class GaussianTarget : public EnergyModel {
  public:
    GaussianTarget(std::vector<double> mean, double variance)
        : mean_(std::move(mean)), variance_(variance) {
        if (!(variance_ > 0.0))
            throw std::invalid_argument("GaussianTarget: variance must be positive");
    }
    GaussianTarget(int dim, double mean, double variance)
        : GaussianTarget(std::vector<double>(dim, mean), variance) {}

    int dim() const override { return static_cast<int>(mean_.size()); }
    double target_mean(int i) const { return mean_[i]; }
    double target_variance() const { return variance_; }

    double energy(std::span<const double> theta) const override {
        double acc = 0.0;
        for (size_t i = 0; i < mean_.size(); ++i) {
            double d = theta[i] - mean_[i];
            acc += d * d;
        }
        return acc / (2.0 * variance_);
    }

    void grad(std::span<const double> theta, std::span<double> out) const override {
        for (size_t i = 0; i < mean_.size(); ++i)
            out[i] = (theta[i] - mean_[i]) / variance_;
    }

  private:
    std::vector<double> mean_;
    double variance_;
};

namespace detail {

/// Writes softmax(logits) into probs; returns log-sum-exp for reuse.
inline double softmax(std::span<const double> logits, std::span<double> probs) {
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double sum = 0.0;
    for (size_t c = 0; c < logits.size(); ++c) {
        probs[c] = std::exp(logits[c] - mx);
        sum += probs[c];
    }
    for (size_t c = 0; c < logits.size(); ++c) probs[c] /= sum;
    return mx + std::log(sum);
}

} // namespace detail

/// Multinomial (softmax) regression with a Gaussian prior on the weights.
/// Parameters are a classes-by-features matrix flattened row-major; there
/// is no bias term.  U(theta) = sum_i -log softmax(W x_i)[y_i]
/// + |theta|^2 / (2 prior_variance).
class LogisticRegressionModel : public Classifier {
  public:
    LogisticRegressionModel(std::shared_ptr<const Dataset> data,
                            double prior_variance = 1.0 / 6.0)
        : data_(std::move(data)), prior_var_(prior_variance) {
        if (!data_ || data_->n == 0)
            throw std::invalid_argument("LogisticRegressionModel: empty dataset");
        if (!(prior_var_ > 0.0))
            throw std::invalid_argument(
                "LogisticRegressionModel: prior variance must be positive");
    }

    int dim() const override { return data_->classes * data_->dim; }
    int classes() const override { return data_->classes; }
    int64_t data_size() const override { return data_->n; }
    const Dataset& train_data() const { return *data_; }

    double energy(std::span<const double> theta) const override {
        int C = data_->classes, D = data_->dim;
        std::vector<double> logits(C), probs(C);
        double total = 0.0;
        for (int64_t i = 0; i < data_->n; ++i) {
            auto x = data_->row(i);
            logits_for(theta, x, logits);
            double lse = detail::softmax(logits, probs);
            total += lse - logits[data_->labels[i]];
        }
        (void)D;
        return total + prior_energy(theta);
    }

    void grad(std::span<const double> theta, std::span<double> out) const override {
        std::fill(out.begin(), out.end(), 0.0);
        accumulate_likelihood_grad(theta, all_indices(), out);
        add_prior_grad(theta, out, 1.0);
    }

    void stoch_grad(std::span<const double> theta, std::span<const int32_t> batch,
                    std::span<double> out, RngStream& rng) const override {
        (void)rng;
        if (batch.empty())
            throw std::invalid_argument("stoch_grad: empty batch");
        std::fill(out.begin(), out.end(), 0.0);
        accumulate_likelihood_grad(theta, batch, out);
        double scale = static_cast<double>(data_->n) / static_cast<double>(batch.size());
        for (double& g : out) g *= scale;
        add_prior_grad(theta, out, 1.0);
    }

    void predict(std::span<const double> theta, const Dataset& data,
                 std::span<const int32_t> idx,
                 std::span<double> probs) const override {
        int C = data_->classes;
        if (data.dim != data_->dim)
            throw std::invalid_argument("predict: feature width mismatch");
        std::vector<double> logits(C);
        for (size_t r = 0; r < idx.size(); ++r) {
            auto x = data.row(idx[r]);
            logits_for(theta, x, logits);
            detail::softmax(logits, probs.subspan(r * C, C));
        }
    }

  private:
    std::span<const int32_t> all_indices() const {
        if (all_idx_.empty()) {
            all_idx_.resize(data_->n);
            for (int64_t i = 0; i < data_->n; ++i)
                all_idx_[i] = static_cast<int32_t>(i);
        }
        return all_idx_;
    }

    void logits_for(std::span<const double> theta, std::span<const double> x,
                    std::span<double> logits) const {
        int C = data_->classes, D = data_->dim;
        for (int c = 0; c < C; ++c) {
            const double* w = theta.data() + static_cast<size_t>(c) * D;
            double acc = 0.0;
            for (int d = 0; d < D; ++d) acc += w[d] * x[d];
            logits[c] = acc;
        }
    }

    void accumulate_likelihood_grad(std::span<const double> theta,
                                    std::span<const int32_t> idx,
                                    std::span<double> out) const {
        int C = data_->classes, D = data_->dim;
        std::vector<double> logits(C), probs(C);
        for (int32_t i : idx) {
            auto x = data_->row(i);
            logits_for(theta, x, logits);
            detail::softmax(logits, probs);
            int32_t y = data_->labels[i];
            for (int c = 0; c < C; ++c) {
                double coef = probs[c] - (c == y ? 1.0 : 0.0);
                if (coef == 0.0) continue;
                double* g = out.data() + static_cast<size_t>(c) * D;
                for (int d = 0; d < D; ++d) g[d] += coef * x[d];
            }
        }
    }

    double prior_energy(std::span<const double> theta) const {
        double acc = 0.0;
        for (double t : theta) acc += t * t;
        return acc / (2.0 * prior_var_);
    }

    void add_prior_grad(std::span<const double> theta, std::span<double> out,
                        double weight) const {
        for (size_t j = 0; j < theta.size(); ++j)
            out[j] += weight * theta[j] / prior_var_;
    }

    std::shared_ptr<const Dataset> data_;
    double prior_var_;
    mutable std::vector<int32_t> all_idx_;
};

/// Batch activations of the two-layer network, row-major per example.
struct MlpForward {
    std::vector<double> hidden; // batch * hidden_units, post-ReLU
    std::vector<double> logits; // batch * classes
};

/// One-hidden-layer ReLU network with a Gaussian prior on all parameters.
/// Parameter layout: [W1 (H x D), b1 (H), W2 (C x H), b2 (C)], row-major.
///
/// The training pipeline can emulate low precision at three stations:
/// activations are quantized by `qa` after each layer, propagated errors by
/// `qe` after each Jacobian application, and per-layer gradients by `qg`
/// inside backward_quantized.  `energy` and `predict` always use exact
/// arithmetic: the quantizers shape the gradient estimates, not the target.
class MlpModel : public Classifier {
  public:
    MlpModel(std::shared_ptr<const Dataset> data, int hidden_units = 100,
             double prior_variance = 1.0 / 6.0,
             QuantizerSpec qa = QuantizerSpec::none(),
             QuantizerSpec qe = QuantizerSpec::none(),
             QuantizerSpec qg = QuantizerSpec::none())
        : data_(std::move(data)), hidden_(hidden_units), prior_var_(prior_variance),
          qa_(qa), qe_(qe), qg_(qg) {
        if (!data_ || data_->n == 0)
            throw std::invalid_argument("MlpModel: empty dataset");
        if (hidden_ <= 0)
            throw std::invalid_argument("MlpModel: hidden_units must be positive");
        if (!(prior_var_ > 0.0))
            throw std::invalid_argument("MlpModel: prior variance must be positive");
    }

    int dim() const override {
        int D = data_->dim, C = data_->classes;
        return hidden_ * D + hidden_ + C * hidden_ + C;
    }
    int classes() const override { return data_->classes; }
    int64_t data_size() const override { return data_->n; }
    int hidden_units() const { return hidden_; }
    const Dataset& train_data() const { return *data_; }

    /// Glorot-uniform weights, zero biases.
    void init_theta(std::span<double> theta, RngStream& rng) const override {
        int D = data_->dim, C = data_->classes, H = hidden_;
        std::fill(theta.begin(), theta.end(), 0.0);
        double w1 = std::sqrt(6.0 / (D + H));
        for (int j = 0; j < H * D; ++j)
            theta[j] = (2.0 * rng.next_unit() - 1.0) * w1;
        double w2 = std::sqrt(6.0 / (H + C));
        size_t off = static_cast<size_t>(H) * D + H;
        for (int j = 0; j < C * H; ++j)
            theta[off + j] = (2.0 * rng.next_unit() - 1.0) * w2;
    }

    double energy(std::span<const double> theta) const override {
        int C = data_->classes;
        std::vector<double> hidden(hidden_), logits(C), probs(C);
        double total = 0.0;
        for (int64_t i = 0; i < data_->n; ++i) {
            forward_exact(theta, data_->row(i), hidden, logits);
            double lse = detail::softmax(logits, probs);
            total += lse - logits[data_->labels[i]];
        }
        double pr = 0.0;
        for (double t : theta) pr += t * t;
        return total + pr / (2.0 * prior_var_);
    }

    void grad(std::span<const double> theta, std::span<double> out) const override {
        RngStream unused(0, 0);
        std::vector<int32_t> idx(data_->n);
        for (int64_t i = 0; i < data_->n; ++i) idx[i] = static_cast<int32_t>(i);
        stoch_grad_impl(theta, idx, out, unused, /*quantized=*/false);
    }

    void stoch_grad(std::span<const double> theta, std::span<const int32_t> batch,
                    std::span<double> out, RngStream& rng) const override {
        if (batch.empty())
            throw std::invalid_argument("stoch_grad: empty batch");
        stoch_grad_impl(theta, batch, out, rng, /*quantized=*/true);
    }

    /// Forward pass with the activation quantizer applied after every layer.
    MlpForward forward_quantized(std::span<const double> theta,
                                 const Dataset& data,
                                 std::span<const int32_t> idx,
                                 RngStream& rng) const {
        int C = data_->classes, H = hidden_;
        MlpForward fwd;
        fwd.hidden.resize(idx.size() * static_cast<size_t>(H));
        fwd.logits.resize(idx.size() * static_cast<size_t>(C));
        for (size_t r = 0; r < idx.size(); ++r) {
            auto h = std::span<double>(fwd.hidden).subspan(r * H, H);
            auto l = std::span<double>(fwd.logits).subspan(r * C, C);
            forward_exact(theta, data.row(idx[r]), h, l);
            if (qa_.active()) {
                quantize(h, h, qa_, rng);
                quantize(l, l, qa_, rng);
            }
        }
        return fwd;
    }

    /// Backward pass from stored batch activations.  Returns per-layer
    /// gradients of the mean cross-entropy over the batch (no prior), with
    /// the error quantizer applied to each propagated error and the
    /// gradient quantizer applied per layer.
    std::vector<double> backward_quantized(std::span<const double> theta,
                                           const Dataset& data,
                                           std::span<const int32_t> idx,
                                           const MlpForward& fwd,
                                           RngStream& rng) const {
        int C = data_->classes, D = data_->dim, H = hidden_;
        std::vector<double> out(dim(), 0.0);
        auto [w1, b1, w2, b2] = split(theta);
        auto [gw1, gb1, gw2, gb2] = split_mut(out);
        (void)w1; (void)b1; (void)b2;
        std::vector<double> e2(C), e1(H);
        for (size_t r = 0; r < idx.size(); ++r) {
            auto x = data.row(idx[r]);
            auto h = std::span<const double>(fwd.hidden).subspan(r * H, H);
            auto logits = std::span<const double>(fwd.logits).subspan(r * C, C);
            detail::softmax(logits, e2);
            e2[data.labels[idx[r]]] -= 1.0;
            if (qe_.active()) quantize(e2, e2, qe_, rng);
            // Propagate through the second layer and the ReLU mask given by
            // the stored (possibly quantized) hidden activations.
            for (int j = 0; j < H; ++j) {
                double acc = 0.0;
                if (h[j] > 0.0)
                    for (int c = 0; c < C; ++c) acc += w2[c * H + j] * e2[c];
                e1[j] = acc;
            }
            if (qe_.active()) quantize(e1, e1, qe_, rng);
            for (int c = 0; c < C; ++c) {
                double coef = e2[c];
                if (coef == 0.0) continue;
                gb2[c] += coef;
                double* g = gw2.data() + static_cast<size_t>(c) * H;
                for (int j = 0; j < H; ++j) g[j] += coef * h[j];
            }
            for (int j = 0; j < H; ++j) {
                double coef = e1[j];
                if (coef == 0.0) continue;
                gb1[j] += coef;
                double* g = gw1.data() + static_cast<size_t>(j) * D;
                for (int d = 0; d < D; ++d) g[d] += coef * x[d];
            }
        }
        double inv = 1.0 / static_cast<double>(idx.size());
        for (double& g : out) g *= inv;
        if (qg_.active()) {
            quantize(gw1, gw1, qg_, rng);
            quantize(gb1, gb1, qg_, rng);
            quantize(gw2, gw2, qg_, rng);
            quantize(gb2, gb2, qg_, rng);
        }
        return out;
    }

    void predict(std::span<const double> theta, const Dataset& data,
                 std::span<const int32_t> idx,
                 std::span<double> probs) const override {
        int C = data_->classes;
        std::vector<double> hidden(hidden_), logits(C);
        for (size_t r = 0; r < idx.size(); ++r) {
            forward_exact(theta, data.row(idx[r]), hidden, logits);
            detail::softmax(logits, probs.subspan(r * C, C));
        }
    }

  private:
    struct Split {
        std::span<const double> w1, b1, w2, b2;
    };
    struct SplitMut {
        std::span<double> w1, b1, w2, b2;
    };

    Split split(std::span<const double> theta) const {
        int D = data_->dim, C = data_->classes, H = hidden_;
        size_t o1 = static_cast<size_t>(H) * D;
        return {theta.subspan(0, o1), theta.subspan(o1, H),
                theta.subspan(o1 + H, static_cast<size_t>(C) * H),
                theta.subspan(o1 + H + static_cast<size_t>(C) * H, C)};
    }
    SplitMut split_mut(std::span<double> theta) const {
        int D = data_->dim, C = data_->classes, H = hidden_;
        size_t o1 = static_cast<size_t>(H) * D;
        return {theta.subspan(0, o1), theta.subspan(o1, H),
                theta.subspan(o1 + H, static_cast<size_t>(C) * H),
                theta.subspan(o1 + H + static_cast<size_t>(C) * H, C)};
    }

    void forward_exact(std::span<const double> theta, std::span<const double> x,
                       std::span<double> hidden, std::span<double> logits) const {
        int D = data_->dim, C = data_->classes, H = hidden_;
        auto [w1, b1, w2, b2] = split(theta);
        for (int j = 0; j < H; ++j) {
            const double* w = w1.data() + static_cast<size_t>(j) * D;
            double acc = b1[j];
            for (int d = 0; d < D; ++d) acc += w[d] * x[d];
            hidden[j] = acc > 0.0 ? acc : 0.0;
        }
        for (int c = 0; c < C; ++c) {
            const double* w = w2.data() + static_cast<size_t>(c) * H;
            double acc = b2[c];
            for (int j = 0; j < H; ++j) acc += w[j] * hidden[j];
            logits[c] = acc;
        }
    }

    void stoch_grad_impl(std::span<const double> theta,
                         std::span<const int32_t> batch, std::span<double> out,
                         RngStream& rng, bool quantized) const {
        MlpForward fwd;
        if (quantized && (qa_.active() || qe_.active() || qg_.active())) {
            fwd = forward_quantized(theta, *data_, batch, rng);
        } else {
            int C = data_->classes, H = hidden_;
            fwd.hidden.resize(batch.size() * static_cast<size_t>(H));
            fwd.logits.resize(batch.size() * static_cast<size_t>(C));
            for (size_t r = 0; r < batch.size(); ++r)
                forward_exact(theta, data_->row(batch[r]),
                              std::span<double>(fwd.hidden).subspan(r * H, H),
                              std::span<double>(fwd.logits).subspan(r * C, C));
        }
        std::vector<double> mean_grad =
            backward_quantized(theta, *data_, batch, fwd, rng);
        double scale = static_cast<double>(data_->n);
        for (size_t j = 0; j < out.size(); ++j)
            out[j] = scale * mean_grad[j] + theta[j] / prior_var_;
    }

    std::shared_ptr<const Dataset> data_;
    int hidden_;
    double prior_var_;
    QuantizerSpec qa_, qe_, qg_;
};

/// Bayesian model average: mean predictive probabilities over a stack of
/// posterior samples laid out row-major (count * model.dim()).
inline std::vector<double> bma_predict(std::span<const double> samples_flat,
                                       int64_t sample_count,
                                       const Classifier& model,
                                       const Dataset& data,
                                       std::span<const int32_t> idx) {
    if (sample_count <= 0)
        throw std::invalid_argument("bma_predict: need at least one sample");
    size_t dim = static_cast<size_t>(model.dim());
    if (samples_flat.size() != static_cast<size_t>(sample_count) * dim)
        throw std::invalid_argument("bma_predict: sample stack size mismatch");
    size_t out_size = idx.size() * static_cast<size_t>(model.classes());
    std::vector<double> acc(out_size, 0.0), probs(out_size);
    for (int64_t s = 0; s < sample_count; ++s) {
        model.predict(samples_flat.subspan(static_cast<size_t>(s) * dim, dim),
                      data, idx, probs);
        for (size_t k = 0; k < out_size; ++k) acc[k] += probs[k];
    }
    double inv = 1.0 / static_cast<double>(sample_count);
    for (double& a : acc) a *= inv;
    return acc;
}

} // namespace lpsgld
