#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpsgld/data.hpp"
#include "lpsgld/formats.hpp"
#include "lpsgld/models.hpp"
#include "lpsgld/quantize.hpp"
#include "lpsgld/rng.hpp"
#include "lpsgld/vc_quantize.hpp"

namespace lpsgld {

/// Where the weight update accumulates:
///   Full     - full-precision accumulator; weights are quantized views.
///   LowNaive - update computed in full precision, then rounded onto the
///              weight grid (gradient accumulators low precision).
///   LowVc    - like LowNaive but the injected Gaussian noise and the
///              rounding noise are sampled jointly so the step keeps the
///              exact update mean and variance (Langevin only).
enum class Accumulator { Full, LowNaive, LowVc };

enum class ScheduleKind { Constant, Cyclical };

struct Schedule {
    ScheduleKind kind = ScheduleKind::Constant;
    int cycles = 1;
    int samples_per_cycle = 0; // advisory; used by the runners to pick thinning
};

/// Stepsize at 0-based step k of total_steps under the schedule: constant,
/// or the cosine cycle alpha0/2 * (cos(pi * mod(k, L) / L) + 1) with
/// L = ceil(total_steps / cycles).
inline double stepsize_at(const Schedule& s, int64_t k, int64_t total_steps,
                          double alpha0) {
    if (s.kind == ScheduleKind::Constant) return alpha0;
    if (s.cycles < 1) throw std::invalid_argument("schedule: cycles must be >= 1");
    int64_t cycle_len = (total_steps + s.cycles - 1) / s.cycles;
    double phase = static_cast<double>(k % cycle_len) / static_cast<double>(cycle_len);
    return alpha0 / 2.0 *
           (std::cos(3.1415926535897932384626433832795 * phase) + 1.0);
}

/// Raised when a chain leaves the finite/bounded region.
struct ChainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChainConfig {
    double alpha = 1e-3;
    int64_t steps = 1000;
    int64_t burn_in = 0;
    int64_t thin = 1;

    bool langevin = true; // false = plain stochastic gradient descent
    Accumulator accumulator = Accumulator::Full;
    QuantizerSpec weight_quantizer;   // identity when mode is None
    QuantizerSpec gradient_quantizer; // identity when mode is None
    Schedule schedule;

    uint64_t seed = 1;
    // Independent derived streams; keeping noise / data order / init apart
    // from quantizer draws lets runs with different quantizers share the
    // same trajectory randomness.
    uint64_t stream_noise = 0;
    uint64_t stream_data = 1;
    uint64_t stream_init = 2;
    uint64_t stream_quant = 3;

    int batch_size = 0; // 0 = full-data batches (ignored without data)
    // The gradient quantizer sees grad / grad_scale (a power of two), so
    // large-scale gradients can be quantized at unit scale without changing
    // the update: the scale cancels exactly.
    double grad_scale = 1.0;
    double divergence_guard = 1e6;
    bool store_samples = true;
    // With a full-precision accumulator the recorded samples are normally
    // the grid-resident weights (what inference would use); set this to
    // record the accumulator iterates themselves instead.
    bool observe_accumulator = false;

    void validate(const EnergyModel& model) const {
        if (!(alpha > 0.0) || !std::isfinite(alpha))
            throw std::invalid_argument("chain: stepsize must be positive");
        if (steps < 1) throw std::invalid_argument("chain: steps must be >= 1");
        if (burn_in < 0 || burn_in > steps)
            throw std::invalid_argument("chain: burn_in must lie in [0, steps]");
        if (thin < 1) throw std::invalid_argument("chain: thin must be >= 1");
        if (accumulator == Accumulator::LowVc && !langevin)
            throw std::invalid_argument(
                "chain: the variance-corrected accumulator requires Langevin noise");
        lpsgld::validate(weight_quantizer.format);
        lpsgld::validate(gradient_quantizer.format);
        double l2 = std::log2(grad_scale);
        if (!(grad_scale > 0.0) || l2 != std::floor(l2))
            throw std::invalid_argument("chain: grad_scale must be a power of two");
        if (model.data_size() > 0 && batch_size != 0 &&
            (batch_size < 1 || batch_size > model.data_size()))
            throw std::invalid_argument("chain: batch_size out of range");
        if (!(divergence_guard > 0.0))
            throw std::invalid_argument("chain: divergence guard must be positive");
    }
};

struct ChainState {
    std::vector<double> theta;    // the (possibly grid-resident) iterate
    std::vector<double> theta_fp; // full-precision accumulator (Full only)
    int64_t k = 0;
};

struct SampleSet {
    int dim = 0;
    int64_t count = 0;
    std::vector<double> flat; // count * dim row-major (empty if not stored)
    std::vector<int64_t> step_index;

    std::span<const double> sample(int64_t j) const {
        return std::span<const double>(flat).subspan(
            static_cast<size_t>(j) * static_cast<size_t>(dim),
            static_cast<size_t>(dim));
    }
};

using SampleObserver =
    std::function<void(int64_t step, std::span<const double> theta)>;

namespace detail {

inline void check_finite_grad(std::span<const double> g, int64_t step) {
    for (double x : g)
        if (!std::isfinite(x))
            throw ChainError("non-finite gradient at step " + std::to_string(step));
}

inline void check_divergence(std::span<const double> theta, double guard,
                             int64_t step) {
    for (double x : theta) {
        if (!std::isfinite(x))
            throw ChainError("non-finite iterate at step " + std::to_string(step));
        if (std::fabs(x) > guard)
            throw ChainError("iterate exceeded divergence guard " +
                             std::to_string(guard) + " at step " +
                             std::to_string(step));
    }
}

inline void quantize_gradient(std::span<double> g, const QuantizerSpec& qg,
                              double grad_scale, RngStream& rng) {
    if (!qg.active()) return;
    if (grad_scale != 1.0)
        for (double& x : g) x /= grad_scale;
    quantize(g, g, qg, rng);
    if (grad_scale != 1.0)
        for (double& x : g) x *= grad_scale;
}

/// Variance-corrected rounding of mu onto the weight grid with target
/// variance v, dispatched on the format.  With the quantizer disabled the
/// step degrades to the exact Gaussian update mu + sqrt(v) * xi, drawn from
/// the noise stream so the trajectory matches the full-precision sampler
/// draw for draw.
inline void vc_step_weights(std::span<const double> mu, double v,
                            const QuantizerSpec& qw, std::span<double> out,
                            RngStream& noise_rng, RngStream& quant_rng,
                            VcStats* stats) {
    if (!qw.active()) {
        double sd = std::sqrt(v);
        for (size_t i = 0; i < mu.size(); ++i)
            out[i] = mu[i] + sd * noise_rng.next_gaussian();
        return;
    }
    if (const auto* fx = std::get_if<FixedPointFormat>(&qw.format)) {
        vc_quantize(mu, v, *fx, out, quant_rng, stats);
    } else if (const auto* bf = std::get_if<BlockFloatFormat>(&qw.format)) {
        vc_quantize_bf(mu, v, *bf, out, quant_rng, stats);
    } else {
        vc_quantize_bf(mu, v, std::get<FloatFormat>(qw.format), out, quant_rng,
                       stats);
    }
}

} // namespace detail

/// One transition of the configured chain.  `g` and `mu` are
/// caller-provided scratch buffers of the model dimension.
inline void chain_step(ChainState& state, const EnergyModel& model,
                       std::span<const int32_t> batch, const ChainConfig& cfg,
                       double alpha_k, RngStream& noise_rng,
                       RngStream& quant_rng, std::span<double> g,
                       std::span<double> mu, VcStats* vc_stats) {
    const size_t dim = state.theta.size();
    const bool has_data = model.data_size() > 0;
    switch (cfg.accumulator) {
        case Accumulator::Full: {
            // Gradient at the quantized view; update the full accumulator.
            if (has_data)
                model.stoch_grad(state.theta, batch, g, quant_rng);
            else
                model.grad(state.theta, g);
            detail::check_finite_grad(g, state.k);
            detail::quantize_gradient(g, cfg.gradient_quantizer, cfg.grad_scale,
                                      quant_rng);
            if (cfg.langevin) {
                // Written as (theta - alpha g) + noise so the arithmetic is
                // associatively identical to the low-precision accumulators;
                // with quantizers disabled all three modes then produce
                // bitwise-equal trajectories.
                double sd = std::sqrt(2.0 * alpha_k);
                for (size_t i = 0; i < dim; ++i)
                    state.theta_fp[i] = state.theta_fp[i] - alpha_k * g[i] +
                                        sd * noise_rng.next_gaussian();
            } else {
                for (size_t i = 0; i < dim; ++i)
                    state.theta_fp[i] -= alpha_k * g[i];
            }
            detail::check_divergence(state.theta_fp, cfg.divergence_guard,
                                     state.k);
            quantize(state.theta_fp, state.theta, cfg.weight_quantizer,
                     quant_rng);
            break;
        }
        case Accumulator::LowNaive: {
            if (has_data)
                model.stoch_grad(state.theta, batch, g, quant_rng);
            else
                model.grad(state.theta, g);
            detail::check_finite_grad(g, state.k);
            detail::quantize_gradient(g, cfg.gradient_quantizer, cfg.grad_scale,
                                      quant_rng);
            if (cfg.langevin) {
                double sd = std::sqrt(2.0 * alpha_k);
                for (size_t i = 0; i < dim; ++i)
                    mu[i] = state.theta[i] - alpha_k * g[i] +
                            sd * noise_rng.next_gaussian();
            } else {
                for (size_t i = 0; i < dim; ++i)
                    mu[i] = state.theta[i] - alpha_k * g[i];
            }
            quantize(mu, state.theta, cfg.weight_quantizer, quant_rng);
            detail::check_divergence(state.theta, cfg.divergence_guard, state.k);
            break;
        }
        case Accumulator::LowVc: {
            if (has_data)
                model.stoch_grad(state.theta, batch, g, quant_rng);
            else
                model.grad(state.theta, g);
            detail::check_finite_grad(g, state.k);
            detail::quantize_gradient(g, cfg.gradient_quantizer, cfg.grad_scale,
                                      quant_rng);
            for (size_t i = 0; i < dim; ++i)
                mu[i] = state.theta[i] - alpha_k * g[i];
            detail::vc_step_weights(mu, 2.0 * alpha_k, cfg.weight_quantizer,
                                    state.theta, noise_rng, quant_rng, vc_stats);
            detail::check_divergence(state.theta, cfg.divergence_guard, state.k);
            break;
        }
    }
    ++state.k;
}

/// Runs the configured chain and returns the recorded samples: one record
/// per step k (1-based) with k > burn_in and (k - burn_in) divisible by
/// thin, so the sample count is floor((steps - burn_in) / thin).  The
/// observer (if any) sees every recorded sample; storage can be switched
/// off for long moment-accumulation runs.  Identical configs and seeds
/// produce identical sample sets.
inline SampleSet run_chain(const ChainConfig& cfg, const EnergyModel& model,
                           const SampleObserver& observer = {},
                           VcStats* vc_out = nullptr) {
    cfg.validate(model);
    const int dim = model.dim();
    RngStream noise_rng(cfg.seed, cfg.stream_noise);
    RngStream quant_rng(cfg.seed, cfg.stream_quant);
    RngStream init_rng(cfg.seed, cfg.stream_init);

    ChainState state;
    state.theta.resize(dim);
    model.init_theta(state.theta, init_rng);
    if (cfg.accumulator == Accumulator::Full) {
        state.theta_fp = state.theta;
        quantize(state.theta_fp, state.theta, cfg.weight_quantizer, quant_rng);
    } else if (cfg.weight_quantizer.active()) {
        // Low-precision accumulators hold grid-resident weights throughout.
        quantize(state.theta, state.theta, cfg.weight_quantizer, quant_rng);
    }

    std::optional<BatchIterator> batches;
    if (model.data_size() > 0) {
        int bs = cfg.batch_size == 0 ? static_cast<int>(model.data_size())
                                     : cfg.batch_size;
        batches.emplace(model.data_size(), bs, cfg.seed, cfg.stream_data);
    }

    std::vector<double> g(dim), mu(dim);
    VcStats vc_local;
    VcStats* vc_stats = vc_out != nullptr ? vc_out : &vc_local;

    SampleSet out;
    out.dim = dim;
    for (int64_t k = 1; k <= cfg.steps; ++k) {
        double alpha_k = stepsize_at(cfg.schedule, k - 1, cfg.steps, cfg.alpha);
        std::span<const int32_t> batch;
        if (batches) batch = batches->next();
        chain_step(state, model, batch, cfg, alpha_k, noise_rng, quant_rng, g,
                   mu, vc_stats);
        if (k > cfg.burn_in && (k - cfg.burn_in) % cfg.thin == 0) {
            const std::vector<double>& view =
                cfg.observe_accumulator && cfg.accumulator == Accumulator::Full
                    ? state.theta_fp
                    : state.theta;
            if (observer) observer(k, view);
            if (cfg.store_samples)
                out.flat.insert(out.flat.end(), view.begin(), view.end());
            out.step_index.push_back(k);
            ++out.count;
        }
    }
    return out;
}

} // namespace lpsgld
