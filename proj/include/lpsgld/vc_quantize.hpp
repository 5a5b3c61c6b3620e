#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "lpsgld/formats.hpp"
#include "lpsgld/quantize.hpp"
#include "lpsgld/rng.hpp"

namespace lpsgld {

/// Diagnostics for variance-corrected quantization.  A fallback element is
/// one where the rounding variance already exceeded the requested variance,
/// so no correction could be added; the excess is the amount left over.
struct VcStats {
    int64_t elements = 0;
    int64_t fallback = 0;
    double excess_variance_sum = 0.0;

    void merge(const VcStats& other) {
        elements += other.elements;
        fallback += other.fallback;
        excess_variance_sum += other.excess_variance_sum;
    }
};

/// Draws from the three-point distribution on {+gap, -gap, 0} with exact
/// mean mu and variance v:
///   P(+gap) = (v + mu^2 + mu*gap) / (2 gap^2)
///   P(-gap) = (v + mu^2 - mu*gap) / (2 gap^2)
///   P(0)    = 1 - P(+gap) - P(-gap)
/// Requires v + mu^2 - mu*gap >= 0 and (v + mu^2) <= gap^2; violations
/// beyond roundoff (1e-12) raise a domain error naming the bad probability.
inline double cat_sample(double mu, double v, double gap, RngStream& rng) {
    constexpr double kTol = 1e-12;
    double g2 = 2.0 * gap * gap;
    double p_plus = (v + mu * mu + mu * gap) / g2;
    double p_minus = (v + mu * mu - mu * gap) / g2;
    if (p_minus < -kTol)
        throw std::domain_error(
            "cat_sample: P(-gap) = " + std::to_string(p_minus) +
            " is negative (v + mu^2 - mu*gap < 0)");
    if (p_plus < -kTol)
        throw std::domain_error("cat_sample: P(+gap) = " +
                                std::to_string(p_plus) + " is negative");
    if (p_plus + p_minus > 1.0 + kTol)
        throw std::domain_error(
            "cat_sample: P(0) = " + std::to_string(1.0 - p_plus - p_minus) +
            " is negative ((v + mu^2) > gap^2)");
    p_plus = std::clamp(p_plus, 0.0, 1.0);
    p_minus = std::clamp(p_minus, 0.0, 1.0);
    double u = rng.next_unit();
    if (u < p_plus) return gap;
    if (u < p_plus + p_minus) return -gap;
    return 0.0;
}

/// Variance of stochastic rounding applied at mu: gap^2 * p * (1 - p) with
/// p the fractional position of mu between its two neighboring grid points.
/// Zero exactly on the grid, maximal (gap^2 / 4) at midpoints.
inline double stoch_round_variance(double mu, double gap) {
    double t = mu / gap;
    double p = t - std::floor(t);
    return gap * gap * p * (1.0 - p);
}

namespace detail {

inline void require_positive_variance(double v) {
    if (!(v > 0.0) || !std::isfinite(v))
        throw std::domain_error("vc_quantize: variance must be positive, got " +
                                std::to_string(v));
}

/// One element of the low-variance branch: stochastic-round mu, then top up
/// with a mean-zero three-point draw when the rounding variance v_s falls
/// short of the target v.  Returns the unclipped result.
inline double vc_low_variance_element(double mu, double v, double gap,
                                      RngStream& rng, VcStats* stats) {
    double s = round_stochastic(mu, gap, rng);
    double r = mu - s;
    double ar = std::fabs(r);
    // Rounding variance is gap^2 * p(1-p) with p the fractional grid
    // position of mu; both realized values of r give the same v_s.
    double v_s = (1.0 - ar / gap) * r * r + (ar / gap) * (gap - ar) * (gap - ar);
    if (v > v_s) return s + cat_sample(0.0, v - v_s, gap, rng);
    if (stats != nullptr) {
        ++stats->fallback;
        stats->excess_variance_sum += v_s - v;
    }
    return s;
}

/// One element of the high-variance branch given a perturbed value x:
/// nearest-rounding residual is re-injected through a three-point draw with
/// variance gap^2/4, keeping mean x and total variance exact.
inline double vc_high_variance_element(double x, double gap, RngStream& rng) {
    double q = round_nearest_away(x, gap);
    double r = x - q;
    double c = cat_sample(std::fabs(r), gap * gap / 4.0, gap, rng);
    if (r > 0.0) return q + c;
    if (r < 0.0) return q - c;
    return q;
}

} // namespace detail

/// Variance-corrected quantization onto a fixed-point grid.  The output has
/// elementwise mean mu and variance v (up to the final range clip), so the
/// grid noise replaces part of the injected Gaussian noise instead of
/// adding to it.  When v exceeds gap^2/4 the input is Gaussian-perturbed by
/// the surplus and the rounding residual is resampled; otherwise stochastic
/// rounding supplies part of v and a mean-zero three-point draw tops it up.
/// Elements whose rounding variance already exceeds v are returned as
/// plainly stochastic-rounded and counted in `stats`.
inline void vc_quantize(std::span<const double> mu, double v,
                        const FixedPointFormat& fmt, std::span<double> out,
                        RngStream& rng, VcStats* stats = nullptr) {
    if (mu.size() != out.size())
        throw std::invalid_argument("vc_quantize: size mismatch");
    fmt.validate();
    detail::require_positive_variance(v);
    double gap = fmt.gap(), lo = fmt.lower(), hi = fmt.upper();
    double v0 = gap * gap / 4.0;
    if (stats != nullptr) stats->elements += static_cast<int64_t>(mu.size());
    if (v > v0) {
        double sd = std::sqrt(v - v0);
        for (size_t i = 0; i < mu.size(); ++i) {
            detail::require_finite(mu[i]);
            double x = mu[i] + sd * rng.next_gaussian();
            out[i] = std::clamp(detail::vc_high_variance_element(x, gap, rng),
                                lo, hi);
        }
    } else {
        for (size_t i = 0; i < mu.size(); ++i) {
            detail::require_finite(mu[i]);
            out[i] = std::clamp(
                detail::vc_low_variance_element(mu[i], v, gap, rng, stats), lo,
                hi);
        }
    }
}

/// Variance-corrected quantization onto a block-float grid.  The branch is
/// chosen per block from the gap implied by mu; in the high-variance branch
/// the shared exponent (hence gap and clip range) is recomputed from the
/// perturbed values before rounding, mirroring how a real block format
/// would store them.
inline void vc_quantize_bf(std::span<const double> mu, double v,
                           const BlockFloatFormat& fmt, std::span<double> out,
                           RngStream& rng, VcStats* stats = nullptr) {
    if (mu.size() != out.size())
        throw std::invalid_argument("vc_quantize_bf: size mismatch");
    fmt.validate();
    detail::require_positive_variance(v);
    if (stats != nullptr) stats->elements += static_cast<int64_t>(mu.size());
    for (size_t start = 0; start < mu.size();
         start += static_cast<size_t>(fmt.block_len)) {
        size_t len = std::min<size_t>(fmt.block_len, mu.size() - start);
        auto mu_block = mu.subspan(start, len);
        auto out_block = out.subspan(start, len);
        for (double m : mu_block) detail::require_finite(m);
        double gap_mu = fmt.gap_for_block(mu_block);
        double v0_mu = gap_mu * gap_mu / 4.0;
        if (v > v0_mu) {
            double sd = std::sqrt(v - v0_mu);
            for (size_t i = 0; i < len; ++i)
                out_block[i] = mu_block[i] + sd * rng.next_gaussian();
            double gap_x = fmt.gap_for_block(out_block);
            double lo = fmt.lower_for_gap(gap_x), hi = fmt.upper_for_gap(gap_x);
            for (size_t i = 0; i < len; ++i)
                out_block[i] = std::clamp(
                    detail::vc_high_variance_element(out_block[i], gap_x, rng),
                    lo, hi);
        } else {
            double lo = fmt.lower_for_gap(gap_mu), hi = fmt.upper_for_gap(gap_mu);
            for (size_t i = 0; i < len; ++i)
                out_block[i] = std::clamp(
                    detail::vc_low_variance_element(mu_block[i], v, gap_mu, rng,
                                                    stats),
                    lo, hi);
        }
    }
}

/// Variance-corrected quantization onto a per-element float grid.  Same
/// scheme as the block version with block length one: the exponent (hence
/// gap) is recomputed from the perturbed value in the high-variance branch.
inline void vc_quantize_bf(std::span<const double> mu, double v,
                           const FloatFormat& fmt, std::span<double> out,
                           RngStream& rng, VcStats* stats = nullptr) {
    if (mu.size() != out.size())
        throw std::invalid_argument("vc_quantize_bf: size mismatch");
    fmt.validate();
    detail::require_positive_variance(v);
    if (stats != nullptr) stats->elements += static_cast<int64_t>(mu.size());
    double hi = fmt.max_value();
    for (size_t i = 0; i < mu.size(); ++i) {
        detail::require_finite(mu[i]);
        double gap_mu = fmt.gap_for(mu[i]);
        double v0_mu = gap_mu * gap_mu / 4.0;
        double result;
        if (v > v0_mu) {
            double x = mu[i] + std::sqrt(v - v0_mu) * rng.next_gaussian();
            double gap_x = fmt.gap_for(x);
            result = detail::vc_high_variance_element(x, gap_x, rng);
        } else {
            result =
                detail::vc_low_variance_element(mu[i], v, gap_mu, rng, stats);
        }
        out[i] = std::clamp(result, -hi, hi);
    }
}

} // namespace lpsgld
