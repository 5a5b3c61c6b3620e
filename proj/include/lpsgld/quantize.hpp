#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "lpsgld/formats.hpp"
#include "lpsgld/rng.hpp"

namespace lpsgld {

namespace detail {

inline void require_finite(double x) {
    if (!std::isfinite(x))
        throw std::domain_error("quantize: non-finite input value");
}

} // namespace detail

/// Nearest-grid rounding with ties away from zero, no range clipping:
/// sign(x) * gap * floor(|x|/gap + 1/2).
inline double round_nearest_away(double x, double gap) {
    double mag = gap * std::floor(std::fabs(x) / gap + 0.5);
    return x < 0.0 ? -mag : mag;
}

/// Stochastic rounding to the enclosing grid points, no range clipping.
/// The lower point gap*floor(x/gap) is chosen with probability
/// ceil(x/gap) - x/gap, the upper one otherwise, so the result is unbiased.
/// A grid-resident input is returned unchanged.  Exactly one uniform draw
/// is consumed per call regardless of the input.
inline double round_stochastic(double x, double gap, RngStream& rng) {
    double t = x / gap;
    double lo = std::floor(t);
    double hi = std::ceil(t);
    double p_lo = hi - t;
    double u = rng.next_unit();
    return gap * (u < p_lo ? lo : hi);
}

/// Deterministic quantization: round to nearest (ties away from zero),
/// then clip the magnitude into the representable range.
inline double quantize_det_scalar(double x, double gap, double lo, double hi) {
    detail::require_finite(x);
    double mag = gap * std::floor(std::fabs(x) / gap + 0.5);
    mag = std::clamp(mag, lo, hi);
    return x < 0.0 ? -mag : mag;
}

/// Stochastic quantization: stochastic rounding, then clip the signed
/// value into the representable range.  Unbiased strictly inside (lo, hi);
/// clipping at the range boundary introduces bias toward the interior.
inline double quantize_stoch_scalar(double x, double gap, double lo, double hi,
                                    RngStream& rng) {
    detail::require_finite(x);
    return std::clamp(round_stochastic(x, gap, rng), lo, hi);
}

/// Grid gap per block for block float (one entry per block of
/// fmt.block_len elements; the final block may be short).
inline std::vector<double> block_gap(std::span<const double> values,
                                     const BlockFloatFormat& fmt) {
    fmt.validate();
    std::vector<double> gaps;
    size_t n = values.size();
    gaps.reserve((n + fmt.block_len - 1) / fmt.block_len);
    for (size_t start = 0; start < n; start += fmt.block_len) {
        size_t len = std::min<size_t>(fmt.block_len, n - start);
        gaps.push_back(fmt.gap_for_block(values.subspan(start, len)));
    }
    return gaps;
}

/// Grid gap per element for per-element float emulation.
inline std::vector<double> block_gap(std::span<const double> values,
                                     const FloatFormat& fmt) {
    fmt.validate();
    std::vector<double> gaps;
    gaps.reserve(values.size());
    for (double x : values) gaps.push_back(fmt.gap_for(x));
    return gaps;
}

inline void quantize_det(std::span<const double> in, std::span<double> out,
                         const NumberFormat& format) {
    if (in.size() != out.size())
        throw std::invalid_argument("quantize_det: size mismatch");
    if (const auto* fx = std::get_if<FixedPointFormat>(&format)) {
        fx->validate();
        double gap = fx->gap(), lo = fx->lower(), hi = fx->upper();
        for (size_t i = 0; i < in.size(); ++i)
            out[i] = quantize_det_scalar(in[i], gap, lo, hi);
    } else if (const auto* bf = std::get_if<BlockFloatFormat>(&format)) {
        bf->validate();
        for (size_t start = 0; start < in.size();
             start += static_cast<size_t>(bf->block_len)) {
            size_t len = std::min<size_t>(bf->block_len, in.size() - start);
            double gap = bf->gap_for_block(in.subspan(start, len));
            double lo = bf->lower_for_gap(gap), hi = bf->upper_for_gap(gap);
            for (size_t i = start; i < start + len; ++i)
                out[i] = quantize_det_scalar(in[i], gap, lo, hi);
        }
    } else {
        const auto& fl = std::get<FloatFormat>(format);
        fl.validate();
        double hi = fl.max_value();
        for (size_t i = 0; i < in.size(); ++i) {
            double gap = fl.gap_for(in[i]);
            out[i] = quantize_det_scalar(in[i], gap, -hi, hi);
        }
    }
}

inline void quantize_stoch(std::span<const double> in, std::span<double> out,
                           const NumberFormat& format, RngStream& rng) {
    if (in.size() != out.size())
        throw std::invalid_argument("quantize_stoch: size mismatch");
    if (const auto* fx = std::get_if<FixedPointFormat>(&format)) {
        fx->validate();
        double gap = fx->gap(), lo = fx->lower(), hi = fx->upper();
        for (size_t i = 0; i < in.size(); ++i)
            out[i] = quantize_stoch_scalar(in[i], gap, lo, hi, rng);
    } else if (const auto* bf = std::get_if<BlockFloatFormat>(&format)) {
        bf->validate();
        for (size_t start = 0; start < in.size();
             start += static_cast<size_t>(bf->block_len)) {
            size_t len = std::min<size_t>(bf->block_len, in.size() - start);
            double gap = bf->gap_for_block(in.subspan(start, len));
            double lo = bf->lower_for_gap(gap), hi = bf->upper_for_gap(gap);
            for (size_t i = start; i < start + len; ++i)
                out[i] = quantize_stoch_scalar(in[i], gap, lo, hi, rng);
        }
    } else {
        const auto& fl = std::get<FloatFormat>(format);
        fl.validate();
        double hi = fl.max_value();
        for (size_t i = 0; i < in.size(); ++i) {
            double gap = fl.gap_for(in[i]);
            out[i] = quantize_stoch_scalar(in[i], gap, -hi, hi, rng);
        }
    }
}

/// Applies a quantizer spec.  Mode None copies the input through untouched
/// and consumes no randomness, so a disabled quantizer is exactly the
/// identity.
inline void quantize(std::span<const double> in, std::span<double> out,
                     const QuantizerSpec& spec, RngStream& rng) {
    switch (spec.mode) {
        case RoundingMode::None:
            if (in.data() != out.data())
                std::copy(in.begin(), in.end(), out.begin());
            break;
        case RoundingMode::Deterministic:
            quantize_det(in, out, spec.format);
            break;
        case RoundingMode::Stochastic:
            quantize_stoch(in, out, spec.format, rng);
            break;
    }
}

inline std::vector<double> quantize_det(std::span<const double> in,
                                        const NumberFormat& format) {
    std::vector<double> out(in.size());
    quantize_det(in, out, format);
    return out;
}

inline std::vector<double> quantize_stoch(std::span<const double> in,
                                          const NumberFormat& format,
                                          RngStream& rng) {
    std::vector<double> out(in.size());
    quantize_stoch(in, out, format, rng);
    return out;
}

} // namespace lpsgld
