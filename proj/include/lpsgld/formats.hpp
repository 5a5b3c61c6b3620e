#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>

namespace lpsgld {

/// Signed fixed point with `word_bits` total bits (sign included) and
/// `frac_bits` fractional bits.  The representable set is the 2^word_bits
/// multiples of gap() in [lower(), upper()].
struct FixedPointFormat {
    int word_bits = 8;
    int frac_bits = 3;

    double gap() const { return std::ldexp(1.0, -frac_bits); }
    double lower() const { return -std::ldexp(1.0, word_bits - frac_bits - 1); }
    double upper() const {
        return std::ldexp(1.0, word_bits - frac_bits - 1) - gap();
    }

    void validate() const {
        if (word_bits < 1 || word_bits > 60)
            throw std::invalid_argument("fixed point word_bits out of range: " +
                                        std::to_string(word_bits));
        if (frac_bits < 0 || frac_bits > word_bits - 1)
            throw std::invalid_argument(
                "fixed point frac_bits must lie in [0, word_bits-1], got " +
                std::to_string(frac_bits));
    }
};

/// Per-element low-precision float emulation: `word_bits` stored mantissa
/// bits (hidden leading bit convention) and `exp_bits` exponent bits.  The
/// grid gap around a value x is 2^(E - word_bits) with E = floor(log2|x|)
/// clipped into [exp_min, exp_max]; x = 0 uses exp_min.  Values below the
/// smallest binade fall on a linear sub-grid, so no special subnormal
/// handling is needed.
struct FloatFormat {
    int word_bits = 8;
    int exp_bits = 8;

    int exp_min() const { return -(1 << (exp_bits - 1)); }
    int exp_max() const { return (1 << (exp_bits - 1)) - 1; }

    int exponent_for(double x) const {
        if (x == 0.0) return exp_min();
        int e = std::ilogb(std::fabs(x));
        if (e < exp_min()) return exp_min();
        if (e > exp_max()) return exp_max();
        return e;
    }

    double gap_for(double x) const {
        return std::ldexp(1.0, exponent_for(x) - word_bits);
    }

    /// Largest representable magnitude: the top multiple of the widest gap.
    double max_value() const {
        return (2.0 - std::ldexp(1.0, -word_bits)) * std::ldexp(1.0, exp_max());
    }

    void validate() const {
        if (word_bits < 1 || word_bits > 52)
            throw std::invalid_argument("float word_bits out of range: " +
                                        std::to_string(word_bits));
        if (exp_bits < 1 || exp_bits > 11)
            throw std::invalid_argument("float exp_bits out of range: " +
                                        std::to_string(exp_bits));
    }
};

/// Block floating point: one shared exponent per block of `block_len`
/// consecutive elements, `word_bits` two's-complement mantissa bits.  The
/// shared exponent E is floor(log2 max|x|) over the block, clipped into
/// [exp_min, exp_max], and the grid gap is 2^(E - word_bits + 2).  An
/// all-zero block uses E = exp_min.  Vectors are flattened and split into
/// fixed-size blocks; the final block may be short.
struct BlockFloatFormat {
    int word_bits = 8;
    int exp_bits = 8;
    int block_len = 64;

    int exp_min() const { return -(1 << (exp_bits - 1)); }
    int exp_max() const { return (1 << (exp_bits - 1)) - 1; }

    int exponent_for_block(std::span<const double> block) const {
        double max_abs = 0.0;
        for (double x : block) {
            double a = std::fabs(x);
            if (a > max_abs) max_abs = a;
        }
        if (max_abs == 0.0) return exp_min();
        int e = std::ilogb(max_abs);
        if (e < exp_min()) return exp_min();
        if (e > exp_max()) return exp_max();
        return e;
    }

    double gap_for_exponent(int e) const {
        return std::ldexp(1.0, e - word_bits + 2);
    }

    double gap_for_block(std::span<const double> block) const {
        return gap_for_exponent(exponent_for_block(block));
    }

    /// Mantissa bounds mirror fixed point: [-2^(W-1), 2^(W-1) - 1] grid steps.
    double lower_for_gap(double gap) const {
        return -std::ldexp(1.0, word_bits - 1) * gap;
    }
    double upper_for_gap(double gap) const {
        return (std::ldexp(1.0, word_bits - 1) - 1.0) * gap;
    }

    void validate() const {
        if (word_bits < 1 || word_bits > 60)
            throw std::invalid_argument("block float word_bits out of range: " +
                                        std::to_string(word_bits));
        if (exp_bits < 1 || exp_bits > 11)
            throw std::invalid_argument("block float exp_bits out of range: " +
                                        std::to_string(exp_bits));
        if (block_len < 1)
            throw std::invalid_argument("block float block_len must be >= 1");
    }
};

using NumberFormat = std::variant<FixedPointFormat, BlockFloatFormat, FloatFormat>;

inline void validate(const NumberFormat& fmt) {
    std::visit([](const auto& f) { f.validate(); }, fmt);
}

enum class RoundingMode { None, Deterministic, Stochastic };

/// A quantizer is a number format plus a rounding mode.  Mode None is the
/// identity regardless of the format and consumes no randomness.
struct QuantizerSpec {
    NumberFormat format = FixedPointFormat{};
    RoundingMode mode = RoundingMode::None;

    bool active() const { return mode != RoundingMode::None; }

    static QuantizerSpec none() { return QuantizerSpec{}; }
    static QuantizerSpec fixed_det(int word_bits, int frac_bits) {
        return {FixedPointFormat{word_bits, frac_bits}, RoundingMode::Deterministic};
    }
    static QuantizerSpec fixed_stoch(int word_bits, int frac_bits) {
        return {FixedPointFormat{word_bits, frac_bits}, RoundingMode::Stochastic};
    }
};

} // namespace lpsgld
