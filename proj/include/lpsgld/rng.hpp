#pragma once

#include <cmath>
#include <cstdint>

namespace lpsgld {

namespace detail {

// splitmix64: used only to expand seeds into well-mixed generator state.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t rotl64(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace detail

/// Combines a stream label with a sub-label into a new stream label.
/// Used to derive independent child streams (noise, data order, quantizer
/// draws) from one logical stream without overlap in practice.
inline uint64_t mix_stream(uint64_t stream_id, uint64_t sub) {
    uint64_t s = stream_id ^ (0x9e3779b97f4a7c15ull + (sub << 1));
    return detail::splitmix64(s);
}

/// Deterministic random stream: xoshiro256++ seeded via splitmix64 from a
/// (seed, stream_id) pair.  The same pair yields the same draw sequence on
/// every platform; distinct pairs yield streams that are independent for
/// all practical purposes.  Gaussians come from Box-Muller with a cached
/// spare, so they are pinned too (no implementation-defined distributions).
class RngStream {
  public:
    explicit RngStream(uint64_t seed, uint64_t stream_id = 0) {
        uint64_t key = seed;
        uint64_t mixed = detail::splitmix64(key) ^ mix_stream(stream_id, 0x5bf0);
        s_[0] = detail::splitmix64(mixed);
        s_[1] = detail::splitmix64(mixed);
        s_[2] = detail::splitmix64(mixed);
        s_[3] = detail::splitmix64(mixed);
        // xoshiro state must not be all zero; splitmix64 output never is
        // for four consecutive draws, but keep the guard explicit.
        if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    }

    uint64_t next_u64() {
        uint64_t result = detail::rotl64(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl64(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53-bit resolution.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]; safe as a logarithm argument.
    double next_unit_pos() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard Gaussian draw (Box-Muller, cached spare).
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_unit_pos();
        double u2 = next_unit();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Uniform integer in [0, bound) without modulo bias.
    uint64_t next_below(uint64_t bound) {
        // Rejection from the top of the range keeps the draw exact.
        uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

  private:
    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace lpsgld
