#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "lpsgld/formats.hpp"
#include "lpsgld/quantize.hpp"
#include "lpsgld/rng.hpp"

using namespace lpsgld;

TEST_CASE("nearest rounding breaks ties away from zero") {
    CHECK(round_nearest_away(0.3, 0.25) == 0.25);
    CHECK(round_nearest_away(-0.3, 0.25) == -0.25);
    CHECK(round_nearest_away(0.375, 0.25) == 0.5);
    CHECK(round_nearest_away(-0.375, 0.25) == -0.5);
    CHECK(round_nearest_away(0.125, 0.25) == 0.25);
    CHECK(round_nearest_away(-0.125, 0.25) == -0.25);
    CHECK(round_nearest_away(0.0, 0.25) == 0.0);
    CHECK(round_nearest_away(1.0, 0.25) == 1.0);
}

TEST_CASE("deterministic quantization clips the magnitude") {
    FixedPointFormat f{8, 2};
    double gap = f.gap(), lo = f.lower(), hi = f.upper();
    CHECK(quantize_det_scalar(0.3, gap, lo, hi) == 0.25);
    CHECK(quantize_det_scalar(100.0, gap, lo, hi) == 31.75);
    // Magnitude clipping maps the far negative side to -upper, not lower:
    // the most negative code is reachable only by stochastic rounding.
    CHECK(quantize_det_scalar(-100.0, gap, lo, hi) == -31.75);
    CHECK(quantize_det_scalar(-32.0, gap, lo, hi) == -31.75);

    FixedPointFormat f83{8, 3};
    CHECK(quantize_det_scalar(-16.0, f83.gap(), f83.lower(), f83.upper()) ==
          -15.875);
}

TEST_CASE("deterministic quantization is idempotent and grid-closed") {
    for (int w = 1; w <= 6; ++w) {
        for (int fr = 0; fr < w; ++fr) {
            FixedPointFormat f{w, fr};
            double gap = f.gap(), lo = f.lower(), hi = f.upper();
            // Every representable magnitude must be a fixed point of the map.
            long k_hi = std::lround(hi / gap);
            for (long k = -k_hi; k <= k_hi; ++k) {
                double x = static_cast<double>(k) * gap;
                CHECK(quantize_det_scalar(x, gap, lo, hi) == x);
            }
            // Arbitrary inputs land exactly on the grid inside the range.
            for (double x = lo - 2 * gap; x <= hi + 2 * gap; x += gap / 3) {
                double q = quantize_det_scalar(x, gap, lo, hi);
                double cells = q / gap;
                CHECK(cells == std::nearbyint(cells));
                CHECK(std::fabs(q) <= hi);
            }
        }
    }
}

TEST_CASE("stochastic rounding spends one uniform and stays on neighbors") {
    RngStream rng(5, 0), shadow(5, 0);
    double q = round_stochastic(0.3, 0.25, rng);
    CHECK((q == 0.25 || q == 0.5));
    shadow.next_u64(); // the single uniform the rounding consumed
    CHECK(rng.next_u64() == shadow.next_u64());

    // Grid-resident input: unchanged value, and still exactly one draw.
    RngStream rng2(5, 1), shadow2(5, 1);
    CHECK(round_stochastic(0.5, 0.25, rng2) == 0.5);
    shadow2.next_u64();
    CHECK(rng2.next_u64() == shadow2.next_u64());
}

TEST_CASE("stochastic rounding is unbiased") {
    RngStream rng(17, 0);
    const int n = 50000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += round_stochastic(0.3, 0.25, rng);
    double mean = sum / n;
    // sd of the mean = gap * sqrt(p(1-p)/n) = 4.47e-4; bound is ~4.7 sigma.
    CHECK(std::fabs(mean - 0.3) < 2.1e-3);
}

TEST_CASE("stochastic quantization clips the signed value") {
    FixedPointFormat f{8, 2};
    RngStream rng(3, 0);
    // Below the range: the clamp lands on lower, the one extra code.
    CHECK(quantize_stoch_scalar(-100.0, f.gap(), f.lower(), f.upper(), rng) ==
          -32.0);
    CHECK(quantize_stoch_scalar(100.0, f.gap(), f.lower(), f.upper(), rng) ==
          31.75);
}

TEST_CASE("vector quantization matches the scalar kernels") {
    FixedPointFormat f{8, 2};
    NumberFormat fmt = f;
    std::vector<double> in = {0.3, -0.26, 100.0, -100.0, 0.0};
    std::vector<double> out(in.size());
    quantize_det(in, out, fmt);
    CHECK(out == std::vector<double>{0.25, -0.25, 31.75, -31.75, 0.0});

    RngStream rv(21, 0), rs(21, 0);
    std::vector<double> sv(in.size());
    quantize_stoch(in, sv, fmt, rv);
    for (size_t i = 0; i < in.size(); ++i)
        CHECK(sv[i] ==
              quantize_stoch_scalar(in[i], f.gap(), f.lower(), f.upper(), rs));
}

TEST_CASE("disabled quantizer is the identity and draws nothing") {
    QuantizerSpec spec = QuantizerSpec::none();
    std::vector<double> in = {0.3, -1.7, 2.5};
    std::vector<double> out(3);
    RngStream rng(8, 0), shadow(8, 0);
    quantize(in, out, spec, rng);
    CHECK(out == in);
    CHECK(rng.next_u64() == shadow.next_u64());
}

TEST_CASE("block float quantizes against the shared block gap") {
    BlockFloatFormat bf{8, 8, 32};
    NumberFormat fmt = bf;
    std::vector<double> in = {12.0, 0.1, -0.26, 0.0};
    std::vector<double> out(in.size());
    quantize_det(in, out, fmt);
    // gap 0.125 from the 12.0 anchor; small entries lose resolution.
    CHECK(out == std::vector<double>{12.0, 0.125, -0.25, 0.0});

    // A short trailing block re-anchors: 0.7 alone gets gap 2^-7.
    BlockFloatFormat bf2{8, 8, 2};
    NumberFormat fmt2 = bf2;
    std::vector<double> in2 = {12.0, 0.1, 0.7};
    std::vector<double> out2(in2.size());
    quantize_det(in2, out2, fmt2);
    CHECK(out2[0] == 12.0);
    CHECK(out2[1] == 0.125);
    CHECK(out2[2] == 0.703125);
}

TEST_CASE("float format quantizes on per-value grids") {
    FloatFormat fl{3, 4};
    NumberFormat fmt = fl;
    std::vector<double> in = {1.3, 5.1, 300.0, -300.0, 1.97};
    std::vector<double> out(in.size());
    quantize_det(in, out, fmt);
    CHECK(out[0] == 1.25);    // gap 1/8 in [1, 2)
    CHECK(out[1] == 5.0);     // gap 1/2 in [4, 8)
    CHECK(out[2] == 240.0);   // saturates at max_value
    CHECK(out[3] == -240.0);
    CHECK(out[4] == 2.0);     // rounding may cross into the next binade
}

TEST_CASE("non-finite inputs are rejected") {
    FixedPointFormat f{8, 3};
    RngStream rng(1, 0);
    double nan = std::numeric_limits<double>::quiet_NaN();
    double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(quantize_det_scalar(nan, f.gap(), f.lower(), f.upper()),
                    std::domain_error);
    CHECK_THROWS_AS(quantize_det_scalar(inf, f.gap(), f.lower(), f.upper()),
                    std::domain_error);
    CHECK_THROWS_AS(
        quantize_stoch_scalar(-inf, f.gap(), f.lower(), f.upper(), rng),
        std::domain_error);
}

TEST_CASE("per-block gaps are reported for audit use") {
    BlockFloatFormat bf{8, 8, 2};
    std::vector<double> vals = {12.0, 0.1, 0.7};
    std::vector<double> gaps = block_gap(vals, bf);
    REQUIRE(gaps.size() == 2);
    CHECK(gaps[0] == 0.125);
    CHECK(gaps[1] == 0.0078125);

    FloatFormat fl{3, 4};
    std::vector<double> g2 = block_gap(vals, fl);
    REQUIRE(g2.size() == 3);
    CHECK(g2[0] == std::ldexp(1.0, 3 - 3));  // 12 in [8, 16)
    CHECK(g2[1] == std::ldexp(1.0, -4 - 3)); // 0.1 in [1/16, 1/8)
    CHECK(g2[2] == std::ldexp(1.0, -1 - 3)); // 0.7 in [1/2, 1)
}
