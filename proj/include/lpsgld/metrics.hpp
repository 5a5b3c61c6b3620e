#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace lpsgld {

/// Streaming mean/variance accumulator (Welford update) for pooled scalar
/// observations.  variance() is the unbiased sample variance.
struct ScalarMoments {
    int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }

    double variance() const {
        return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
    }
    double stddev() const { return std::sqrt(variance()); }

    void merge(const ScalarMoments& o) {
        if (o.n == 0) return;
        if (n == 0) { *this = o; return; }
        double nn = static_cast<double>(n + o.n);
        double d = o.mean - mean;
        m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / nn;
        mean += d * static_cast<double>(o.n) / nn;
        n += o.n;
    }
};

struct MomentSummary {
    std::vector<double> mean;
    std::vector<double> variance; // unbiased
    int64_t count = 0;
};

/// Per-dimension mean and unbiased variance of `count` stacked vectors laid
/// out row-major in `flat` (count * dim values).
inline MomentSummary moments(std::span<const double> flat, size_t dim) {
    if (dim == 0) throw std::invalid_argument("moments: dim must be positive");
    if (flat.size() % dim != 0)
        throw std::invalid_argument("moments: flat size not a multiple of dim");
    size_t count = flat.size() / dim;
    MomentSummary out;
    out.count = static_cast<int64_t>(count);
    out.mean.assign(dim, 0.0);
    out.variance.assign(dim, 0.0);
    if (count == 0) return out;
    for (size_t r = 0; r < count; ++r)
        for (size_t j = 0; j < dim; ++j) out.mean[j] += flat[r * dim + j];
    for (size_t j = 0; j < dim; ++j) out.mean[j] /= static_cast<double>(count);
    if (count > 1) {
        for (size_t r = 0; r < count; ++r)
            for (size_t j = 0; j < dim; ++j) {
                double d = flat[r * dim + j] - out.mean[j];
                out.variance[j] += d * d;
            }
        for (size_t j = 0; j < dim; ++j)
            out.variance[j] /= static_cast<double>(count - 1);
    }
    return out;
}

/// 2-Wasserstein distance between two one-dimensional Gaussians:
/// sqrt((m1-m2)^2 + (s1-s2)^2).  Standard deviations must be nonnegative.
inline double w2_gaussian(double mean1, double sd1, double mean2, double sd2) {
    if (sd1 < 0.0 || sd2 < 0.0)
        throw std::domain_error("w2_gaussian: negative standard deviation");
    double dm = mean1 - mean2;
    double ds = sd1 - sd2;
    return std::sqrt(dm * dm + ds * ds);
}

/// Index of the largest entry; ties resolve to the lowest index.
inline int argmax_class(std::span<const double> row) {
    int best = 0;
    for (size_t c = 1; c < row.size(); ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
    return best;
}

/// Mean negative log predicted probability of the true class.  Probabilities
/// are clamped below at 1e-12 before the log; `clamped` (if given) counts
/// how many entries needed the clamp.
inline double nll(std::span<const double> probs, std::span<const int32_t> labels,
                  int classes, size_t* clamped = nullptr) {
    if (classes <= 0) throw std::invalid_argument("nll: classes must be positive");
    size_t n = labels.size();
    if (probs.size() != n * static_cast<size_t>(classes))
        throw std::invalid_argument("nll: probs size mismatch");
    constexpr double kFloor = 1e-12;
    double total = 0.0;
    size_t clamp_count = 0;
    for (size_t i = 0; i < n; ++i) {
        int32_t y = labels[i];
        if (y < 0 || y >= classes)
            throw std::out_of_range("nll: label out of range");
        double p = probs[i * classes + static_cast<size_t>(y)];
        if (p < kFloor) {
            p = kFloor;
            ++clamp_count;
        }
        total -= std::log(p);
    }
    if (clamped != nullptr) *clamped = clamp_count;
    return n == 0 ? 0.0 : total / static_cast<double>(n);
}

/// Fraction of examples whose argmax class (ties to the lowest index)
/// differs from the label.
inline double error_rate(std::span<const double> probs,
                         std::span<const int32_t> labels, int classes) {
    size_t n = labels.size();
    if (probs.size() != n * static_cast<size_t>(classes))
        throw std::invalid_argument("error_rate: probs size mismatch");
    size_t wrong = 0;
    for (size_t i = 0; i < n; ++i) {
        int pred = argmax_class(probs.subspan(i * classes, classes));
        if (pred != labels[i]) ++wrong;
    }
    return n == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(n);
}

struct CalibrationReport {
    double ece = 0.0;
    std::vector<int64_t> bin_count;
    std::vector<double> bin_confidence; // mean confidence per bin
    std::vector<double> bin_accuracy;   // mean accuracy per bin
};

/// Expected calibration error over `bins` equal-width, right-closed
/// confidence bins ((k/bins, (k+1)/bins]); confidence exactly 1.0 lands in
/// the top bin.  Confidence is the max predicted probability, correctness
/// uses the same argmax tie rule as error_rate.
inline CalibrationReport ece(std::span<const double> probs,
                             std::span<const int32_t> labels, int classes,
                             int bins = 10) {
    if (bins <= 0) throw std::invalid_argument("ece: bins must be positive");
    size_t n = labels.size();
    if (probs.size() != n * static_cast<size_t>(classes))
        throw std::invalid_argument("ece: probs size mismatch");
    CalibrationReport rep;
    rep.bin_count.assign(bins, 0);
    rep.bin_confidence.assign(bins, 0.0);
    rep.bin_accuracy.assign(bins, 0.0);
    for (size_t i = 0; i < n; ++i) {
        auto row = probs.subspan(i * classes, classes);
        int pred = argmax_class(row);
        double conf = row[pred];
        int bin = bins - 1;
        for (int k = 0; k < bins; ++k) {
            if (conf <= static_cast<double>(k + 1) / static_cast<double>(bins)) {
                bin = k;
                break;
            }
        }
        rep.bin_count[bin] += 1;
        rep.bin_confidence[bin] += conf;
        rep.bin_accuracy[bin] += (pred == labels[i]) ? 1.0 : 0.0;
    }
    for (int k = 0; k < bins; ++k) {
        if (rep.bin_count[k] == 0) continue;
        double cnt = static_cast<double>(rep.bin_count[k]);
        rep.bin_confidence[k] /= cnt;
        rep.bin_accuracy[k] /= cnt;
        rep.ece += cnt / static_cast<double>(n) *
                   std::fabs(rep.bin_accuracy[k] - rep.bin_confidence[k]);
    }
    return rep;
}

} // namespace lpsgld
