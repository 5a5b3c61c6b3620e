#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpsgld/rng.hpp"

namespace lpsgld {

/// In-memory classification dataset.  Features are stored row-major
/// (n * dim) after normalization: stored = (raw - shift[j]) * scale[j].
struct Dataset {
    int64_t n = 0;
    int dim = 0;
    int classes = 0;
    std::vector<double> features;
    std::vector<int32_t> labels;
    std::vector<double> shift;
    std::vector<double> scale;

    std::span<const double> row(int64_t i) const {
        return std::span<const double>(features).subspan(
            static_cast<size_t>(i) * static_cast<size_t>(dim),
            static_cast<size_t>(dim));
    }
};

namespace detail {

inline uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx file truncated (header): " + path);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void write_u32_be(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace detail

/// Loads an IDX image/label pair (the classic big-endian ubyte layout:
/// magic 2051 + count + rows + cols + pixels, magic 2049 + count + labels).
/// Pixels are scaled by 1/255 into [0, 1]; the scaling is recorded in the
/// dataset's normalization fields.
inline Dataset load_mnist_idx(const std::string& images_path,
                              const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open idx image file: " + images_path);
    uint32_t magic = detail::read_u32_be(img, images_path);
    if (magic != 2051)
        throw std::runtime_error("bad idx image magic " + std::to_string(magic) +
                                 " (want 2051) in " + images_path);
    uint32_t count = detail::read_u32_be(img, images_path);
    uint32_t rows = detail::read_u32_be(img, images_path);
    uint32_t cols = detail::read_u32_be(img, images_path);
    size_t pixel_count = static_cast<size_t>(count) * rows * cols;
    std::vector<unsigned char> pixels(pixel_count);
    if (!img.read(reinterpret_cast<char*>(pixels.data()),
                  static_cast<std::streamsize>(pixel_count)))
        throw std::runtime_error("idx image file truncated: " + images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open idx label file: " + labels_path);
    uint32_t lmagic = detail::read_u32_be(lab, labels_path);
    if (lmagic != 2049)
        throw std::runtime_error("bad idx label magic " + std::to_string(lmagic) +
                                 " (want 2049) in " + labels_path);
    uint32_t lcount = detail::read_u32_be(lab, labels_path);
    if (lcount != count)
        throw std::runtime_error(
            "idx image/label count mismatch: " + std::to_string(count) + " vs " +
            std::to_string(lcount));
    std::vector<unsigned char> raw_labels(lcount);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()),
                  static_cast<std::streamsize>(lcount)))
        throw std::runtime_error("idx label file truncated: " + labels_path);

    Dataset ds;
    ds.n = count;
    ds.dim = static_cast<int>(rows * cols);
    ds.classes = 10;
    ds.features.resize(pixel_count);
    for (size_t i = 0; i < pixel_count; ++i)
        ds.features[i] = static_cast<double>(pixels[i]) / 255.0;
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    for (int32_t y : ds.labels)
        if (y < 0 || y > 9)
            throw std::runtime_error("idx label out of range in " + labels_path);
    ds.shift.assign(ds.dim, 0.0);
    ds.scale.assign(ds.dim, 1.0 / 255.0);
    return ds;
}

inline void write_idx_images(const std::string& path,
                             std::span<const unsigned char> pixels,
                             uint32_t count, uint32_t rows, uint32_t cols) {
    if (pixels.size() != static_cast<size_t>(count) * rows * cols)
        throw std::invalid_argument("write_idx_images: pixel count mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    detail::write_u32_be(out, 2051);
    detail::write_u32_be(out, count);
    detail::write_u32_be(out, rows);
    detail::write_u32_be(out, cols);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_idx_labels(const std::string& path,
                             std::span<const unsigned char> labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    detail::write_u32_be(out, 2049);
    detail::write_u32_be(out, static_cast<uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

/// Synthetic classification data: class c has features N(mean_c, I) with
/// mean_c = separation * e_(c mod dim) (a coordinate unit vector).  The
/// generating class cycles round-robin so any prefix is nearly
/// class-balanced, and the draw is a pure function of (seed, stream_id).
///
/// `label_noise` replaces each recorded label by a uniform class draw with
/// that probability (features keep the generating class).  This puts the
/// Bayes-optimal predictor outside the softmax-linear family, like the
/// irreducible confusions of handwritten-digit data, so posterior-averaged
/// predictions have room to beat a point estimate.  At 0 the draw sequence
/// is unchanged.
inline Dataset synth_classify(int64_t n, int dim, int classes, double separation,
                              uint64_t seed, uint64_t stream_id = 0,
                              double label_noise = 0.0) {
    if (n < 0 || dim <= 0 || classes <= 0)
        throw std::invalid_argument("synth_classify: bad shape");
    if (label_noise < 0.0 || label_noise > 1.0)
        throw std::invalid_argument("synth_classify: label_noise outside [0, 1]");
    Dataset ds;
    ds.n = n;
    ds.dim = dim;
    ds.classes = classes;
    ds.features.resize(static_cast<size_t>(n) * dim);
    ds.labels.resize(n);
    ds.shift.assign(dim, 0.0);
    ds.scale.assign(dim, 1.0);
    RngStream rng(seed, stream_id);
    for (int64_t i = 0; i < n; ++i) {
        int32_t label = static_cast<int32_t>(i % classes);
        size_t base = static_cast<size_t>(i) * dim;
        for (int j = 0; j < dim; ++j)
            ds.features[base + j] = rng.next_gaussian();
        ds.features[base + (label % dim)] += separation;
        if (label_noise > 0.0 && rng.next_unit() < label_noise)
            label = static_cast<int32_t>(
                rng.next_below(static_cast<uint64_t>(classes)));
        ds.labels[i] = label;
    }
    return ds;
}

/// First `m` examples in stored order (deterministic subsample).
inline Dataset take_first(const Dataset& ds, int64_t m) {
    if (m < 0 || m > ds.n)
        throw std::invalid_argument("take_first: subsample size out of range");
    Dataset out = ds;
    out.n = m;
    out.features.resize(static_cast<size_t>(m) * ds.dim);
    out.labels.resize(m);
    return out;
}

/// Uniform minibatch sampling without replacement: each epoch is a fresh
/// Fisher-Yates permutation keyed on (seed, stream_id, epoch), consumed in
/// consecutive slices; the final short batch is kept.
class BatchIterator {
  public:
    BatchIterator(int64_t n, int batch_size, uint64_t seed, uint64_t stream_id)
        : n_(n), batch_(batch_size), seed_(seed), stream_id_(stream_id) {
        if (n_ <= 0) throw std::invalid_argument("BatchIterator: empty dataset");
        if (batch_ <= 0 || batch_ > n_)
            throw std::invalid_argument("BatchIterator: batch size out of range");
        perm_.resize(n_);
        start_epoch();
    }

    std::span<const int32_t> next() {
        if (pos_ >= n_) start_epoch();
        int64_t len = std::min<int64_t>(batch_, n_ - pos_);
        auto out = std::span<const int32_t>(perm_).subspan(
            static_cast<size_t>(pos_), static_cast<size_t>(len));
        pos_ += len;
        return out;
    }

    int64_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }
    int64_t epoch() const { return epoch_; }

  private:
    void start_epoch() {
        ++epoch_;
        for (int64_t i = 0; i < n_; ++i) perm_[i] = static_cast<int32_t>(i);
        RngStream rng(seed_, mix_stream(stream_id_, static_cast<uint64_t>(epoch_)));
        for (int64_t i = n_ - 1; i > 0; --i) {
            uint64_t j = rng.next_below(static_cast<uint64_t>(i) + 1);
            std::swap(perm_[i], perm_[j]);
        }
        pos_ = 0;
    }

    std::vector<int32_t> perm_;
    int64_t n_;
    int64_t batch_;
    int64_t pos_ = 0;
    int64_t epoch_ = -1;
    uint64_t seed_;
    uint64_t stream_id_;
};

} // namespace lpsgld
