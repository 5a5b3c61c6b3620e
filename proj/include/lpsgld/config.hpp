#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpsgld/formats.hpp"

namespace lpsgld {

/// Experiment harness configuration.  Every field has a default; files and
/// command-line overrides use `key = value` pairs against the schema below
/// (see config_schema() for the full key list with documentation).
struct ExperimentConfig {
    // run selection and output
    std::string experiment = "gaussian-demo"; // gaussian-demo|logreg|mlp|quant-check
    uint64_t seed = 1;
    std::string out = "results.csv";
    std::string hist_out; // empty: derived from `out`
    bool timing = false;  // off keeps wall_seconds at 0 for byte-stable reruns
    int threads = 1;

    // number format and quantizer modes
    std::string format = "fixed"; // fixed|block|float (demo and quant-check)
    int word_bits = 8;
    int frac_bits = 3;
    int exp_bits = 8;
    int block_len = 64;
    std::string qw_mode = "stochastic";
    std::string qg_mode = "stochastic";
    std::string qa_mode = "none";
    std::string qe_mode = "none";
    std::vector<int> frac_bits_list = {2, 3, 4, 5, 6}; // sweep; word = frac + 3
    std::vector<std::string> methods; // empty: per-experiment default set

    // sampler
    double lr = 0.1;     // data experiments: mean-loss stepsize; chain alpha = lr/n
    double alpha = 1e-3; // gaussian-demo stepsize
    std::vector<double> alphas = {1e-2, 1e-3, 1e-4}; // gaussian-demo sweep
    int epochs = 20;
    int batch_size = 64;
    int64_t steps = 250000;     // gaussian-demo chain length
    double burn_in_frac = 0.2;  // gaussian-demo burn-in fraction
    int dim = 64;               // gaussian-demo dimension (independent chains)
    double target_mean = 0.0;
    double target_std = 1.0;
    std::string schedule = "constant"; // constant|cyclical
    int cycles = 4;
    int samples_per_cycle = 0;
    int posterior_samples = 20; // collected evenly over the final half
    double prior_variance = 1.0 / 6.0;
    double grad_scale = 0.0; // 0 = auto (power of two >= train size; 1 for demo)
    int hidden_units = 100;
    int64_t mc_draws = 1000000; // quant-check Monte-Carlo draws per cell

    // data
    std::string data = "synthetic"; // synthetic|mnist
    std::string mnist_train_images = "data/train-images-idx3-ubyte";
    std::string mnist_train_labels = "data/train-labels-idx1-ubyte";
    std::string mnist_test_images = "data/t10k-images-idx3-ubyte";
    std::string mnist_test_labels = "data/t10k-labels-idx1-ubyte";
    int64_t train_subsample = 40000; // 0 = all
    int64_t test_subsample = 2000;   // 0 = all
    int synth_features = 96;
    int synth_classes = 10;
    double synth_separation = 3.0;
    double synth_label_noise = 0.0; // chance a recorded label is re-drawn uniformly

    std::string histogram_path() const {
        if (!hist_out.empty()) return hist_out;
        if (out.size() > 4 && out.substr(out.size() - 4) == ".csv")
            return out.substr(0, out.size() - 4) + ".hist.csv";
        return out + ".hist.csv";
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key +
                                    "': cannot parse number '" + v + "'");
    }
}

inline int64_t parse_i64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key +
                                    "': cannot parse integer '" + v + "'");
    }
}

inline uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        unsigned long long d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key +
                                    "': cannot parse integer '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected on/off, got '" +
                                v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    std::stringstream ss(v);
    while (std::getline(ss, cur, ','))
        if (!trim(cur).empty()) parts.push_back(trim(cur));
    return parts;
}

inline std::string format_double(double d) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

} // namespace detail

struct ConfigField {
    std::string key;
    std::string doc;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigField>& config_schema() {
    using C = ExperimentConfig;
    namespace d = detail;
    auto str_field = [](std::string key, std::string doc, std::string C::*mem) {
        return ConfigField{key, std::move(doc),
                           [mem](C& c, const std::string& v) { c.*mem = v; },
                           [mem](const C& c) { return c.*mem; }};
    };
    auto int_field = [](std::string key, std::string doc, int C::*mem) {
        return ConfigField{
            key, std::move(doc),
            [mem, key](C& c, const std::string& v) {
                c.*mem = static_cast<int>(d::parse_i64(v, key));
            },
            [mem](const C& c) { return std::to_string(c.*mem); }};
    };
    auto i64_field = [](std::string key, std::string doc, int64_t C::*mem) {
        return ConfigField{
            key, std::move(doc),
            [mem, key](C& c, const std::string& v) { c.*mem = d::parse_i64(v, key); },
            [mem](const C& c) { return std::to_string(c.*mem); }};
    };
    auto dbl_field = [](std::string key, std::string doc, double C::*mem) {
        return ConfigField{
            key, std::move(doc),
            [mem, key](C& c, const std::string& v) { c.*mem = d::parse_double(v, key); },
            [mem](const C& c) { return d::format_double(c.*mem); }};
    };
    static const std::vector<ConfigField> fields = {
        str_field("experiment", "gaussian-demo | logreg | mlp | quant-check",
                  &C::experiment),
        ConfigField{"seed", "base random seed",
                    [](C& c, const std::string& v) { c.seed = d::parse_u64(v, "seed"); },
                    [](const C& c) { return std::to_string(c.seed); }},
        str_field("out", "result CSV path", &C::out),
        str_field("hist_out", "histogram CSV path (empty: derive from out)",
                  &C::hist_out),
        ConfigField{"timing", "on records wall-clock seconds; off writes 0",
                    [](C& c, const std::string& v) { c.timing = d::parse_bool(v, "timing"); },
                    [](const C& c) { return c.timing ? "on" : "off"; }},
        int_field("threads", "worker threads for independent cells", &C::threads),

        str_field("format", "number format family: fixed | block | float", &C::format),
        int_field("word_bits", "total bits per value (sign included)", &C::word_bits),
        int_field("frac_bits", "fixed point fractional bits", &C::frac_bits),
        int_field("exp_bits", "float/block exponent bits", &C::exp_bits),
        int_field("block_len", "block float block length", &C::block_len),
        str_field("qw_mode", "weight quantizer: stochastic | deterministic | none",
                  &C::qw_mode),
        str_field("qg_mode", "gradient quantizer: stochastic | deterministic | none",
                  &C::qg_mode),
        str_field("qa_mode", "activation quantizer (mlp): stochastic | deterministic | none",
                  &C::qa_mode),
        str_field("qe_mode", "backprop error quantizer (mlp): stochastic | deterministic | none",
                  &C::qe_mode),
        ConfigField{"frac_bits_list",
                    "sweep of fractional bits (word = frac + 3), comma separated",
                    [](C& c, const std::string& v) {
                        c.frac_bits_list.clear();
                        for (auto& p : d::split_list(v))
                            c.frac_bits_list.push_back(
                                static_cast<int>(d::parse_i64(p, "frac_bits_list")));
                    },
                    [](const C& c) {
                        std::string s;
                        for (size_t i = 0; i < c.frac_bits_list.size(); ++i)
                            s += (i ? "," : "") + std::to_string(c.frac_bits_list[i]);
                        return s;
                    }},
        ConfigField{"methods",
                    "comma list of samplers: sgld_fp sgd_fp sgldlp_f sgdlp_f "
                    "sgldlp_l vc_sgldlp_l sgdlp_l (empty: experiment default)",
                    [](C& c, const std::string& v) { c.methods = d::split_list(v); },
                    [](const C& c) {
                        std::string s;
                        for (size_t i = 0; i < c.methods.size(); ++i)
                            s += (i ? "," : "") + c.methods[i];
                        return s;
                    }},

        dbl_field("lr", "mean-loss stepsize for data experiments (chain alpha = lr/n)",
                  &C::lr),
        dbl_field("alpha", "gaussian-demo stepsize", &C::alpha),
        ConfigField{"alphas", "gaussian-demo stepsize sweep, comma separated",
                    [](C& c, const std::string& v) {
                        c.alphas.clear();
                        for (auto& p : d::split_list(v))
                            c.alphas.push_back(d::parse_double(p, "alphas"));
                    },
                    [](const C& c) {
                        std::string s;
                        for (size_t i = 0; i < c.alphas.size(); ++i)
                            s += (i ? "," : "") + d::format_double(c.alphas[i]);
                        return s;
                    }},
        int_field("epochs", "training epochs for data experiments", &C::epochs),
        int_field("batch_size", "minibatch size (0 = full batch)", &C::batch_size),
        i64_field("steps", "gaussian-demo chain length", &C::steps),
        dbl_field("burn_in_frac", "gaussian-demo burn-in fraction of steps",
                  &C::burn_in_frac),
        int_field("dim", "gaussian-demo dimension (independent coordinates)", &C::dim),
        dbl_field("target_mean", "gaussian-demo target mean", &C::target_mean),
        dbl_field("target_std", "gaussian-demo target standard deviation",
                  &C::target_std),
        str_field("schedule", "stepsize schedule: constant | cyclical", &C::schedule),
        int_field("cycles", "cycles for the cyclical schedule", &C::cycles),
        int_field("samples_per_cycle",
                  "cyclical runs: posterior samples per cycle (0 = use "
                  "posterior_samples)",
                  &C::samples_per_cycle),
        int_field("posterior_samples",
                  "posterior samples collected over the final half of training",
                  &C::posterior_samples),
        dbl_field("prior_variance", "Gaussian prior variance on weights",
                  &C::prior_variance),
        dbl_field("grad_scale",
                  "power-of-two scale the gradient quantizer sees (0 = auto)",
                  &C::grad_scale),
        int_field("hidden_units", "mlp hidden layer width", &C::hidden_units),
        i64_field("mc_draws", "quant-check Monte-Carlo draws per cell", &C::mc_draws),

        str_field("data", "dataset source: synthetic | mnist", &C::data),
        str_field("mnist_train_images", "idx image file (training)",
                  &C::mnist_train_images),
        str_field("mnist_train_labels", "idx label file (training)",
                  &C::mnist_train_labels),
        str_field("mnist_test_images", "idx image file (test)", &C::mnist_test_images),
        str_field("mnist_test_labels", "idx label file (test)", &C::mnist_test_labels),
        i64_field("train_subsample", "training examples kept, file order (0 = all)",
                  &C::train_subsample),
        i64_field("test_subsample", "test examples kept, file order (0 = all)",
                  &C::test_subsample),
        int_field("synth_features", "synthetic data feature count", &C::synth_features),
        int_field("synth_classes", "synthetic data class count", &C::synth_classes),
        dbl_field("synth_separation", "synthetic class mean separation",
                  &C::synth_separation),
        dbl_field("synth_label_noise",
                  "probability a synthetic label is re-drawn uniformly",
                  &C::synth_label_noise),
    };
    return fields;
}

inline const ConfigField* find_config_field(const std::string& key) {
    for (const auto& f : config_schema())
        if (f.key == key) return &f;
    return nullptr;
}

/// Applies one `key = value` (or `key=value`) assignment.
inline void apply_config_line(ExperimentConfig& cfg, const std::string& line,
                              const std::string& where) {
    std::string text = line;
    size_t hash = text.find('#');
    if (hash != std::string::npos) text.resize(hash);
    text = detail::trim(text);
    if (text.empty()) return;
    size_t eq = text.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument(where + ": expected 'key = value', got '" +
                                    text + "'");
    std::string key = detail::trim(text.substr(0, eq));
    std::string value = detail::trim(text.substr(eq + 1));
    const ConfigField* field = find_config_field(key);
    if (field == nullptr)
        throw std::invalid_argument(where + ": unknown config key '" + key + "'");
    field->set(cfg, value);
}

/// Reads a plain-text key-value config file over the defaults.
inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        apply_config_line(cfg, line, path + ":" + std::to_string(lineno));
    }
    return cfg;
}

/// Serializes the full configuration in schema order (a valid config file).
inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : config_schema())
        out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

inline RoundingMode parse_rounding_mode(const std::string& mode,
                                        const std::string& key) {
    if (mode == "stochastic") return RoundingMode::Stochastic;
    if (mode == "deterministic") return RoundingMode::Deterministic;
    if (mode == "none") return RoundingMode::None;
    throw std::invalid_argument("config key '" + key +
                                "': expected stochastic|deterministic|none, got '" +
                                mode + "'");
}

/// One emitted metric.  `format` describes the weight grid of the cell
/// ("full" when no quantization is involved).
struct ResultRow {
    std::string experiment;
    std::string method;
    std::string format;
    double alpha = 0.0;
    uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
    double wall_seconds = 0.0;
};

inline const char* kResultHeader =
    "schema_version,experiment,method,format,alpha,seed,metric,value,wall_seconds";

inline std::string format_result_row(const ResultRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.9g", r.alpha);
    std::string alpha = buf;
    std::snprintf(buf, sizeof(buf), "%.12g", r.value);
    std::string value = buf;
    std::snprintf(buf, sizeof(buf), "%.3f", r.wall_seconds);
    std::string wall = buf;
    return "v1," + r.experiment + "," + r.method + "," + r.format + "," + alpha +
           "," + std::to_string(r.seed) + "," + r.metric + "," + value + "," + wall;
}

inline void write_result_csv(const std::string& path,
                             const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::binary); // binary: stable line endings
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << kResultHeader << "\n";
    for (const auto& r : rows) out << format_result_row(r) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct HistogramRow {
    std::string method;
    double alpha = 0.0;
    double bin_lo = 0.0;
    double bin_hi = 0.0;
    int64_t count = 0;
};

inline void write_histogram_csv(const std::string& path,
                                const std::vector<HistogramRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "method,alpha,bin_lo,bin_hi,count\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.method << ",";
        std::snprintf(buf, sizeof(buf), "%.9g", r.alpha);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.9g", r.bin_lo);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.9g", r.bin_hi);
        out << buf << "," << r.count << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace lpsgld
