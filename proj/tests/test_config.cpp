#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "lpsgld/config.hpp"
#include "lpsgld/experiments.hpp"

using namespace lpsgld;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("lpsgld_cfg_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const {
        return (path / name).string();
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config assignments parse keys, values, and comments") {
    ExperimentConfig cfg;
    apply_config_line(cfg, "steps = 4242", "test");
    CHECK(cfg.steps == 4242);
    apply_config_line(cfg, "seed=99", "test");
    CHECK(cfg.seed == 99);
    apply_config_line(cfg, "lr = 0.25 # tail comment", "test");
    CHECK(cfg.lr == 0.25);
    apply_config_line(cfg, "   # whole-line comment", "test");
    apply_config_line(cfg, "", "test");
    apply_config_line(cfg, "timing = true", "test");
    CHECK(cfg.timing);
    apply_config_line(cfg, "methods = sgld_fp, sgldlp_f", "test");
    CHECK(cfg.methods == std::vector<std::string>{"sgld_fp", "sgldlp_f"});
    apply_config_line(cfg, "alphas = 0.01,0.001", "test");
    CHECK(cfg.alphas == std::vector<double>{0.01, 0.001});
    apply_config_line(cfg, "frac_bits_list = 2, 4", "test");
    CHECK(cfg.frac_bits_list == std::vector<int>{2, 4});
}

TEST_CASE("config rejects unknown keys and malformed values") {
    ExperimentConfig cfg;
    CHECK_THROWS_WITH_AS(apply_config_line(cfg, "not_a_key = 1", "test"),
                         doctest::Contains("unknown config key"),
                         std::invalid_argument);
    CHECK_THROWS_AS(apply_config_line(cfg, "just words", "test"),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_config_line(cfg, "steps = banana", "test"),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_config_line(cfg, "lr = ", "test"),
                    std::invalid_argument);
    CHECK_THROWS_AS(apply_config_line(cfg, "timing = maybe", "test"),
                    std::invalid_argument);
}

TEST_CASE("serialized configs reload to an identical state") {
    ExperimentConfig cfg;
    cfg.seed = 7;
    cfg.alphas = {0.5, 0.25};
    cfg.methods = {"sgldlp_l"};
    cfg.qw_mode = "deterministic";
    cfg.synth_separation = 3.25;
    std::string text = serialize_config(cfg);

    ExperimentConfig back;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) apply_config_line(back, line, "mem");
    CHECK(serialize_config(back) == text);
}

TEST_CASE("config files load line by line with located errors") {
    TempDir tmp;
    {
        std::ofstream out(tmp.file("good.cfg"));
        out << "# demo settings\n"
            << "experiment = logreg\n"
            << "steps = 1000\n"
            << "\n"
            << "epochs = 3\n";
    }
    ExperimentConfig cfg = load_config_file(tmp.file("good.cfg"));
    CHECK(cfg.experiment == "logreg");
    CHECK(cfg.steps == 1000);
    CHECK(cfg.epochs == 3);

    {
        std::ofstream out(tmp.file("bad.cfg"));
        out << "steps = 10\n"
            << "mystery = 4\n";
    }
    CHECK_THROWS_WITH_AS(load_config_file(tmp.file("bad.cfg")),
                         doctest::Contains("bad.cfg:2"),
                         std::invalid_argument);
    CHECK_THROWS_AS(load_config_file(tmp.file("absent.cfg")),
                    std::runtime_error);
}

TEST_CASE("rounding modes parse from their three names") {
    CHECK(parse_rounding_mode("stochastic", "k") == RoundingMode::Stochastic);
    CHECK(parse_rounding_mode("deterministic", "k") ==
          RoundingMode::Deterministic);
    CHECK(parse_rounding_mode("none", "k") == RoundingMode::None);
    CHECK_THROWS_AS(parse_rounding_mode("det", "k"), std::invalid_argument);
}

TEST_CASE("result rows freeze their formatting") {
    ResultRow r;
    r.experiment = "gaussian-demo";
    r.method = "sgldlp_f";
    r.format = "fixed_w8_f3";
    r.alpha = 0.001;
    r.seed = 1;
    r.metric = "w2";
    r.value = 0.25;
    r.wall_seconds = 0.0;
    CHECK(format_result_row(r) ==
          "v1,gaussian-demo,sgldlp_f,fixed_w8_f3,0.001,1,w2,0.25,0.000");

    r.value = 1.84951358544123;
    CHECK(format_result_row(r) ==
          "v1,gaussian-demo,sgldlp_f,fixed_w8_f3,0.001,1,w2,1.84951358544,0.000");
}

TEST_CASE("csv writers emit stable bytes") {
    TempDir tmp;
    ResultRow r;
    r.experiment = "quant-check";
    r.method = "audit";
    r.format = "all";
    r.alpha = 0.0;
    r.seed = 3;
    r.metric = "all_ok";
    r.value = 1.0;
    write_result_csv(tmp.file("r.csv"), {r});
    CHECK(slurp(tmp.file("r.csv")) ==
          "schema_version,experiment,method,format,alpha,seed,metric,value,"
          "wall_seconds\n"
          "v1,quant-check,audit,all,0,3,all_ok,1,0.000\n");

    HistogramRow h;
    h.method = "sgldlp_l";
    h.alpha = 0.01;
    h.bin_lo = -0.5;
    h.bin_hi = 0.5;
    h.count = 42;
    write_histogram_csv(tmp.file("h.csv"), {h});
    CHECK(slurp(tmp.file("h.csv")) ==
          "method,alpha,bin_lo,bin_hi,count\n"
          "sgldlp_l,0.01,-0.5,0.5,42\n");
}

TEST_CASE("histogram path derives from the result path") {
    ExperimentConfig cfg;
    cfg.out = "results.csv";
    CHECK(cfg.histogram_path() == "results.hist.csv");
    cfg.out = "plain.txt";
    CHECK(cfg.histogram_path() == "plain.txt.hist.csv");
    cfg.hist_out = "custom.csv";
    CHECK(cfg.histogram_path() == "custom.csv");
}

TEST_CASE("method table resolves names to chain settings") {
    CHECK(method_table().size() == 7);
    const MethodSpec& vc = parse_method("vc_sgldlp_l");
    CHECK(vc.langevin);
    CHECK(vc.accumulator == Accumulator::LowVc);
    CHECK(vc.quantized);
    const MethodSpec& fp = parse_method("sgld_fp");
    CHECK(fp.langevin);
    CHECK(fp.accumulator == Accumulator::Full);
    CHECK_FALSE(fp.quantized);
    const MethodSpec& sgd = parse_method("sgdlp_l");
    CHECK_FALSE(sgd.langevin);
    CHECK(sgd.accumulator == Accumulator::LowNaive);
    CHECK_THROWS_AS(parse_method("sgld"), std::invalid_argument);
}

TEST_CASE("cell streams hash coordinates stably and distinctly") {
    uint64_t a = cell_stream({"logreg", "noise"});
    CHECK(a == cell_stream({"logreg", "noise"}));
    CHECK(a != cell_stream({"logreg", "data"}));
    // The part separator matters: ("ab", "c") and ("a", "bc") differ.
    CHECK(cell_stream({"ab", "c"}) != cell_stream({"a", "bc"}));
}

TEST_CASE("format descriptors name the grid") {
    CHECK(format_descriptor(FixedPointFormat{8, 3}) == "fixed_w8_f3");
    CHECK(format_descriptor(BlockFloatFormat{8, 8, 32}) == "block_w8_e8_b32");
    CHECK(format_descriptor(FloatFormat{8, 8}) == "float_w8_e8");
}

TEST_CASE("automatic gradient scale is the covering power of two") {
    CHECK(auto_grad_scale(0.0, 10000) == 16384.0);
    CHECK(auto_grad_scale(0.0, 1024) == 1024.0);
    CHECK(auto_grad_scale(0.0, 1) == 1.0);
    CHECK(auto_grad_scale(0.0, 0) == 1.0);
    // An explicit setting wins over the heuristic.
    CHECK(auto_grad_scale(2.0, 10000) == 2.0);
}
