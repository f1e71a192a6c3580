#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "cdcd/checkpoint.hpp"
#include "cdcd/config.hpp"
#include "cdcd/runner.hpp"

using namespace cdcd;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// metrics rows with the wall-clock column removed
std::vector<std::string> metrics_rows_without_time(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(f, line)) {
        const size_t a = line.find(',');
        const size_t b = line.find(',', a + 1);
        rows.push_back(line.substr(0, a) + line.substr(b));
    }
    return rows;
}

RunConfig tiny_config(uint64_t seed, int steps, int checkpoint_interval) {
    std::ostringstream ss;
    ss << R"JSON({
      "seed": )JSON" << seed << R"JSON(,
      "t_min": 0.5,
      "t_max": 30.0,
      "checkpoint_interval": )JSON"
       << checkpoint_interval << R"JSON(,
      "embedding": {"dim": 4, "init_scale": 0.001},
      "data": {"source": "markov",
               "transition": [[0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1],
                               [0.1, 0.1, 0.7, 0.1], [0.1, 0.1, 0.1, 0.7]],
               "initial": [0.25, 0.25, 0.25, 0.25]},
      "denoiser": {"blocks": 1, "width": 16, "heads": 2, "fourier_features": 8, "time_mlp_width": 8},
      "warp": {"n_bins": 8, "min_bin": 1e-4, "ema_decay": 0.99, "enabled": true},
      "train": {"batch": 4, "seq_len": 6, "lr": 1e-3, "beta1": 0.9, "beta2": 0.99,
                "cond_dropout": 0.1, "self_cond_fraction": 0.5, "steps": )JSON"
       << steps << R"JSON(,
                "grad_clip": 1.0, "threads": 1,
                "mask": {"kind": "mixed", "prefix_fraction": 0.5}},
      "sampler": {"solver": "euler", "steps": 10, "spacing": "rho", "rho": 7.0,
                  "sigma_init": 1.0, "score_temp": 1.0, "softmax_temp": 1.0,
                  "nucleus_p": 1.0, "guidance": 1.0, "mode": "plain", "decode": "argmax"}
    })JSON";
    return parse_run_config_text(ss.str());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_SUITE_BEGIN("checkpoint_runner");

TEST_CASE("checkpoint file: write, read, write is byte-identical") {
    TempDir dir("cdcd_ckpt_roundtrip");
    CheckpointData data;
    data.config_json = R"({"alpha": 1.5, "name": "x"})";
    data.vocab = {"<pad>", "a", "b"};
    data.step = 42;
    data.rng.emplace_back("noise", std::array<uint64_t, 3>{1, 2, 3});
    data.adam_model_steps = 41;
    data.arrays.push_back({"w", 2, 2, {1.0, -0.5, 3.25, 1e-300}});
    const std::string p1 = dir.str() + "/a.ckpt";
    const std::string p2 = dir.str() + "/b.ckpt";
    write_checkpoint(p1, data);
    const CheckpointData loaded = read_checkpoint(p1);
    CHECK(loaded.step == 42);
    CHECK(loaded.vocab == data.vocab);
    CHECK(loaded.array("w").data == data.arrays[0].data);
    write_checkpoint(p2, loaded);
    CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("checkpoint file: incompatible version errors with both versions") {
    TempDir dir("cdcd_ckpt_version");
    CheckpointData data;
    data.format_version = 99;
    data.config_json = "{}";
    const std::string p = dir.str() + "/v.ckpt";
    write_checkpoint(p, data);
    try {
        (void)read_checkpoint(p);
        FAIL("expected a version error");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find("99") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }
}

TEST_CASE("run: save, load, save is byte-identical after training") {
    TempDir dir("cdcd_run_roundtrip");
    Run run(tiny_config(11, 2, 10));
    run_train(run, dir.str() + "/train");
    const std::string p1 = dir.str() + "/one.ckpt";
    run.save(p1);
    auto loaded = Run::load(p1);
    const std::string p2 = dir.str() + "/two.ckpt";
    loaded->save(p2);
    CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("resume from a checkpoint matches the uninterrupted run exactly") {
    TempDir dir("cdcd_resume");
    // uninterrupted: 3 steps
    Run full(tiny_config(13, 3, 2));
    run_train(full, dir.str() + "/full");
    // interrupted: the same config checkpoints at step 2; resume and finish
    auto resumed = Run::load(dir.str() + "/full/ckpt_2.ckpt");
    CHECK(resumed->trainer().step() == 2);
    run_train(*resumed, dir.str() + "/resumed");

    CHECK(read_bytes(dir.str() + "/full/final.ckpt") ==
          read_bytes(dir.str() + "/resumed/final.ckpt"));

    const auto full_rows = metrics_rows_without_time(dir.str() + "/full/metrics.csv");
    const auto res_rows = metrics_rows_without_time(dir.str() + "/resumed/metrics.csv");
    REQUIRE(full_rows.size() == 4);  // header + 3 steps
    REQUIRE(res_rows.size() == 2);   // header + step 3
    CHECK(res_rows[1] == full_rows[3]);
}

TEST_CASE("sampling twice with a fixed seed writes identical files") {
    TempDir dir("cdcd_sample_det");
    Run run(tiny_config(17, 1, 10));
    run_train(run, dir.str() + "/train");
    SampleOptions opts;
    opts.n_samples = 5;
    opts.seed = 99;
    run_sample(run, run.config().sampler, opts, dir.str() + "/s1");
    run_sample(run, run.config().sampler, opts, dir.str() + "/s2");
    CHECK(read_bytes(dir.str() + "/s1/samples.txt") == read_bytes(dir.str() + "/s2/samples.txt"));
    CHECK(!read_bytes(dir.str() + "/s1/samples.txt").empty());
}

TEST_CASE("run_eval writes a metrics report with sane fields") {
    TempDir dir("cdcd_eval");
    Run run(tiny_config(19, 1, 10));
    run_train(run, dir.str() + "/train");
    SampleOptions opts;
    opts.n_samples = 8;
    opts.seed = 5;
    const MetricsReport rep = run_eval(run, run.config().sampler, opts, dir.str() + "/eval");
    CHECK(rep.n_samples == 8);
    CHECK(rep.unigram_entropy_nats >= 0.0);
    CHECK(rep.unigram_entropy_nats <= std::log(4.0) + 1e-9);
    CHECK(rep.tv_to_truth >= 0.0);
    CHECK(rep.tv_to_truth <= 1.0);
    CHECK(fs::exists(dir.str() + "/eval/metrics.json"));
    CHECK(fs::exists(dir.str() + "/eval/metrics_eval.csv"));
}

TEST_CASE("warp-inspect of a fresh model dumps the identity CDF") {
    TempDir dir("cdcd_warp_inspect");
    Run run(tiny_config(23, 0, 10));  // steps=0: untouched warp
    run_warp_inspect(run, dir.str() + "/warp.csv");
    std::ifstream f(dir.str() + "/warp.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "t,f_unnormalised,f,pdf,weight");
    std::string line;
    int rows = 0;
    while (std::getline(f, line)) {
        double t, ft, fn, pdf, wt;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &t, &ft, &fn, &pdf, &wt) == 5);
        const double tp = (t - 0.5) / (30.0 - 0.5);
        CHECK(std::abs(fn - tp) < 1e-9);
        CHECK(std::abs(pdf - 1.0) < 1e-9);
        ++rows;
    }
    CHECK(rows == 1000);
}

TEST_CASE("corpus-backed run: save and load keep the vocabulary stable") {
    TempDir dir("cdcd_corpus_run");
    const std::string corpus_path = dir.str() + "/corpus.txt";
    {
        std::ofstream f(corpus_path);
        f << "the quick brown fox jumps over the lazy dog and the bird sings";
    }
    RunConfig cfg = tiny_config(29, 1, 10);
    cfg.data.source = DataConfig::Source::corpus;
    cfg.data.path = corpus_path;
    cfg.data.tokenizer = TokenizerKind::chars;
    cfg.data.transition = Mat();
    cfg.data.initial.clear();
    Run run(cfg);
    run_train(run, dir.str() + "/train");
    auto loaded = Run::load(dir.str() + "/train/final.ckpt");
    CHECK(loaded->vocab().tokens == run.vocab().tokens);
    // sampling from the loaded checkpoint produces valid text lines
    SampleOptions opts;
    opts.n_samples = 3;
    opts.seed = 1;
    const auto samples = run_sample(*loaded, loaded->config().sampler, opts, dir.str() + "/samples");
    CHECK(samples.size() == 3);
}

TEST_SUITE_END();
