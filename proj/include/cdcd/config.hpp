#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdcd/corpus.hpp"
#include "cdcd/denoiser.hpp"
#include "cdcd/mat.hpp"
#include "cdcd/sampler.hpp"
#include "cdcd/training.hpp"

namespace cdcd {

struct DataConfig {
    enum class Source { corpus, markov, iid };
    Source source = Source::iid;
    std::string path;                                    // corpus
    TokenizerKind tokenizer = TokenizerKind::chars;      // corpus
    Mat transition;                                      // markov
    std::vector<double> initial;                         // markov
    std::vector<double> probs;                           // iid
};

struct WarpConfig {
    int n_bins = 100;
    double min_bin = 1e-4;
    double ema_decay = 0.99;
    bool enabled = true;
};

struct RunConfig {
    uint64_t seed = 0;
    double t_min = 0.1;
    double t_max = 300.0;
    int emb_dim = 16;
    double emb_init_scale = 0.001;
    DataConfig data;
    DenoiserConfig denoiser;  // vocab is filled in from the data source
    WarpConfig warp;
    TrainConfig train;
    SamplerConfig sampler;
    int checkpoint_interval = 1000;

    void validate() const;
};

// Strict JSON: every field is required, unknown keys are errors. Defaults live
// only in the shipped config files.
RunConfig parse_run_config_text(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace cdcd
