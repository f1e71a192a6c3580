#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdcd/config.hpp"
#include "cdcd/corpus.hpp"
#include "cdcd/denoiser.hpp"
#include "cdcd/embedding.hpp"
#include "cdcd/eval.hpp"
#include "cdcd/sampler.hpp"
#include "cdcd/training.hpp"
#include "cdcd/warp.hpp"

namespace cdcd {

// The live objects of one training/sampling run. The trainer borrows
// references to the other members, so a Run is pinned in memory.
class Run {
 public:
    explicit Run(const RunConfig& cfg);
    static std::unique_ptr<Run> load(const std::string& checkpoint_path);
    void save(const std::string& checkpoint_path) const;

    Run(const Run&) = delete;
    Run& operator=(const Run&) = delete;

    const RunConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    EmbeddingTable& embedding() { return emb_; }
    const EmbeddingTable& embedding() const { return emb_; }
    LearnedDenoiser& denoiser() { return net_; }
    WarpCdf& warp() { return warp_; }
    const WarpCdf& warp() const { return warp_; }
    Trainer& trainer() { return trainer_; }
    const SyntheticSource* synthetic() const { return synth_ ? &*synth_ : nullptr; }

    std::vector<std::vector<int>> next_batch();
    // Corpus sequences (ingested on demand for corpus-backed runs).
    const std::vector<std::vector<int>>& corpus_sequences();

    std::string detokenize(const std::vector<int>& tokens) const;

 private:
    Run(const RunConfig& cfg, std::optional<Vocabulary> vocab_override);
    void ensure_corpus();

    RunConfig cfg_;
    std::optional<SyntheticSource> synth_;
    std::vector<std::vector<int>> corpus_seqs_;
    bool corpus_loaded_ = false;
    Vocabulary vocab_;
    RngStream data_rng_;
    EmbeddingTable emb_;
    LearnedDenoiser net_;
    WarpCdf warp_;
    Trainer trainer_;
};

// Trains to cfg.train.steps, writing metrics.csv, periodic checkpoints and
// final.ckpt under out_dir. Returns the final checkpoint path.
std::string run_train(Run& run, const std::string& out_dir);

struct SampleOptions {
    int n_samples = 16;
    std::optional<uint64_t> seed;  // defaults to the run seed
    bool dump_trajectory = false;
    int threads = 1;
};

// Unconditional sampling; writes one detokenized sequence per line to
// samples.txt (and trajectory.csv for the first sequence on request).
// Returns the sampled token sequences.
std::vector<std::vector<int>> run_sample(Run& run, const SamplerConfig& scfg,
                                         const SampleOptions& opts, const std::string& out_dir);

// Samples and reports unigram entropy plus exact distances under the
// synthetic source (TV to the stationary marginal, NLL under the generator).
// Writes metrics.json and appends a row to metrics_eval.csv.
MetricsReport run_eval(Run& run, const SamplerConfig& scfg, const SampleOptions& opts,
                       const std::string& out_dir);

// Dumps (t, F~(t), F(t), pdf(t), weight) over a 1000-point grid.
void run_warp_inspect(const Run& run, const std::string& out_csv);

}  // namespace cdcd
