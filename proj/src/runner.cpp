#include "cdcd/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "cdcd/checkpoint.hpp"

namespace cdcd {

namespace {

constexpr uint64_t kEmbInitStream = 20;
constexpr uint64_t kDataStream = 21;
constexpr uint64_t kSampleStreamBase = 0x5A00;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Vocabulary resolve_vocab(const RunConfig& cfg, std::vector<std::vector<int>>* corpus_out,
                         std::optional<SyntheticSource>* synth_out) {
    switch (cfg.data.source) {
        case DataConfig::Source::corpus: {
            CorpusData data = ingest_corpus(cfg.data.path, cfg.data.tokenizer, cfg.train.seq_len);
            if (corpus_out != nullptr) *corpus_out = std::move(data.sequences);
            return data.vocab;
        }
        case DataConfig::Source::markov: {
            SyntheticSource s = SyntheticSource::make_markov(cfg.data.transition, cfg.data.initial);
            Vocabulary v = s.vocab;
            if (synth_out != nullptr) *synth_out = std::move(s);
            return v;
        }
        case DataConfig::Source::iid: {
            SyntheticSource s = SyntheticSource::make_iid(cfg.data.probs);
            Vocabulary v = s.vocab;
            if (synth_out != nullptr) *synth_out = std::move(s);
            return v;
        }
    }
    throw std::logic_error("resolve_vocab: unreachable");
}

EmbeddingTable make_embedding(const RunConfig& cfg, int vocab) {
    RngStream rng(cfg.seed, kEmbInitStream);
    return EmbeddingTable(vocab, cfg.emb_dim, cfg.emb_init_scale, rng);
}

DenoiserConfig denoiser_config(const RunConfig& cfg, int vocab) {
    DenoiserConfig d = cfg.denoiser;
    d.vocab = vocab;
    d.d = cfg.emb_dim;
    return d;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - f) + v[hi] * f;
}

}  // namespace

Run::Run(const RunConfig& cfg) : Run(cfg, std::nullopt) {}

Run::Run(const RunConfig& cfg, std::optional<Vocabulary> vocab_override)
    : cfg_(cfg),
      synth_(),
      corpus_seqs_(),
      vocab_(vocab_override.has_value()
                 ? *vocab_override
                 : resolve_vocab(cfg, &corpus_seqs_, &synth_)),
      data_rng_(cfg.seed, kDataStream),
      emb_(make_embedding(cfg, vocab_.size())),
      net_(denoiser_config(cfg, vocab_.size()), cfg.seed),
      warp_(cfg.warp.n_bins, cfg.warp.min_bin, cfg.t_min, cfg.t_max, cfg.warp.ema_decay),
      trainer_(emb_, net_, warp_, cfg.train) {
    cfg_.validate();
    if (vocab_override.has_value() && cfg.data.source != DataConfig::Source::corpus) {
        // synthetic sources are cheap to rebuild and are needed for eval
        resolve_vocab(cfg, nullptr, &synth_);
    }
    corpus_loaded_ = !corpus_seqs_.empty();
}

void Run::ensure_corpus() {
    if (corpus_loaded_ || cfg_.data.source != DataConfig::Source::corpus) return;
    CorpusData data = ingest_corpus(cfg_.data.path, cfg_.data.tokenizer, cfg_.train.seq_len);
    if (data.vocab.tokens != vocab_.tokens)
        throw std::runtime_error("Run: corpus vocabulary changed since the checkpoint was written");
    corpus_seqs_ = std::move(data.sequences);
    corpus_loaded_ = true;
}

const std::vector<std::vector<int>>& Run::corpus_sequences() {
    ensure_corpus();
    return corpus_seqs_;
}

std::vector<std::vector<int>> Run::next_batch() {
    const int b = cfg_.train.batch;
    const int L = cfg_.train.seq_len;
    std::vector<std::vector<int>> batch;
    batch.reserve(static_cast<size_t>(b));
    if (synth_.has_value()) {
        for (int i = 0; i < b; ++i) batch.push_back(synth_->sample_sequence(L, data_rng_));
    } else {
        ensure_corpus();
        const size_t n = corpus_seqs_.size();
        for (int i = 0; i < b; ++i) {
            const size_t idx = std::min(static_cast<size_t>(data_rng_.uniform() * n), n - 1);
            batch.push_back(corpus_seqs_[idx]);
        }
    }
    return batch;
}

std::string Run::detokenize(const std::vector<int>& tokens) const {
    std::string out;
    const bool char_mode =
        cfg_.data.source == DataConfig::Source::corpus && cfg_.data.tokenizer == TokenizerKind::chars;
    bool first = true;
    for (int tok : tokens) {
        const std::string& s = vocab_.tokens[static_cast<size_t>(tok)];
        if (cfg_.data.source == DataConfig::Source::corpus && s == kPadToken) continue;
        if (char_mode) {
            out += s;
        } else {
            if (!first) out += ' ';
            out += s;
            first = false;
        }
    }
    return out;
}

void Run::save(const std::string& checkpoint_path) const {
    CheckpointData data;
    data.format_version = kCheckpointFormatVersion;
    data.config_json = run_config_to_json(cfg_);
    data.vocab = vocab_.tokens;
    data.step = trainer_.step();

    auto rng_state = [](const RngStream& r) {
        return std::array<uint64_t, 3>{r.seed(), r.stream_id(), r.counter()};
    };
    data.rng.emplace_back("data", rng_state(data_rng_));
    data.rng.emplace_back("drop", rng_state(trainer_.drop_rng()));
    data.rng.emplace_back("mask", rng_state(trainer_.mask_rng()));
    data.rng.emplace_back("noise", rng_state(trainer_.noise_rng()));
    data.rng.emplace_back("u", rng_state(trainer_.u_rng()));
    data.adam_model_steps = trainer_.model_opt().step_count();
    data.adam_warp_steps = trainer_.warp_opt().step_count();

    auto push = [&](const std::string& name, int rows, int cols, std::span<const double> v) {
        CheckpointArray a;
        a.name = name;
        a.rows = rows;
        a.cols = cols;
        a.data.assign(v.begin(), v.end());
        data.arrays.push_back(std::move(a));
    };
    push("embedding/raw", emb_.vocab(), emb_.dim(), emb_.raw());
    for (const ParamInfo& info : net_.params().manifest())
        push("denoiser/" + info.name, info.rows, info.cols,
             net_.params().slice(info.offset, static_cast<size_t>(info.rows) * info.cols));
    const int nb = warp_.n_bins();
    push("warp/input_logits", 1, nb, warp_.input_logits());
    push("warp/output_logits", 1, nb, warp_.output_logits());
    push("warp/ema_input_logits", 1, nb, warp_.ema_input_logits());
    push("warp/ema_output_logits", 1, nb, warp_.ema_output_logits());
    push("adam/model/m", 1, static_cast<int>(trainer_.model_opt().size()), trainer_.model_opt().m());
    push("adam/model/v", 1, static_cast<int>(trainer_.model_opt().size()), trainer_.model_opt().v());
    push("adam/warp/m", 1, static_cast<int>(trainer_.warp_opt().size()), trainer_.warp_opt().m());
    push("adam/warp/v", 1, static_cast<int>(trainer_.warp_opt().size()), trainer_.warp_opt().v());

    write_checkpoint(checkpoint_path, data);
}

std::unique_ptr<Run> Run::load(const std::string& checkpoint_path) {
    const CheckpointData data = read_checkpoint(checkpoint_path);
    RunConfig cfg = parse_run_config_text(data.config_json);
    Vocabulary vocab;
    vocab.tokens = data.vocab;
    std::unique_ptr<Run> run(new Run(cfg, vocab));

    auto copy_into = [&](const std::string& name, std::span<double> dst) {
        const CheckpointArray& a = data.array(name);
        if (a.data.size() != dst.size())
            throw std::runtime_error("checkpoint: array '" + name + "' has unexpected size");
        std::copy(a.data.begin(), a.data.end(), dst.begin());
    };

    copy_into("embedding/raw", run->emb_.raw());
    for (const ParamInfo& info : run->net_.params().manifest())
        copy_into("denoiser/" + info.name,
                  run->net_.params().slice(info.offset, static_cast<size_t>(info.rows) * info.cols));
    const CheckpointArray& lt = data.array("warp/input_logits");
    const CheckpointArray& lu = data.array("warp/output_logits");
    const CheckpointArray& elt = data.array("warp/ema_input_logits");
    const CheckpointArray& elu = data.array("warp/ema_output_logits");
    run->warp_.load_state(lt.data, lu.data, elt.data, elu.data);
    copy_into("adam/model/m", run->trainer_.model_opt().m());
    copy_into("adam/model/v", run->trainer_.model_opt().v());
    copy_into("adam/warp/m", run->trainer_.warp_opt().m());
    copy_into("adam/warp/v", run->trainer_.warp_opt().v());
    run->trainer_.model_opt().set_step_count(data.adam_model_steps);
    run->trainer_.warp_opt().set_step_count(data.adam_warp_steps);
    run->trainer_.set_step(data.step);

    for (const auto& [name, s] : data.rng) {
        RngStream restored(s[0], s[1]);
        restored.set_counter(s[2]);
        if (name == "data")
            run->data_rng_ = restored;
        else if (name == "drop")
            run->trainer_.drop_rng() = restored;
        else if (name == "mask")
            run->trainer_.mask_rng() = restored;
        else if (name == "noise")
            run->trainer_.noise_rng() = restored;
        else if (name == "u")
            run->trainer_.u_rng() = restored;
        else
            throw std::runtime_error("checkpoint: unknown rng stream '" + name + "'");
    }
    return run;
}

std::string run_train(Run& run, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string metrics_path = out_dir + "/metrics.csv";
    const bool resuming = run.trainer().step() > 0;
    const bool existed = fs::exists(metrics_path);
    std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("run_train: cannot open " + metrics_path);
    if (!resuming || !existed) metrics << "step,wall_seconds,mean_weighted_ce,t_p10,t_p50,t_p90\n";

    const auto start = std::chrono::steady_clock::now();
    const RunConfig& cfg = run.config();
    while (run.trainer().step() < cfg.train.steps) {
        const auto batch = run.next_batch();
        const LossStats stats = run.trainer().train_step(batch);
        std::vector<double> ts;
        ts.reserve(stats.per_example.size());
        for (const auto& [t, ce] : stats.per_example) ts.push_back(t);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        metrics << stats.step << ',' << fmt_double(wall) << ',' << fmt_double(stats.mean_weighted_ce)
                << ',' << fmt_double(quantile(ts, 0.1)) << ',' << fmt_double(quantile(ts, 0.5)) << ','
                << fmt_double(quantile(ts, 0.9)) << '\n';
        metrics.flush();
        if (stats.step % cfg.checkpoint_interval == 0 && stats.step < cfg.train.steps)
            run.save(out_dir + "/ckpt_" + std::to_string(stats.step) + ".ckpt");
    }
    const std::string final_path = out_dir + "/final.ckpt";
    run.save(final_path);
    return final_path;
}

namespace {

std::vector<std::vector<int>> sample_many(Run& run, const SamplerConfig& scfg,
                                          const SampleOptions& opts, uint64_t stream_base,
                                          Trajectory* first_traj) {
    const RunConfig& cfg = run.config();
    const int L = cfg.train.seq_len;
    const uint64_t seed = opts.seed.value_or(cfg.seed);
    Conditioning cond;
    cond.tokens.assign(static_cast<size_t>(L), 0);
    cond.mask.assign(static_cast<size_t>(L), 1);
    const Mat emb = run.embedding().normalized();

    std::vector<std::vector<int>> out(static_cast<size_t>(opts.n_samples));
    const int threads = std::max(1, opts.threads);
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    auto work = [&](int k, int begin, int end) {
        try {
            for (int i = begin; i < end; ++i) {
                SamplerConfig local = scfg;
                local.record_trajectory = opts.dump_trajectory && i == 0;
                RngStream rng(seed, stream_base + static_cast<uint64_t>(i));
                SampleResult res = sample(run.denoiser(), emb, run.warp(), local, cond, cfg.t_min,
                                          cfg.t_max, rng);
                if (local.record_trajectory && first_traj != nullptr)
                    *first_traj = std::move(res.trajectory);
                out[static_cast<size_t>(i)] = std::move(res.tokens);
            }
        } catch (...) {
            errors[static_cast<size_t>(k)] = std::current_exception();
        }
    };
    if (threads == 1) {
        work(0, 0, opts.n_samples);
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < threads; ++k) {
            const int begin = static_cast<int>(static_cast<int64_t>(opts.n_samples) * k / threads);
            const int end = static_cast<int>(static_cast<int64_t>(opts.n_samples) * (k + 1) / threads);
            pool.emplace_back(work, k, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

}  // namespace

std::vector<std::vector<int>> run_sample(Run& run, const SamplerConfig& scfg,
                                         const SampleOptions& opts, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    Trajectory traj;
    const auto samples = sample_many(run, scfg, opts, kSampleStreamBase, &traj);

    std::ofstream f(out_dir + "/samples.txt", std::ios::trunc);
    if (!f) throw std::runtime_error("run_sample: cannot open samples.txt");
    for (const auto& seq : samples) f << run.detokenize(seq) << '\n';

    if (opts.dump_trajectory) {
        std::ofstream t(out_dir + "/trajectory.csv", std::ios::trunc);
        if (!t) throw std::runtime_error("run_sample: cannot open trajectory.csv");
        t << "step,t";
        const int L = run.config().train.seq_len;
        const int d = run.config().emb_dim;
        for (int r = 0; r < L; ++r)
            for (int j = 0; j < d; ++j) t << ",x_" << r << '_' << j;
        t << '\n';
        for (size_t k = 0; k < traj.states.size(); ++k) {
            t << k << ',' << fmt_double(traj.timesteps[k]);
            for (double v : traj.states[k].a) t << ',' << fmt_double(v);
            t << '\n';
        }
    }
    return samples;
}

MetricsReport run_eval(Run& run, const SamplerConfig& scfg, const SampleOptions& opts,
                       const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto samples = sample_many(run, scfg, opts, kSampleStreamBase + 0x10000, nullptr);

    MetricsReport report;
    report.n_samples = opts.n_samples;
    report.unigram_entropy_nats = unigram_entropy(samples);
    if (const SyntheticSource* src = run.synthetic()) {
        report.tv_to_truth = marginal_tv(samples, src->stationary());
        report.nll_truth = source_nll(*src, samples);
    } else {
        // corpus runs: distance to the corpus unigram marginal; no exact NLL
        const auto& seqs = run.corpus_sequences();
        std::vector<double> counts(static_cast<size_t>(run.vocab().size()), 0.0);
        double total = 0.0;
        for (const auto& s : seqs)
            for (int tok : s) {
                counts[static_cast<size_t>(tok)] += 1.0;
                total += 1.0;
            }
        for (double& c : counts) c /= total;
        report.tv_to_truth = marginal_tv(samples, counts);
        report.nll_truth = std::numeric_limits<double>::quiet_NaN();
    }

    nlohmann::json j;
    j["n_samples"] = report.n_samples;
    j["unigram_entropy_nats"] = report.unigram_entropy_nats;
    j["tv_to_truth"] = report.tv_to_truth;
    if (std::isfinite(report.nll_truth))
        j["nll_truth"] = report.nll_truth;
    else
        j["nll_truth"] = nullptr;
    std::ofstream jf(out_dir + "/metrics.json", std::ios::trunc);
    jf << j.dump(2) << '\n';

    const std::string csv_path = out_dir + "/metrics_eval.csv";
    const bool fresh = !fs::exists(csv_path);
    std::ofstream cf(csv_path, std::ios::app);
    if (fresh) cf << "n_samples,unigram_entropy_nats,tv_to_truth,nll_truth\n";
    cf << report.n_samples << ',' << fmt_double(report.unigram_entropy_nats) << ','
       << fmt_double(report.tv_to_truth) << ',' << fmt_double(report.nll_truth) << '\n';
    return report;
}

void run_warp_inspect(const Run& run, const std::string& out_csv) {
    std::ofstream f(out_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("run_warp_inspect: cannot open " + out_csv);
    f << "t,f_unnormalised,f,pdf,weight\n";
    const WarpCdf& w = run.warp();
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        const double tp = static_cast<double>(i) / (n - 1);
        const double t = w.denormalize_time(tp);
        f << fmt_double(t) << ',' << fmt_double(w.eval_cdf(tp, false)) << ','
          << fmt_double(w.eval_cdf(tp, true)) << ',' << fmt_double(w.pdf(tp)) << ','
          << fmt_double(w.importance_weight(tp)) << '\n';
    }
}

}  // namespace cdcd
