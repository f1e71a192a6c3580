#include <cstdio>
#include <exception>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cdcd/config.hpp"
#include "cdcd/runner.hpp"

namespace {

struct SamplerOverrides {
    std::optional<int> steps;
    std::optional<std::string> solver;
    std::optional<double> score_temp;
    std::optional<double> guidance;
    std::optional<double> nucleus_p;
    std::optional<double> sigma_init;
    std::optional<std::string> decode;
};

void add_sampler_flags(CLI::App* cmd, SamplerOverrides& o) {
    cmd->add_option("--steps", o.steps, "Number of solver steps");
    cmd->add_option("--solver", o.solver, "euler or heun")
        ->check(CLI::IsMember({"euler", "heun"}));
    cmd->add_option("--score-temp", o.score_temp, "Score temperature");
    cmd->add_option("--guidance", o.guidance, "Classifier-free guidance scale");
    cmd->add_option("--nucleus-p", o.nucleus_p, "Nucleus truncation mass");
    cmd->add_option("--sigma-init", o.sigma_init, "Initial noise scale in (0, 1]");
    cmd->add_option("--decode", o.decode, "argmax or nearest_embedding")
        ->check(CLI::IsMember({"argmax", "nearest_embedding"}));
}

cdcd::SamplerConfig apply_overrides(cdcd::SamplerConfig cfg, const SamplerOverrides& o) {
    if (o.steps) cfg.n_steps = *o.steps;
    if (o.solver) cfg.solver = *o.solver == "euler" ? cdcd::Solver::euler : cdcd::Solver::heun;
    if (o.score_temp) cfg.score_temp = *o.score_temp;
    if (o.guidance) cfg.guidance = *o.guidance;
    if (o.nucleus_p) cfg.nucleus_p = *o.nucleus_p;
    if (o.sigma_init) cfg.sigma_init = *o.sigma_init;
    if (o.decode)
        cfg.decode = *o.decode == "argmax" ? cdcd::Decode::argmax : cdcd::Decode::nearest_embedding;
    cfg.validate();
    return cfg;
}

std::unique_ptr<cdcd::Run> open_run(const std::string& config_path,
                                    const std::string& checkpoint_path) {
    if (!checkpoint_path.empty()) return cdcd::Run::load(checkpoint_path);
    if (config_path.empty()) throw std::runtime_error("either --config or --checkpoint is required");
    return std::make_unique<cdcd::Run>(cdcd::load_run_config(config_path));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuous-diffusion language model: train, sample, eval, warp-inspect"};
    app.require_subcommand(1);

    std::string config_path, checkpoint_path, out_dir = "out";
    std::optional<uint64_t> seed;
    int n_samples = 16;
    int threads = 1;
    bool dump_trajectory = false;
    SamplerOverrides overrides;

    CLI::App* train = app.add_subcommand("train", "Train a model (resumes when --checkpoint is given)");
    train->add_option("--config", config_path, "JSON run configuration");
    train->add_option("--checkpoint", checkpoint_path, "Checkpoint to resume from");
    train->add_option("--out", out_dir, "Output directory");

    CLI::App* sample = app.add_subcommand("sample", "Sample token sequences from a checkpoint");
    sample->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
    sample->add_option("--out", out_dir, "Output directory");
    sample->add_option("--seed", seed, "Sampling seed (defaults to the run seed)");
    sample->add_option("--n-samples", n_samples, "Number of sequences");
    sample->add_option("--threads", threads, "Sampler worker threads");
    sample->add_flag("--trajectory", dump_trajectory, "Dump the first sequence's trajectory CSV");
    add_sampler_flags(sample, overrides);

    CLI::App* eval = app.add_subcommand("eval", "Sample and report metrics");
    eval->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")->required();
    eval->add_option("--out", out_dir, "Output directory");
    eval->add_option("--seed", seed, "Sampling seed (defaults to the run seed)");
    eval->add_option("--n-samples", n_samples, "Number of sequences");
    eval->add_option("--threads", threads, "Sampler worker threads");
    add_sampler_flags(eval, overrides);

    CLI::App* warp = app.add_subcommand("warp-inspect", "Dump the warp CDF/pdf over a t grid");
    warp->add_option("--checkpoint", checkpoint_path, "Checkpoint to inspect")->required();
    warp->add_option("--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            auto run = open_run(config_path, checkpoint_path);
            const std::string final_path = cdcd::run_train(*run, out_dir);
            std::printf("trained to step %lld; final checkpoint: %s\n",
                        static_cast<long long>(run->trainer().step()), final_path.c_str());
        } else if (sample->parsed()) {
            auto run = cdcd::Run::load(checkpoint_path);
            cdcd::SampleOptions opts;
            opts.n_samples = n_samples;
            opts.seed = seed;
            opts.dump_trajectory = dump_trajectory;
            opts.threads = threads;
            cdcd::run_sample(*run, apply_overrides(run->config().sampler, overrides), opts, out_dir);
            std::printf("wrote %d samples to %s/samples.txt\n", n_samples, out_dir.c_str());
        } else if (eval->parsed()) {
            auto run = cdcd::Run::load(checkpoint_path);
            cdcd::SampleOptions opts;
            opts.n_samples = n_samples;
            opts.seed = seed;
            opts.threads = threads;
            const cdcd::MetricsReport rep =
                cdcd::run_eval(*run, apply_overrides(run->config().sampler, overrides), opts, out_dir);
            std::printf("unigram entropy %.4f nats, tv %.4f, nll %.4f (%lld samples)\n",
                        rep.unigram_entropy_nats, rep.tv_to_truth, rep.nll_truth,
                        static_cast<long long>(rep.n_samples));
        } else if (warp->parsed()) {
            auto run = cdcd::Run::load(checkpoint_path);
            std::filesystem::create_directories(out_dir);
            cdcd::run_warp_inspect(*run, out_dir + "/warp.csv");
            std::printf("wrote %s/warp.csv\n", out_dir.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
