#include "cdcd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cdcd {

namespace {

using nlohmann::json;

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& keys) {
    if (!j.is_object()) throw std::runtime_error("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (keys.count(it.key()) == 0)
            throw std::runtime_error("config: unknown key '" + it.key() + "' in " + where);
    for (const std::string& k : keys)
        if (!j.contains(k)) throw std::runtime_error("config: missing key '" + k + "' in " + where);
}

template <typename T>
T get(const json& j, const std::string& key) {
    return j.at(key).get<T>();
}

MaskStrategy parse_mask(const json& j) {
    MaskStrategy m;
    const std::string kind = get<std::string>(j, "kind");
    if (kind == "prefix_fixed") {
        expect_keys(j, "train.mask", {"kind", "prefix_len"});
        m.kind = MaskKind::prefix_fixed;
        m.prefix_len = get<int>(j, "prefix_len");
    } else if (kind == "prefix_random") {
        expect_keys(j, "train.mask", {"kind"});
        m.kind = MaskKind::prefix_random;
    } else if (kind == "fully_random") {
        expect_keys(j, "train.mask", {"kind"});
        m.kind = MaskKind::fully_random;
    } else if (kind == "mixed") {
        expect_keys(j, "train.mask", {"kind", "prefix_fraction"});
        m.kind = MaskKind::mixed;
        m.prefix_fraction = get<double>(j, "prefix_fraction");
    } else {
        throw std::runtime_error("config: unknown mask kind '" + kind + "'");
    }
    return m;
}

json mask_to_json(const MaskStrategy& m) {
    json j;
    switch (m.kind) {
        case MaskKind::prefix_fixed:
            j["kind"] = "prefix_fixed";
            j["prefix_len"] = m.prefix_len;
            break;
        case MaskKind::prefix_random:
            j["kind"] = "prefix_random";
            break;
        case MaskKind::fully_random:
            j["kind"] = "fully_random";
            break;
        case MaskKind::mixed:
            j["kind"] = "mixed";
            j["prefix_fraction"] = m.prefix_fraction;
            break;
    }
    return j;
}

Solver parse_solver(const std::string& s) {
    if (s == "euler") return Solver::euler;
    if (s == "heun") return Solver::heun;
    throw std::runtime_error("config: unknown solver '" + s + "'");
}

Spacing parse_spacing(const std::string& s) {
    if (s == "warped") return Spacing::warped;
    if (s == "rho") return Spacing::rho;
    if (s == "warped_rho") return Spacing::warped_rho;
    throw std::runtime_error("config: unknown spacing '" + s + "'");
}

ScoreMode parse_mode(const std::string& s) {
    if (s == "plain") return ScoreMode::plain;
    if (s == "renormalise") return ScoreMode::renormalise;
    if (s == "clamp") return ScoreMode::clamp;
    if (s == "renormalise+clamp") return ScoreMode::renormalise_clamp;
    throw std::runtime_error("config: unknown score mode '" + s + "'");
}

Decode parse_decode(const std::string& s) {
    if (s == "argmax") return Decode::argmax;
    if (s == "nearest_embedding") return Decode::nearest_embedding;
    throw std::runtime_error("config: unknown decode '" + s + "'");
}

std::string solver_name(Solver s) { return s == Solver::euler ? "euler" : "heun"; }
std::string spacing_name(Spacing s) {
    switch (s) {
        case Spacing::warped: return "warped";
        case Spacing::rho: return "rho";
        case Spacing::warped_rho: return "warped_rho";
    }
    return "warped";
}
std::string mode_name(ScoreMode m) {
    switch (m) {
        case ScoreMode::plain: return "plain";
        case ScoreMode::renormalise: return "renormalise";
        case ScoreMode::clamp: return "clamp";
        case ScoreMode::renormalise_clamp: return "renormalise+clamp";
    }
    return "plain";
}
std::string decode_name(Decode d) { return d == Decode::argmax ? "argmax" : "nearest_embedding"; }

}  // namespace

void RunConfig::validate() const {
    if (!(t_max > t_min) || !(t_min > 0.0))
        throw std::runtime_error("config: need 0 < t_min < t_max");
    if (emb_dim < 1) throw std::runtime_error("config: emb_dim must be positive");
    if (emb_init_scale <= 0.0) throw std::runtime_error("config: emb_init_scale must be positive");
    if (denoiser.d != emb_dim)
        throw std::runtime_error("config: denoiser.d must equal embedding dim");
    if (warp.n_bins < 1) throw std::runtime_error("config: warp.n_bins must be positive");
    if (warp.min_bin < 0.0) throw std::runtime_error("config: warp.min_bin must be non-negative");
    if (warp.ema_decay < 0.0 || warp.ema_decay >= 1.0)
        throw std::runtime_error("config: warp.ema_decay must be in [0,1)");
    if (checkpoint_interval < 1) throw std::runtime_error("config: checkpoint_interval must be >= 1");
    train.validate();
    sampler.validate();
    if (data.source == DataConfig::Source::markov) {
        if (data.transition.rows != data.transition.cols ||
            data.transition.rows != static_cast<int>(data.initial.size()))
            throw std::runtime_error("config: markov transition/initial shape mismatch");
    }
    if (data.source == DataConfig::Source::iid && data.probs.empty())
        throw std::runtime_error("config: iid data needs probs");
}

RunConfig parse_run_config_text(const std::string& json_text) {
    json j = json::parse(json_text);
    expect_keys(j, "root",
                {"seed", "t_min", "t_max", "embedding", "data", "denoiser", "warp", "train",
                 "sampler", "checkpoint_interval"});
    RunConfig cfg;
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.t_min = get<double>(j, "t_min");
    cfg.t_max = get<double>(j, "t_max");
    cfg.checkpoint_interval = get<int>(j, "checkpoint_interval");

    const json& je = j.at("embedding");
    expect_keys(je, "embedding", {"dim", "init_scale"});
    cfg.emb_dim = get<int>(je, "dim");
    cfg.emb_init_scale = get<double>(je, "init_scale");

    const json& jd = j.at("data");
    const std::string source = get<std::string>(jd, "source");
    if (source == "corpus") {
        expect_keys(jd, "data", {"source", "path", "tokenizer"});
        cfg.data.source = DataConfig::Source::corpus;
        cfg.data.path = get<std::string>(jd, "path");
        const std::string tok = get<std::string>(jd, "tokenizer");
        if (tok == "char")
            cfg.data.tokenizer = TokenizerKind::chars;
        else if (tok == "whitespace")
            cfg.data.tokenizer = TokenizerKind::whitespace;
        else
            throw std::runtime_error("config: unknown tokenizer '" + tok + "'");
    } else if (source == "markov") {
        expect_keys(jd, "data", {"source", "transition", "initial"});
        cfg.data.source = DataConfig::Source::markov;
        const auto rows = jd.at("transition").get<std::vector<std::vector<double>>>();
        if (rows.empty()) throw std::runtime_error("config: empty transition matrix");
        cfg.data.transition.resize(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows[0].size())
                throw std::runtime_error("config: ragged transition matrix");
            for (size_t c = 0; c < rows[r].size(); ++c)
                cfg.data.transition(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
        }
        cfg.data.initial = jd.at("initial").get<std::vector<double>>();
    } else if (source == "iid") {
        expect_keys(jd, "data", {"source", "probs"});
        cfg.data.source = DataConfig::Source::iid;
        cfg.data.probs = jd.at("probs").get<std::vector<double>>();
    } else {
        throw std::runtime_error("config: unknown data source '" + source + "'");
    }

    const json& jn = j.at("denoiser");
    expect_keys(jn, "denoiser", {"blocks", "width", "heads", "fourier_features", "time_mlp_width"});
    cfg.denoiser.blocks = get<int>(jn, "blocks");
    cfg.denoiser.width = get<int>(jn, "width");
    cfg.denoiser.heads = get<int>(jn, "heads");
    cfg.denoiser.fourier_features = get<int>(jn, "fourier_features");
    cfg.denoiser.time_mlp_width = get<int>(jn, "time_mlp_width");
    cfg.denoiser.d = cfg.emb_dim;

    const json& jw = j.at("warp");
    expect_keys(jw, "warp", {"n_bins", "min_bin", "ema_decay", "enabled"});
    cfg.warp.n_bins = get<int>(jw, "n_bins");
    cfg.warp.min_bin = get<double>(jw, "min_bin");
    cfg.warp.ema_decay = get<double>(jw, "ema_decay");
    cfg.warp.enabled = get<bool>(jw, "enabled");

    const json& jt = j.at("train");
    expect_keys(jt, "train",
                {"batch", "seq_len", "lr", "beta1", "beta2", "cond_dropout", "self_cond_fraction",
                 "steps", "grad_clip", "threads", "mask"});
    cfg.train.batch = get<int>(jt, "batch");
    cfg.train.seq_len = get<int>(jt, "seq_len");
    cfg.train.lr = get<double>(jt, "lr");
    cfg.train.beta1 = get<double>(jt, "beta1");
    cfg.train.beta2 = get<double>(jt, "beta2");
    cfg.train.cond_dropout = get<double>(jt, "cond_dropout");
    cfg.train.self_cond_fraction = get<double>(jt, "self_cond_fraction");
    cfg.train.steps = get<int>(jt, "steps");
    cfg.train.grad_clip = get<double>(jt, "grad_clip");
    cfg.train.threads = get<int>(jt, "threads");
    cfg.train.mask = parse_mask(jt.at("mask"));
    cfg.train.seed = cfg.seed;
    cfg.train.warp_enabled = cfg.warp.enabled;

    const json& js = j.at("sampler");
    expect_keys(js, "sampler",
                {"solver", "steps", "spacing", "rho", "sigma_init", "score_temp", "softmax_temp",
                 "nucleus_p", "guidance", "mode", "decode"});
    cfg.sampler.solver = parse_solver(get<std::string>(js, "solver"));
    cfg.sampler.n_steps = get<int>(js, "steps");
    cfg.sampler.spacing = parse_spacing(get<std::string>(js, "spacing"));
    cfg.sampler.rho = get<double>(js, "rho");
    cfg.sampler.sigma_init = get<double>(js, "sigma_init");
    cfg.sampler.score_temp = get<double>(js, "score_temp");
    cfg.sampler.softmax_temp = get<double>(js, "softmax_temp");
    cfg.sampler.nucleus_p = get<double>(js, "nucleus_p");
    cfg.sampler.guidance = get<double>(js, "guidance");
    cfg.sampler.mode = parse_mode(get<std::string>(js, "mode"));
    cfg.sampler.decode = parse_decode(get<std::string>(js, "decode"));

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config_text(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["t_min"] = cfg.t_min;
    j["t_max"] = cfg.t_max;
    j["checkpoint_interval"] = cfg.checkpoint_interval;
    j["embedding"] = {{"dim", cfg.emb_dim}, {"init_scale", cfg.emb_init_scale}};
    json jd;
    switch (cfg.data.source) {
        case DataConfig::Source::corpus:
            jd["source"] = "corpus";
            jd["path"] = cfg.data.path;
            jd["tokenizer"] = cfg.data.tokenizer == TokenizerKind::chars ? "char" : "whitespace";
            break;
        case DataConfig::Source::markov: {
            jd["source"] = "markov";
            std::vector<std::vector<double>> rows;
            for (int r = 0; r < cfg.data.transition.rows; ++r)
                rows.emplace_back(cfg.data.transition.row(r).begin(), cfg.data.transition.row(r).end());
            jd["transition"] = rows;
            jd["initial"] = cfg.data.initial;
            break;
        }
        case DataConfig::Source::iid:
            jd["source"] = "iid";
            jd["probs"] = cfg.data.probs;
            break;
    }
    j["data"] = jd;
    j["denoiser"] = {{"blocks", cfg.denoiser.blocks},
                     {"width", cfg.denoiser.width},
                     {"heads", cfg.denoiser.heads},
                     {"fourier_features", cfg.denoiser.fourier_features},
                     {"time_mlp_width", cfg.denoiser.time_mlp_width}};
    j["warp"] = {{"n_bins", cfg.warp.n_bins},
                 {"min_bin", cfg.warp.min_bin},
                 {"ema_decay", cfg.warp.ema_decay},
                 {"enabled", cfg.warp.enabled}};
    j["train"] = {{"batch", cfg.train.batch},
                  {"seq_len", cfg.train.seq_len},
                  {"lr", cfg.train.lr},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"cond_dropout", cfg.train.cond_dropout},
                  {"self_cond_fraction", cfg.train.self_cond_fraction},
                  {"steps", cfg.train.steps},
                  {"grad_clip", cfg.train.grad_clip},
                  {"threads", cfg.train.threads},
                  {"mask", mask_to_json(cfg.train.mask)}};
    j["sampler"] = {{"solver", solver_name(cfg.sampler.solver)},
                    {"steps", cfg.sampler.n_steps},
                    {"spacing", spacing_name(cfg.sampler.spacing)},
                    {"rho", cfg.sampler.rho},
                    {"sigma_init", cfg.sampler.sigma_init},
                    {"score_temp", cfg.sampler.score_temp},
                    {"softmax_temp", cfg.sampler.softmax_temp},
                    {"nucleus_p", cfg.sampler.nucleus_p},
                    {"guidance", cfg.sampler.guidance},
                    {"mode", mode_name(cfg.sampler.mode)},
                    {"decode", decode_name(cfg.sampler.decode)}};
    return j.dump(2);
}

}  // namespace cdcd
