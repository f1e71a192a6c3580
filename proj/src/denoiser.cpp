#include "cdcd/denoiser.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cdcd/numerics.hpp"

namespace cdcd {

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kRopeBase = 10000.0;
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

// y = x W + b with W (in x out) viewed directly in the parameter store.
void linear(const Mat& x, const double* w, const double* b, int out, Mat& y) {
    const int in = x.cols;
    y.resize(x.rows, out);
    for (int r = 0; r < x.rows; ++r) {
        double* yr = y.row_ptr(r);
        for (int j = 0; j < out; ++j) yr[j] = b[j];
        const double* xr = x.row_ptr(r);
        for (int k = 0; k < in; ++k) {
            const double xv = xr[k];
            const double* wr = w + static_cast<size_t>(k) * out;
            for (int j = 0; j < out; ++j) yr[j] += xv * wr[j];
        }
    }
}

// dw += x^T dy, db += colsum(dy), dx = dy W^T (overwritten when non-null).
void linear_backward(const Mat& x, const double* w, int out, const Mat& dy, double* dw, double* db,
                     Mat* dx) {
    const int in = x.cols;
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row_ptr(r);
        const double* dyr = dy.row_ptr(r);
        for (int k = 0; k < in; ++k) {
            double* dwr = dw + static_cast<size_t>(k) * out;
            const double xv = xr[k];
            for (int j = 0; j < out; ++j) dwr[j] += xv * dyr[j];
        }
        for (int j = 0; j < out; ++j) db[j] += dyr[j];
    }
    if (dx != nullptr) {
        dx->resize(x.rows, in);
        for (int r = 0; r < x.rows; ++r) {
            const double* dyr = dy.row_ptr(r);
            double* dxr = dx->row_ptr(r);
            for (int k = 0; k < in; ++k) {
                const double* wr = w + static_cast<size_t>(k) * out;
                double s = 0.0;
                for (int j = 0; j < out; ++j) s += dyr[j] * wr[j];
                dxr[k] = s;
            }
        }
    }
}

void layer_norm(const Mat& x, Mat& xhat, std::vector<double>& inv_std) {
    xhat.resize(x.rows, x.cols);
    inv_std.assign(static_cast<size_t>(x.rows), 0.0);
    for (int r = 0; r < x.rows; ++r) {
        const double* in = x.row_ptr(r);
        double mu = 0.0;
        for (int j = 0; j < x.cols; ++j) mu += in[j];
        mu /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            const double dj = in[j] - mu;
            var += dj * dj;
        }
        var /= x.cols;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_std[static_cast<size_t>(r)] = inv;
        double* out = xhat.row_ptr(r);
        for (int j = 0; j < x.cols; ++j) out[j] = (in[j] - mu) * inv;
    }
}

// Accumulates dx into dx_acc given dy, xhat and inv_std.
void layer_norm_backward(const Mat& xhat, const std::vector<double>& inv_std, const Mat& dy,
                         Mat& dx_acc) {
    const int n = xhat.cols;
    for (int r = 0; r < xhat.rows; ++r) {
        const double* xh = xhat.row_ptr(r);
        const double* g = dy.row_ptr(r);
        double* out = dx_acc.row_ptr(r);
        double mean_g = 0.0, mean_gx = 0.0;
        for (int j = 0; j < n; ++j) {
            mean_g += g[j];
            mean_gx += g[j] * xh[j];
        }
        mean_g /= n;
        mean_gx /= n;
        const double inv = inv_std[static_cast<size_t>(r)];
        for (int j = 0; j < n; ++j) out[j] += inv * (g[j] - mean_g - xh[j] * mean_gx);
    }
}

// y = xhat * (1 + s) + b, where sb = [s | b] is 1 x 2w.
void film(const Mat& xhat, const Mat& sb, Mat& y) {
    const int w = xhat.cols;
    y.resize(xhat.rows, w);
    const double* s = sb.row_ptr(0);
    const double* b = s + w;
    for (int r = 0; r < xhat.rows; ++r) {
        const double* in = xhat.row_ptr(r);
        double* out = y.row_ptr(r);
        for (int j = 0; j < w; ++j) out[j] = in[j] * (1.0 + s[j]) + b[j];
    }
}

void film_backward(const Mat& xhat, const Mat& sb, const Mat& dy, Mat& dxhat, Mat& dsb) {
    const int w = xhat.cols;
    dxhat.resize(xhat.rows, w);
    dsb.resize(1, 2 * w);
    dsb.zero();
    const double* s = sb.row_ptr(0);
    double* ds = dsb.row_ptr(0);
    double* db = ds + w;
    for (int r = 0; r < xhat.rows; ++r) {
        const double* in = xhat.row_ptr(r);
        const double* g = dy.row_ptr(r);
        double* out = dxhat.row_ptr(r);
        for (int j = 0; j < w; ++j) {
            out[j] = g[j] * (1.0 + s[j]);
            ds[j] += g[j] * in[j];
            db[j] += g[j];
        }
    }
}

}  // namespace

void DenoiserConfig::validate() const {
    if (blocks < 1 || width < 1 || heads < 1 || d < 1 || vocab < 1 || fourier_features < 2 ||
        time_mlp_width < 1)
        throw std::invalid_argument("DenoiserConfig: all dimensions must be positive");
    if (width % heads != 0) throw std::invalid_argument("DenoiserConfig: width must divide by heads");
    if ((width / heads) % 2 != 0)
        throw std::invalid_argument("DenoiserConfig: head dimension must be even for rotary pairs");
    if (fourier_features % 2 != 0)
        throw std::invalid_argument("DenoiserConfig: fourier_features must be even");
}

OracleDenoiser::OracleDenoiser(OracleSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Mat OracleDenoiser::forward(const DenoiserInput& in) const {
    if (!(in.t > 0.0)) throw std::invalid_argument("OracleDenoiser: t must be positive");
    const int L = in.x.rows;
    const int v = spec_.vocab();
    Mat logits(L, v);
    const double inv_2t2 = 1.0 / (2.0 * in.t * in.t);
    for (int r = 0; r < L; ++r) {
        const double* x = in.x.row_ptr(r);
        for (int i = 0; i < v; ++i) {
            const double* e = spec_.embeddings.row_ptr(i);
            double sq = 0.0;
            for (int j = 0; j < spec_.dim(); ++j) {
                const double dj = x[j] - e[j];
                sq += dj * dj;
            }
            logits(r, i) = std::log(spec_.prior[static_cast<size_t>(i)]) - sq * inv_2t2;
        }
    }
    return logits;
}

LearnedDenoiser::LearnedDenoiser(const DenoiserConfig& cfg, uint64_t param_seed) : cfg_(cfg) {
    cfg_.validate();
    const int w = cfg_.width;
    const int tw = cfg_.time_mlp_width;
    const int ff = cfg_.fourier_features;
    const int in_dim = 3 * cfg_.d + 1;

    time_freqs_ = store_.add("time/freqs", 1, ff / 2, /*trainable=*/false);
    time_w1_ = store_.add("time/w1", ff, tw);
    time_b1_ = store_.add("time/b1", 1, tw);
    time_w2_ = store_.add("time/w2", tw, tw);
    time_b2_ = store_.add("time/b2", 1, tw);
    in_w_ = store_.add("input/w", in_dim, w);
    in_b_ = store_.add("input/b", 1, w);
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "block" + std::to_string(b) + "/";
        BlockOffsets o;
        o.film1_w = store_.add(p + "film1_w", tw, 2 * w);
        o.film1_b = store_.add(p + "film1_b", 1, 2 * w);
        o.wq = store_.add(p + "attn_wq", w, w);
        o.bq = store_.add(p + "attn_bq", 1, w);
        o.wk = store_.add(p + "attn_wk", w, w);
        o.bk = store_.add(p + "attn_bk", 1, w);
        o.wv = store_.add(p + "attn_wv", w, w);
        o.bv = store_.add(p + "attn_bv", 1, w);
        o.wo = store_.add(p + "attn_wo", w, w);
        o.bo = store_.add(p + "attn_bo", 1, w);
        o.film2_w = store_.add(p + "film2_w", tw, 2 * w);
        o.film2_b = store_.add(p + "film2_b", 1, 2 * w);
        o.mlp_w1 = store_.add(p + "mlp_w1", w, 4 * w);
        o.mlp_b1 = store_.add(p + "mlp_b1", 1, 4 * w);
        o.mlp_w2 = store_.add(p + "mlp_w2", 4 * w, w);
        o.mlp_b2 = store_.add(p + "mlp_b2", 1, w);
        blk_.push_back(o);
    }
    film_out_w_ = store_.add("final/film_w", tw, 2 * w);
    film_out_b_ = store_.add("final/film_b", 1, 2 * w);
    ro_w_ = store_.add("readout/w", w, cfg_.vocab);
    ro_b_ = store_.add("readout/b", 1, cfg_.vocab);

    init_params(param_seed);
}

void LearnedDenoiser::init_params(uint64_t param_seed) {
    RngStream rng(param_seed, 0xD0);
    for (const ParamInfo& info : store_.manifest()) {
        std::span<double> v = store_.slice(info.offset, static_cast<size_t>(info.rows) * info.cols);
        const bool is_bias = info.rows == 1 && info.name != "time/freqs";
        const bool is_film = info.name.find("film") != std::string::npos;
        if (info.name == "time/freqs") {
            for (double& x : v) x = rng.gaussian();
        } else if (is_film || is_bias) {
            // films start as the identity conditioning; biases start at zero
        } else {
            const double std = 1.0 / std::sqrt(static_cast<double>(info.rows));
            for (double& x : v) x = std * rng.gaussian();
        }
    }
}

Mat LearnedDenoiser::forward(const DenoiserInput& in) const {
    Workspace ws;
    return forward(ws, in);
}

const Mat& LearnedDenoiser::forward(Workspace& ws, const DenoiserInput& in) const {
    const int L = in.x.rows;
    const int w = cfg_.width;
    const int d = cfg_.d;
    const int heads = cfg_.heads;
    const int dh = w / heads;
    const int in_dim = 3 * d + 1;
    const int ff = cfg_.fourier_features;
    const int tw = cfg_.time_mlp_width;
    if (in.c.rows != L || in.p.rows != L || static_cast<int>(in.mask.size()) != L)
        throw std::invalid_argument("LearnedDenoiser: input sequence lengths disagree");
    if (in.x.cols != d || in.c.cols != d || in.p.cols != d)
        throw std::invalid_argument("LearnedDenoiser: input dimensionality mismatch");
    if (!(in.t > 0.0)) throw std::invalid_argument("LearnedDenoiser: t must be positive");

    if (ws.seq_len != L || static_cast<int>(ws.blocks.size()) != cfg_.blocks) {
        ws.seq_len = L;
        ws.blocks.assign(static_cast<size_t>(cfg_.blocks), {});
        ws.rope_cos.resize(L, dh / 2);
        ws.rope_sin.resize(L, dh / 2);
        for (int r = 0; r < L; ++r)
            for (int j = 0; j < dh / 2; ++j) {
                const double theta = r * std::pow(kRopeBase, -2.0 * j / dh);
                ws.rope_cos(r, j) = std::cos(theta);
                ws.rope_sin(r, j) = std::sin(theta);
            }
    }

    // timestep embedding: random Fourier features of log t through a 2-layer MLP
    ws.tfeat.resize(1, ff);
    const double z = std::log(in.t);
    const double* freqs = store_.data(time_freqs_);
    for (int j = 0; j < ff / 2; ++j) {
        ws.tfeat(0, 2 * j) = std::cos(freqs[j] * z);
        ws.tfeat(0, 2 * j + 1) = std::sin(freqs[j] * z);
    }
    linear(ws.tfeat, store_.data(time_w1_), store_.data(time_b1_), tw, ws.th_pre);
    ws.th_act.resize(1, tw);
    for (int j = 0; j < tw; ++j) ws.th_act(0, j) = gelu(ws.th_pre(0, j));
    linear(ws.th_act, store_.data(time_w2_), store_.data(time_b2_), tw, ws.ht);

    // per-position concatenation [x / sqrt(t^2+1) | c | p | mask]
    ws.x_scale = 1.0 / std::sqrt(in.t * in.t + 1.0);
    ws.in_cat.resize(L, in_dim);
    for (int r = 0; r < L; ++r) {
        double* row = ws.in_cat.row_ptr(r);
        const double* x = in.x.row_ptr(r);
        const double* c = in.c.row_ptr(r);
        const double* p = in.p.row_ptr(r);
        for (int j = 0; j < d; ++j) row[j] = x[j] * ws.x_scale;
        for (int j = 0; j < d; ++j) row[d + j] = c[j];
        for (int j = 0; j < d; ++j) row[2 * d + j] = p[j];
        row[3 * d] = in.mask[static_cast<size_t>(r)];
    }
    linear(ws.in_cat, store_.data(in_w_), store_.data(in_b_), w, ws.stream0);

    const Mat* stream = &ws.stream0;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int b = 0; b < cfg_.blocks; ++b) {
        const BlockOffsets& o = blk_[static_cast<size_t>(b)];
        Workspace::BlockWs& bw = ws.blocks[static_cast<size_t>(b)];

        layer_norm(*stream, bw.ln1_xhat, bw.ln1_inv);
        linear(ws.ht, store_.data(o.film1_w), store_.data(o.film1_b), 2 * w, bw.film1_sb);
        film(bw.ln1_xhat, bw.film1_sb, bw.film1_out);

        linear(bw.film1_out, store_.data(o.wq), store_.data(o.bq), w, bw.q);
        linear(bw.film1_out, store_.data(o.wk), store_.data(o.bk), w, bw.k);
        linear(bw.film1_out, store_.data(o.wv), store_.data(o.bv), w, bw.v);

        // rotary position encoding on q and k, applied per head pair
        for (Mat* qk : {&bw.q, &bw.k}) {
            for (int r = 0; r < L; ++r) {
                double* row = qk->row_ptr(r);
                for (int h = 0; h < heads; ++h) {
                    double* hp = row + h * dh;
                    for (int j = 0; j < dh / 2; ++j) {
                        const double cs = ws.rope_cos(r, j), sn = ws.rope_sin(r, j);
                        const double a = hp[2 * j], bv = hp[2 * j + 1];
                        hp[2 * j] = a * cs - bv * sn;
                        hp[2 * j + 1] = a * sn + bv * cs;
                    }
                }
            }
        }

        bw.probs.resize(heads * L, L);
        bw.ctx.resize(L, w);
        bw.ctx.zero();
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            for (int r1 = 0; r1 < L; ++r1) {
                double* prow = bw.probs.row_ptr(h * L + r1);
                const double* qrow = bw.q.row_ptr(r1) + off;
                for (int r2 = 0; r2 < L; ++r2) {
                    const double* krow = bw.k.row_ptr(r2) + off;
                    double s = 0.0;
                    for (int j = 0; j < dh; ++j) s += qrow[j] * krow[j];
                    prow[r2] = s * att_scale;
                }
                double mx = prow[0];
                for (int r2 = 1; r2 < L; ++r2) mx = std::max(mx, prow[r2]);
                double sum = 0.0;
                for (int r2 = 0; r2 < L; ++r2) {
                    prow[r2] = std::exp(prow[r2] - mx);
                    sum += prow[r2];
                }
                for (int r2 = 0; r2 < L; ++r2) prow[r2] /= sum;
                double* crow = bw.ctx.row_ptr(r1) + off;
                for (int r2 = 0; r2 < L; ++r2) {
                    const double p = prow[r2];
                    const double* vrow = bw.v.row_ptr(r2) + off;
                    for (int j = 0; j < dh; ++j) crow[j] += p * vrow[j];
                }
            }
        }
        linear(bw.ctx, store_.data(o.wo), store_.data(o.bo), w, bw.att_out);
        bw.res1.resize(L, w);
        for (size_t i = 0; i < bw.res1.size(); ++i) bw.res1.a[i] = stream->a[i] + bw.att_out.a[i];

        layer_norm(bw.res1, bw.ln2_xhat, bw.ln2_inv);
        linear(ws.ht, store_.data(o.film2_w), store_.data(o.film2_b), 2 * w, bw.film2_sb);
        film(bw.ln2_xhat, bw.film2_sb, bw.film2_out);

        linear(bw.film2_out, store_.data(o.mlp_w1), store_.data(o.mlp_b1), 4 * w, bw.mlp_pre);
        bw.mlp_act.resize(L, 4 * w);
        for (size_t i = 0; i < bw.mlp_pre.size(); ++i) bw.mlp_act.a[i] = gelu(bw.mlp_pre.a[i]);
        linear(bw.mlp_act, store_.data(o.mlp_w2), store_.data(o.mlp_b2), w, bw.mlp_out);

        bw.res2.resize(L, w);
        for (size_t i = 0; i < bw.res2.size(); ++i) bw.res2.a[i] = bw.res1.a[i] + bw.mlp_out.a[i];
        if (!all_finite(bw.res2))
            throw std::runtime_error("LearnedDenoiser: non-finite activations in block " +
                                     std::to_string(b));
        stream = &bw.res2;
    }

    layer_norm(*stream, ws.lnf_xhat, ws.lnf_inv);
    linear(ws.ht, store_.data(film_out_w_), store_.data(film_out_b_), 2 * w, ws.filmf_sb);
    film(ws.lnf_xhat, ws.filmf_sb, ws.filmf_out);
    linear(ws.filmf_out, store_.data(ro_w_), store_.data(ro_b_), cfg_.vocab, ws.logits);
    if (!all_finite(ws.logits))
        throw std::runtime_error("LearnedDenoiser: non-finite activations in readout");
    return ws.logits;
}

void LearnedDenoiser::backward(Workspace& ws, const Mat& dlogits, std::span<double> param_grad,
                               Mat* grad_x, Mat* grad_c) const {
    const int L = ws.seq_len;
    const int w = cfg_.width;
    const int d = cfg_.d;
    const int heads = cfg_.heads;
    const int dh = w / heads;
    const int tw = cfg_.time_mlp_width;
    if (param_grad.size() != store_.size())
        throw std::invalid_argument("backward: param_grad size mismatch");
    if (dlogits.rows != L || dlogits.cols != cfg_.vocab)
        throw std::invalid_argument("backward: dlogits shape mismatch");

    auto g = [&](size_t off) { return param_grad.data() + off; };

    ws.d_ht_acc.resize(1, tw);
    ws.d_ht_acc.zero();

    // readout, final film and final layer norm
    Mat dfilmf;
    linear_backward(ws.filmf_out, store_.data(ro_w_), cfg_.vocab, dlogits, g(ro_w_), g(ro_b_), &dfilmf);
    Mat dlnf_xhat, dsbf;
    film_backward(ws.lnf_xhat, ws.filmf_sb, dfilmf, dlnf_xhat, dsbf);
    {
        Mat dht;
        linear_backward(ws.ht, store_.data(film_out_w_), 2 * w, dsbf, g(film_out_w_), g(film_out_b_),
                        &dht);
        for (int j = 0; j < tw; ++j) ws.d_ht_acc(0, j) += dht(0, j);
    }
    Mat dstream(L, w);
    layer_norm_backward(ws.lnf_xhat, ws.lnf_inv, dlnf_xhat, dstream);

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int b = cfg_.blocks - 1; b >= 0; --b) {
        const BlockOffsets& o = blk_[static_cast<size_t>(b)];
        Workspace::BlockWs& bw = ws.blocks[static_cast<size_t>(b)];

        // res2 = res1 + mlp(film2(ln2(res1)))
        Mat dact;
        linear_backward(bw.mlp_act, store_.data(o.mlp_w2), w, dstream, g(o.mlp_w2), g(o.mlp_b2), &dact);
        for (size_t i = 0; i < dact.size(); ++i) dact.a[i] *= gelu_grad(bw.mlp_pre.a[i]);
        Mat dfilm2;
        linear_backward(bw.film2_out, store_.data(o.mlp_w1), 4 * w, dact, g(o.mlp_w1), g(o.mlp_b1),
                        &dfilm2);
        Mat dln2_xhat, dsb2;
        film_backward(bw.ln2_xhat, bw.film2_sb, dfilm2, dln2_xhat, dsb2);
        {
            Mat dht;
            linear_backward(ws.ht, store_.data(o.film2_w), 2 * w, dsb2, g(o.film2_w), g(o.film2_b), &dht);
            for (int j = 0; j < tw; ++j) ws.d_ht_acc(0, j) += dht(0, j);
        }
        Mat dres1 = dstream;
        layer_norm_backward(bw.ln2_xhat, bw.ln2_inv, dln2_xhat, dres1);

        // res1 = stream_in + attn(film1(ln1(stream_in)))
        Mat dctx;
        linear_backward(bw.ctx, store_.data(o.wo), w, dres1, g(o.wo), g(o.bo), &dctx);
        Mat dq(L, w), dk(L, w), dv(L, w);
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            Mat dp(L, L);
            for (int r1 = 0; r1 < L; ++r1) {
                const double* dctx_r = dctx.row_ptr(r1) + off;
                const double* prow = bw.probs.row_ptr(h * L + r1);
                double* dprow = dp.row_ptr(r1);
                for (int r2 = 0; r2 < L; ++r2) {
                    const double* vrow = bw.v.row_ptr(r2) + off;
                    double s = 0.0;
                    for (int j = 0; j < dh; ++j) s += dctx_r[j] * vrow[j];
                    dprow[r2] = s;
                    double* dvrow = dv.row_ptr(r2) + off;
                    const double p = prow[r2];
                    for (int j = 0; j < dh; ++j) dvrow[j] += p * dctx_r[j];
                }
            }
            for (int r1 = 0; r1 < L; ++r1) {
                const double* prow = bw.probs.row_ptr(h * L + r1);
                double* dprow = dp.row_ptr(r1);
                double dot_pp = 0.0;
                for (int r2 = 0; r2 < L; ++r2) dot_pp += dprow[r2] * prow[r2];
                for (int r2 = 0; r2 < L; ++r2) dprow[r2] = prow[r2] * (dprow[r2] - dot_pp);
            }
            for (int r1 = 0; r1 < L; ++r1) {
                const double* dsrow = dp.row_ptr(r1);
                double* dqrow = dq.row_ptr(r1) + off;
                const double* qrow = bw.q.row_ptr(r1) + off;
                for (int r2 = 0; r2 < L; ++r2) {
                    const double gs = dsrow[r2] * att_scale;
                    const double* krow = bw.k.row_ptr(r2) + off;
                    double* dkrow = dk.row_ptr(r2) + off;
                    for (int j = 0; j < dh; ++j) {
                        dqrow[j] += gs * krow[j];
                        dkrow[j] += gs * qrow[j];
                    }
                }
            }
        }
        // inverse rotation on dq, dk
        for (Mat* m : {&dq, &dk}) {
            for (int r = 0; r < L; ++r) {
                double* row = m->row_ptr(r);
                for (int h = 0; h < heads; ++h) {
                    double* hp = row + h * dh;
                    for (int j = 0; j < dh / 2; ++j) {
                        const double cs = ws.rope_cos(r, j), sn = ws.rope_sin(r, j);
                        const double a = hp[2 * j], bv = hp[2 * j + 1];
                        hp[2 * j] = a * cs + bv * sn;
                        hp[2 * j + 1] = -a * sn + bv * cs;
                    }
                }
            }
        }
        Mat dfilm1(L, w), tmp;
        linear_backward(bw.film1_out, store_.data(o.wq), w, dq, g(o.wq), g(o.bq), &tmp);
        for (size_t i = 0; i < tmp.size(); ++i) dfilm1.a[i] += tmp.a[i];
        linear_backward(bw.film1_out, store_.data(o.wk), w, dk, g(o.wk), g(o.bk), &tmp);
        for (size_t i = 0; i < tmp.size(); ++i) dfilm1.a[i] += tmp.a[i];
        linear_backward(bw.film1_out, store_.data(o.wv), w, dv, g(o.wv), g(o.bv), &tmp);
        for (size_t i = 0; i < tmp.size(); ++i) dfilm1.a[i] += tmp.a[i];
        Mat dln1_xhat, dsb1;
        film_backward(bw.ln1_xhat, bw.film1_sb, dfilm1, dln1_xhat, dsb1);
        {
            Mat dht;
            linear_backward(ws.ht, store_.data(o.film1_w), 2 * w, dsb1, g(o.film1_w), g(o.film1_b), &dht);
            for (int j = 0; j < tw; ++j) ws.d_ht_acc(0, j) += dht(0, j);
        }
        layer_norm_backward(bw.ln1_xhat, bw.ln1_inv, dln1_xhat, dres1);
        dstream = std::move(dres1);
    }

    // input projection and channel split
    linear_backward(ws.in_cat, store_.data(in_w_), w, dstream, g(in_w_), g(in_b_), &ws.d_in_cat);
    if (grad_x != nullptr || grad_c != nullptr) {
        if (grad_x != nullptr) grad_x->resize(L, d);
        if (grad_c != nullptr) grad_c->resize(L, d);
        for (int r = 0; r < L; ++r) {
            const double* gr = ws.d_in_cat.row_ptr(r);
            if (grad_x != nullptr) {
                double* gx = grad_x->row_ptr(r);
                for (int j = 0; j < d; ++j) gx[j] = gr[j] * ws.x_scale;
            }
            if (grad_c != nullptr) {
                double* gc = grad_c->row_ptr(r);
                for (int j = 0; j < d; ++j) gc[j] = gr[d + j];
            }
        }
    }

    // time MLP (the Fourier features are frozen)
    Mat dth_act;
    linear_backward(ws.th_act, store_.data(time_w2_), tw, ws.d_ht_acc, g(time_w2_), g(time_b2_),
                    &dth_act);
    for (int j = 0; j < tw; ++j) dth_act(0, j) *= gelu_grad(ws.th_pre(0, j));
    linear_backward(ws.tfeat, store_.data(time_w1_), tw, dth_act, g(time_w1_), g(time_b1_), nullptr);
}

}  // namespace cdcd
