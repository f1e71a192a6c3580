#include "cdcd/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cdcd/numerics.hpp"

namespace cdcd {

namespace {

constexpr double kFFloor = 1e-6;  // guards F~/F in the shaped objective

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Normalize raw positive widths to sum exactly 1: edges are prefix sums with
// the final edge forced to 1, and the last width absorbs the rounding.
void normalize_widths(std::vector<double>& w, std::vector<double>& cum) {
    const int n = static_cast<int>(w.size());
    double total = 0.0;
    for (double x : w) {
        if (!(x > 0.0)) throw std::invalid_argument("WarpCdf: widths must be strictly positive");
        total += x;
    }
    for (double& x : w) x /= total;
    cum.assign(static_cast<size_t>(n) + 1, 0.0);
    for (int i = 0; i < n; ++i) cum[static_cast<size_t>(i) + 1] = cum[static_cast<size_t>(i)] + w[static_cast<size_t>(i)];
    cum[static_cast<size_t>(n)] = 1.0;
    w[static_cast<size_t>(n) - 1] = 1.0 - cum[static_cast<size_t>(n) - 1];
}

std::vector<double> softmax_vec(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i] - lse);
    return out;
}

// Index n with cum[n] <= x < cum[n+1]; x >= cum[last] maps into the last bin.
int locate_bin(const std::vector<double>& cum, double x) {
    const int n = static_cast<int>(cum.size()) - 1;
    int lo = 0, hi = n;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        if (cum[static_cast<size_t>(mid)] <= x)
            lo = mid;
        else
            hi = mid;
    }
    return std::min(lo, n - 1);
}

}  // namespace

double beta_pdf(double u, double a, double b) {
    if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("beta_pdf: a, b must be positive");
    if (u <= 0.0 || u >= 1.0) {
        // Limits: finite only when the exponent is non-negative.
        if (u <= 0.0) return a > 1.0 ? 0.0 : (a == 1.0 ? std::exp(-log_beta_fn(a, b)) : HUGE_VAL);
        return b > 1.0 ? 0.0 : (b == 1.0 ? std::exp(-log_beta_fn(a, b)) : HUGE_VAL);
    }
    return std::exp((a - 1.0) * std::log(u) + (b - 1.0) * std::log1p(-u) - log_beta_fn(a, b));
}

double beta_cdf(double u, double a, double b, double tol) {
    if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("beta_cdf: a, b must be positive");
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;

    // tanh-sinh quadrature of x^(a-1) (1-x)^(b-1) over [0, u]:
    // x(s) = (u/2)(1 + tanh((pi/2) sinh s)); nodes cluster double-exponentially
    // at both ends, which absorbs the endpoint singularities for a, b < 1.
    const double half = 0.5 * u;
    auto node_term = [&](double s) -> double {
        const double t = 1.5707963267948966 * std::sinh(s);
        const double sech = 1.0 / std::cosh(t);
        const double x = half * (1.0 + std::tanh(t));
        if (x <= 0.0 || x >= 1.0) return 0.0;
        const double w = half * 1.5707963267948966 * std::cosh(s) * sech * sech;
        return w * std::pow(x, a - 1.0) * std::pow(1.0 - x, b - 1.0);
    };

    const double s_max = 4.0;
    double h = 0.5;
    double sum = node_term(0.0);
    for (int k = 1; k * h <= s_max; ++k) sum += node_term(k * h) + node_term(-k * h);
    double integral = h * sum;

    for (int level = 0; level < 10; ++level) {
        // Refine by adding midpoints of the current grid.
        double mid_sum = 0.0;
        const double h2 = 0.5 * h;
        for (int k = 0; k * h + h2 <= s_max; ++k)
            mid_sum += node_term(k * h + h2) + node_term(-(k * h + h2));
        const double refined = 0.5 * integral + h2 * mid_sum;
        const bool converged = std::abs(refined - integral) <= tol * std::max(std::abs(refined), 1e-300);
        integral = refined;
        h = h2;
        if (converged && level >= 1) break;
    }
    const double cdf = integral * std::exp(-log_beta_fn(a, b));
    return std::clamp(cdf, 0.0, 1.0);
}

WarpCdf::WarpCdf(int n_bins, double min_bin, double t_min, double t_max, double ema_decay)
    : n_bins_(n_bins), min_bin_(min_bin), t_min_(t_min), t_max_(t_max), ema_decay_(ema_decay) {
    if (n_bins < 1) throw std::invalid_argument("WarpCdf: n_bins must be >= 1");
    if (!(t_max > t_min)) throw std::invalid_argument("WarpCdf: t_max must exceed t_min");
    if (min_bin < 0.0) throw std::invalid_argument("WarpCdf: min_bin must be non-negative");
    if (ema_decay < 0.0 || ema_decay >= 1.0) throw std::invalid_argument("WarpCdf: ema_decay in [0,1)");
    const double init = -std::log(static_cast<double>(n_bins));
    lt_.assign(static_cast<size_t>(n_bins), init);
    lu_.assign(static_cast<size_t>(n_bins), init);
    ema_lt_ = lt_;
    ema_lu_ = lu_;
    refresh();
}

WarpCdf WarpCdf::from_widths(std::vector<double> input_widths, std::vector<double> output_widths,
                             double t_min, double t_max) {
    if (input_widths.size() != output_widths.size() || input_widths.empty())
        throw std::invalid_argument("WarpCdf::from_widths: width count mismatch");
    WarpCdf w;
    w.n_bins_ = static_cast<int>(input_widths.size());
    w.min_bin_ = 0.0;
    w.t_min_ = t_min;
    w.t_max_ = t_max;
    w.ema_decay_ = 0.0;
    if (!(t_max > t_min)) throw std::invalid_argument("WarpCdf::from_widths: t_max must exceed t_min");

    w.wt_ = std::move(input_widths);
    w.wu_ = std::move(output_widths);
    normalize_widths(w.wt_, w.cum_t_);
    normalize_widths(w.wu_, w.cum_u_);
    w.lt_.resize(w.wt_.size());
    w.lu_.resize(w.wu_.size());
    for (size_t i = 0; i < w.wt_.size(); ++i) w.lt_[i] = std::log(w.wt_[i]);
    for (size_t i = 0; i < w.wu_.size(); ++i) w.lu_[i] = std::log(w.wu_[i]);
    w.ema_lt_ = w.lt_;
    w.ema_lu_ = w.lu_;
    // The unnormalised view of a derived warp coincides with the normalized one.
    w.wtilde_ = w.wu_;
    w.cum_tilde_ = w.cum_u_;
    w.ema_wt_ = w.wt_;
    w.ema_cum_t_ = w.cum_t_;
    w.ema_wu_ = w.wu_;
    w.ema_cum_u_ = w.cum_u_;
    w.widths_override_ = true;
    return w;
}

void WarpCdf::compute_tables(std::span<const double> lt, std::span<const double> lu,
                             std::vector<double>& wt, std::vector<double>& cum_t,
                             std::vector<double>& wu, std::vector<double>& cum_u,
                             std::vector<double>* wtilde, std::vector<double>* cum_tilde) const {
    const int n = n_bins_;
    const double denom = 1.0 + n * min_bin_;
    wt = softmax_vec(lt);
    for (double& x : wt) x = (x + min_bin_) / denom;
    normalize_widths(wt, cum_t);
    wu = softmax_vec(lu);
    for (double& x : wu) x = (x + min_bin_) / denom;
    normalize_widths(wu, cum_u);
    if (wtilde != nullptr) {
        wtilde->resize(static_cast<size_t>(n));
        cum_tilde->assign(static_cast<size_t>(n) + 1, 0.0);
        for (int i = 0; i < n; ++i) {
            (*wtilde)[static_cast<size_t>(i)] = std::exp(lu[static_cast<size_t>(i)]);
            (*cum_tilde)[static_cast<size_t>(i) + 1] =
                (*cum_tilde)[static_cast<size_t>(i)] + (*wtilde)[static_cast<size_t>(i)];
        }
    }
}

void WarpCdf::refresh() {
    if (widths_override_) return;
    compute_tables(lt_, lu_, wt_, cum_t_, wu_, cum_u_, &wtilde_, &cum_tilde_);
    compute_tables(ema_lt_, ema_lu_, ema_wt_, ema_cum_t_, ema_wu_, ema_cum_u_, nullptr, nullptr);
}

void WarpCdf::load_state(std::span<const double> lt, std::span<const double> lu,
                         std::span<const double> ema_lt, std::span<const double> ema_lu) {
    if (static_cast<int>(lt.size()) != n_bins_ || static_cast<int>(lu.size()) != n_bins_ ||
        static_cast<int>(ema_lt.size()) != n_bins_ || static_cast<int>(ema_lu.size()) != n_bins_)
        throw std::invalid_argument("WarpCdf::load_state: size mismatch");
    lt_.assign(lt.begin(), lt.end());
    lu_.assign(lu.begin(), lu.end());
    ema_lt_.assign(ema_lt.begin(), ema_lt.end());
    ema_lu_.assign(ema_lu.begin(), ema_lu.end());
    refresh();
}

double WarpCdf::normalize_time(double t) const {
    if (t < t_min_ || t > t_max_)
        throw std::invalid_argument("normalize_time: t outside [t_min, t_max]");
    return std::clamp((t - t_min_) / (t_max_ - t_min_), 0.0, 1.0);
}

double WarpCdf::denormalize_time(double tp) const {
    return std::clamp(t_min_ + (t_max_ - t_min_) * tp, t_min_, t_max_);
}

double WarpCdf::eval_cdf(double tp, bool normalized) const {
    if (tp < 0.0 || tp > 1.0) throw std::invalid_argument("eval_cdf: t' outside [0,1]");
    const int n = locate_bin(cum_t_, tp);
    const double r = (tp - cum_t_[static_cast<size_t>(n)]) / wt_[static_cast<size_t>(n)];
    if (normalized) return cum_u_[static_cast<size_t>(n)] + wu_[static_cast<size_t>(n)] * r;
    return cum_tilde_[static_cast<size_t>(n)] + wtilde_[static_cast<size_t>(n)] * r;
}

double WarpCdf::invert_cdf(double u) const {
    if (u < 0.0 || u > 1.0) throw std::invalid_argument("invert_cdf: u outside [0,1]");
    const int n = locate_bin(cum_u_, u);
    const double r = (u - cum_u_[static_cast<size_t>(n)]) / wu_[static_cast<size_t>(n)];
    return std::clamp(cum_t_[static_cast<size_t>(n)] + wt_[static_cast<size_t>(n)] * r, 0.0, 1.0);
}

double WarpCdf::pdf(double tp) const {
    if (tp < 0.0 || tp > 1.0) throw std::invalid_argument("pdf: t' outside [0,1]");
    const int n = locate_bin(cum_t_, tp);
    return wu_[static_cast<size_t>(n)] / wt_[static_cast<size_t>(n)];
}

double WarpCdf::importance_weight(double tp) const { return 1.0 / pdf(tp); }

double WarpCdf::sample_timestep(double u) const {
    if (u < 0.0 || u > 1.0) throw std::invalid_argument("sample_timestep: u outside [0,1]");
    const int n = locate_bin(ema_cum_u_, u);
    const double r = (u - ema_cum_u_[static_cast<size_t>(n)]) / ema_wu_[static_cast<size_t>(n)];
    const double tp = std::clamp(ema_cum_t_[static_cast<size_t>(n)] + ema_wt_[static_cast<size_t>(n)] * r, 0.0, 1.0);
    return denormalize_time(tp);
}

double WarpCdf::sampling_importance_weight(double tp) const {
    if (tp < 0.0 || tp > 1.0) throw std::invalid_argument("sampling_importance_weight: t' outside [0,1]");
    const int n = locate_bin(ema_cum_t_, tp);
    return ema_wt_[static_cast<size_t>(n)] / ema_wu_[static_cast<size_t>(n)];
}

WarpCdf WarpCdf::ema_view() const {
    WarpCdf v = *this;
    v.widths_override_ = false;
    v.lt_ = ema_lt_;
    v.lu_ = ema_lu_;
    v.refresh();
    return v;
}

WarpCdf WarpCdf::temperature(double T) const {
    if (T <= 0.0) throw std::invalid_argument("temperature: T must be positive");
    const double expo = 1.0 / T - 1.0;
    std::vector<double> out(wu_.size());
    for (size_t i = 0; i < wu_.size(); ++i) out[i] = wu_[i] * std::pow(wu_[i] / wt_[i], expo);
    return from_widths(wt_, std::move(out), t_min_, t_max_);
}

WarpCdf WarpCdf::uniformity(double mu) const {
    if (mu < 0.0 || mu > 1.0) throw std::invalid_argument("uniformity: mu outside [0,1]");
    std::vector<double> out(wu_.size());
    for (size_t i = 0; i < wu_.size(); ++i) out[i] = (1.0 - mu) * wu_[i] + mu * wt_[i];
    return from_widths(wt_, std::move(out), t_min_, t_max_);
}

double WarpCdf::fit_objective_grad(std::span<const double> ts, std::span<const double> losses,
                                   std::span<const double> weights,
                                   std::optional<std::pair<double, double>> shape,
                                   std::span<double> glt, std::span<double> glu,
                                   int* dropped) const {
    if (ts.size() != losses.size() || ts.size() != weights.size())
        throw std::invalid_argument("fit_objective_grad: length mismatch");
    const bool want_grad = !glt.empty();
    if (want_grad && (glt.size() != lt_.size() || glu.size() != lu_.size()))
        throw std::invalid_argument("fit_objective_grad: gradient span size mismatch");

    const int n = n_bins_;
    const double denom = 1.0 + n * min_bin_;
    // Fresh tables from the current logits so perturbed logits are honored.
    const std::vector<double> s = softmax_vec(lt_);
    const std::vector<double> v = softmax_vec(lu_);
    std::vector<double> wt(s), vu(v);
    for (double& x : wt) x = (x + min_bin_) / denom;
    for (double& x : vu) x = (x + min_bin_) / denom;
    std::vector<double> cum_t(static_cast<size_t>(n) + 1, 0.0), cum_v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<double> eu(static_cast<size_t>(n)), cum_e(static_cast<size_t>(n) + 1, 0.0);
    for (int i = 0; i < n; ++i) {
        cum_t[static_cast<size_t>(i) + 1] = cum_t[static_cast<size_t>(i)] + wt[static_cast<size_t>(i)];
        cum_v[static_cast<size_t>(i) + 1] = cum_v[static_cast<size_t>(i)] + vu[static_cast<size_t>(i)];
        eu[static_cast<size_t>(i)] = std::exp(lu_[static_cast<size_t>(i)]);
        cum_e[static_cast<size_t>(i) + 1] = cum_e[static_cast<size_t>(i)] + eu[static_cast<size_t>(i)];
    }

    int kept = 0;
    for (size_t i = 0; i < ts.size(); ++i)
        if (std::isfinite(losses[i])) ++kept;
    if (dropped != nullptr) *dropped = static_cast<int>(ts.size()) - kept;
    if (kept == 0) return 0.0;

    double objective = 0.0;
    for (size_t i = 0; i < ts.size(); ++i) {
        if (!std::isfinite(losses[i])) continue;
        const double tp = normalize_time(ts[i]);
        const int bin = locate_bin(cum_t, tp);
        const size_t b = static_cast<size_t>(bin);
        const double r = (tp - cum_t[b]) / wt[b];
        const double ft = cum_e[b] + eu[b] * r;
        const double fn = cum_v[b] + vu[b] * r;

        double pred, dpred_dft, dpred_dfn;
        if (shape.has_value()) {
            const double fc = std::max(fn, kFFloor);
            const double u_arg = std::clamp(fn, 0.0, 1.0);
            const double sv = beta_cdf(u_arg, shape->first, shape->second);
            const double sp = beta_pdf(std::clamp(fn, 1e-12, 1.0 - 1e-12), shape->first, shape->second);
            pred = sv * ft / fc;
            dpred_dft = sv / fc;
            dpred_dfn = ft * (sp / fc - (fn > kFFloor ? sv / (fc * fc) : 0.0));
        } else {
            pred = ft;
            dpred_dft = 1.0;
            dpred_dfn = 0.0;
        }

        const double resid = pred - losses[i];
        objective += weights[i] * resid * resid / kept;
        if (!want_grad) continue;

        const double gof = 2.0 * weights[i] * resid / kept;
        const double gft = gof * dpred_dft;
        const double gfn = gof * dpred_dfn;

        // F~ path: dF~/dlu_m = [m<bin] eu_m + [m==bin] eu_bin r.
        for (int m = 0; m < bin; ++m) glu[static_cast<size_t>(m)] += gft * eu[static_cast<size_t>(m)];
        glu[b] += gft * eu[b] * r;

        // F path through the floored softmax output widths.
        if (gfn != 0.0) {
            double qv = 0.0;
            for (int m = 0; m < bin; ++m) qv += v[static_cast<size_t>(m)];
            qv += v[b] * r;
            for (int k = 0; k < n; ++k) {
                const double qk = k < bin ? 1.0 : (k == bin ? r : 0.0);
                glu[static_cast<size_t>(k)] += gfn * v[static_cast<size_t>(k)] * (qk - qv) / denom;
            }
        }

        // r path through the input widths: dr/dwt_m = -p_m / wt_bin.
        const double gr = gft * eu[b] + gfn * vu[b];
        if (gr != 0.0) {
            double ps = 0.0;
            for (int m = 0; m < bin; ++m) ps += s[static_cast<size_t>(m)];
            ps += s[b] * r;
            const double f = -gr / wt[b] / denom;
            for (int k = 0; k < n; ++k) {
                const double pk = k < bin ? 1.0 : (k == bin ? r : 0.0);
                glt[static_cast<size_t>(k)] += f * s[static_cast<size_t>(k)] * (pk - ps);
            }
        }
    }
    return objective;
}

WarpCdf::FitStats WarpCdf::fit_step(std::span<const double> ts, std::span<const double> losses,
                                    std::span<const double> weights,
                                    std::optional<std::pair<double, double>> shape, AdamState& opt) {
    if (widths_override_)
        throw std::logic_error("fit_step: warp built from explicit widths is not trainable");
    FitStats stats;
    std::vector<double> glt(lt_.size(), 0.0), glu(lu_.size(), 0.0);
    stats.objective = fit_objective_grad(ts, losses, weights, shape, glt, glu, &stats.dropped_nonfinite);
    stats.used = static_cast<int>(ts.size()) - stats.dropped_nonfinite;
    if (stats.used == 0) return stats;

    std::span<double> params[2] = {lt_, lu_};
    std::span<const double> grads[2] = {glt, glu};
    opt.step(std::span<std::span<double>>(params, 2), std::span<std::span<const double>>(grads, 2));

    ema_update(ema_lt_, lt_, ema_decay_);
    ema_update(ema_lu_, lu_, ema_decay_);
    refresh();
    return stats;
}

}  // namespace cdcd
