#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cdcd/params.hpp"

namespace cdcd {

// Regularized incomplete beta function (the Beta(a, b) CDF), evaluated by
// adaptive tanh-sinh quadrature of the density. a, b > 0.
double beta_cdf(double u, double a, double b, double tol = 1e-8);
double beta_pdf(double u, double a, double b);

// Monotone piecewise-linear CDF on [0,1], parameterized by two logit sets.
// Softmax of the input logits gives input bin widths; output widths come from
// softmax (normalized view F) or elementwise exp (unnormalised view F~).
// A small floor min_bin keeps every normalized width strictly positive. With
// all logits at -log(N) the CDF is the identity and F~ coincides with F.
//
// Sampling-facing evaluations (sample_timestep, sampling_importance_weight)
// run on an EMA shadow of the logits, updated after every fit step.
class WarpCdf {
 public:
    WarpCdf() = default;
    WarpCdf(int n_bins, double min_bin, double t_min, double t_max, double ema_decay);

    // Builds a warp with these exact normalized widths (no floor applied).
    // Used by tests and by the temperature/uniformity manipulations.
    static WarpCdf from_widths(std::vector<double> input_widths,
                               std::vector<double> output_widths, double t_min, double t_max);

    int n_bins() const { return n_bins_; }
    double min_bin() const { return min_bin_; }
    double t_min() const { return t_min_; }
    double t_max() const { return t_max_; }
    double ema_decay() const { return ema_decay_; }

    std::span<const double> input_logits() const { return lt_; }
    std::span<const double> output_logits() const { return lu_; }
    std::span<const double> ema_input_logits() const { return ema_lt_; }
    std::span<const double> ema_output_logits() const { return ema_lu_; }
    std::span<const double> input_widths() const { return wt_; }
    std::span<const double> output_widths() const { return wu_; }

    // Restores logits (e.g. from a checkpoint) and recomputes the caches.
    void load_state(std::span<const double> lt, std::span<const double> lu,
                    std::span<const double> ema_lt, std::span<const double> ema_lu);

    // (t - t_min) / (t_max - t_min); throws when t is outside [t_min, t_max].
    double normalize_time(double t) const;
    // t_min + (t_max - t_min) * tp, clamped into [t_min, t_max].
    double denormalize_time(double tp) const;

    // Piecewise-linear interpolation over cumulative bin edges; tp in [0, 1].
    double eval_cdf(double tp, bool normalized) const;
    // Inverse of the normalized CDF (input and output roles swapped).
    double invert_cdf(double u) const;
    // Density of the warped distribution: output/input width ratio per bin.
    double pdf(double tp) const;
    // 1 / pdf(tp). Carries no gradient by construction.
    double importance_weight(double tp) const;

    // t = t_min + (t_max - t_min) * invert_cdf_ema(u).
    double sample_timestep(double u) const;
    // Importance weight of the distribution sample_timestep actually draws from.
    double sampling_importance_weight(double tp) const;
    // Snapshot whose current logits are the EMA shadow.
    WarpCdf ema_view() const;

    // Output widths scaled by (w_u/w_t)^(1/T - 1), renormalized.
    WarpCdf temperature(double T) const;
    // Output widths mixed with the input widths: (1-mu) w_u + mu w_t.
    WarpCdf uniformity(double mu) const;

    struct FitStats {
        int dropped_nonfinite = 0;
        int used = 0;
        double objective = 0.0;
    };

    // One optimizer step on the importance-weighted MSE between the
    // (shape-adjusted) unnormalised CDF and per-sequence losses, then the EMA
    // shadow update. ts are raw timesteps in [t_min, t_max]. Non-finite losses
    // are dropped and counted. Empty (or fully dropped) input is a no-op.
    FitStats fit_step(std::span<const double> ts, std::span<const double> losses,
                      std::span<const double> weights,
                      std::optional<std::pair<double, double>> shape, AdamState& opt);

    // Objective recomputed from the current logits; used by fit_step and by
    // gradient checks. Gradients accumulate into glt/glu when non-empty.
    double fit_objective_grad(std::span<const double> ts, std::span<const double> losses,
                              std::span<const double> weights,
                              std::optional<std::pair<double, double>> shape,
                              std::span<double> glt, std::span<double> glu,
                              int* dropped = nullptr) const;

    std::span<double> mutable_input_logits() { return lt_; }
    std::span<double> mutable_output_logits() { return lu_; }
    void refresh();

 private:
    int n_bins_ = 0;
    double min_bin_ = 0.0;
    double t_min_ = 0.0;
    double t_max_ = 1.0;
    double ema_decay_ = 0.0;

    std::vector<double> lt_, lu_;
    std::vector<double> ema_lt_, ema_lu_;

    // Derived tables. Edges have n_bins+1 entries; the last normalized edge is
    // exactly 1 and the last width absorbs the rounding.
    std::vector<double> wt_, cum_t_;
    std::vector<double> wu_, cum_u_;
    std::vector<double> wtilde_, cum_tilde_;
    std::vector<double> ema_wt_, ema_cum_t_, ema_wu_, ema_cum_u_;

    bool widths_override_ = false;  // set by from_widths: caches are canonical

    void compute_tables(std::span<const double> lt, std::span<const double> lu,
                        std::vector<double>& wt, std::vector<double>& cum_t,
                        std::vector<double>& wu, std::vector<double>& cum_u,
                        std::vector<double>* wtilde, std::vector<double>* cum_tilde) const;
};

}  // namespace cdcd
