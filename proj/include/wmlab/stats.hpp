#pragma once

#include <functional>
#include <utility>

#include "wmlab/core.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

struct MarkovModel;

namespace schemes {
class WatermarkScheme;
}

namespace stats {

// Point estimate of a rate with its 95% Clopper-Pearson interval.
struct RateEstimate {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 1.0;
    long trials = 0;
    long successes = 0;
    long errors = 0;  // excluded from the rate (e.g. generation failures)
};

// Lower binomial tail sum_{k=0}^{t - t_err - 1} C(t,k) eps^k (1-eps)^(t-k),
// evaluated term-by-term in log space so it stays exact up to t ~ 1e5.
// Monotone decreasing in eps and in t_err; empty sum (t_err = t) is 0.
double binomial_tail(long t, long t_err, double eps_pert);

// 95% Clopper-Pearson interval, computed by bisection on the exact binomial
// tails: low solves P[X >= successes | p] = 0.025, high solves
// P[X <= successes | p] = 0.025, with low(0,n) = 0 and high(n,n) = 1.
std::pair<double, double> binomial_ci(long successes, long trials);

// (count - gamma*T) / sqrt(T * gamma * (1-gamma)).
double one_proportion_z(long count, long T, double gamma);

// Standard normal upper tail P[Z > z].
double normal_sf(double z);

// Upper tail of the chi-square distribution with `dof` degrees of freedom.
double chi_square_sf(double x, double dof);

// Chi-square goodness-of-fit p-value for observed counts against expected
// probabilities (expected counts must all be positive).
double chi_square_gof_pvalue(const std::vector<long>& counts, const std::vector<double>& probs);

// Add-one permutation p-value: (1 + #{resample <= observed}) / (1 + resamples).
// Lower-tail convention: small statistics count as evidence.
double permutation_p_value(double observed, const std::function<double(RngStream&)>& resampler,
                           long resamples, RngStream& rng);

// Detection rate on un-watermarked model outputs under fresh keys: per trial
// draws a key via Watermark(M) and an independent y from the base model.
RateEstimate estimate_false_positive(const schemes::WatermarkScheme& scheme, const MarkovModel& model,
                                     const Prompt& x, long n_trials, RngStream& rng);

// Miss rate on watermarked outputs: per trial a fresh (key, sampler) pair and
// one generation; generation errors are counted separately and excluded.
RateEstimate estimate_false_negative(const schemes::WatermarkScheme& scheme, const MarkovModel& model,
                                     const Prompt& x, long n_trials, RngStream& rng);

}  // namespace stats
}  // namespace wmlab
