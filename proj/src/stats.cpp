#include "wmlab/stats.hpp"

#include <cmath>
#include <stdexcept>

#include "wmlab/markov.hpp"
#include "wmlab/schemes.hpp"

namespace wmlab::stats {

double binomial_tail(long t, long t_err, double eps_pert) {
    if (t < 0 || t_err < 0 || t_err > t)
        throw std::invalid_argument("binomial_tail: need 0 <= t_err <= t");
    if (!(eps_pert >= 0.0 && eps_pert <= 1.0))
        throw std::invalid_argument("binomial_tail: eps_pert outside [0,1]");
    const long k_max = t - t_err - 1;
    if (k_max < 0) return 0.0;
    if (eps_pert == 1.0) return 0.0;          // every term carries (1-eps)^(t-k), t-k >= 1
    if (eps_pert == 0.0) return 1.0;          // k = 0 term is 1, the rest vanish
    const double log_e = std::log(eps_pert);
    const double log_1e = std::log1p(-eps_pert);
    double sum = 0.0;
    for (long k = 0; k <= k_max; ++k) {
        const double log_c = std::lgamma(double(t) + 1.0) - std::lgamma(double(k) + 1.0) -
                             std::lgamma(double(t - k) + 1.0);
        sum += std::exp(log_c + double(k) * log_e + double(t - k) * log_1e);
    }
    return sum < 1.0 ? sum : 1.0;
}

namespace {

// P[Bin(n, p) <= k], reusing the log-space tail machinery.
double binom_cdf(long k, long n, double p) {
    if (k < 0) return 0.0;
    if (k >= n) return 1.0;
    // binomial_tail(t, t_err, eps) sums k = 0 .. t - t_err - 1.
    return binomial_tail(n, n - k - 1, p);
}

}  // namespace

std::pair<double, double> binomial_ci(long successes, long trials) {
    if (trials <= 0) throw std::invalid_argument("binomial_ci: trials must be >= 1");
    if (successes < 0 || successes > trials)
        throw std::invalid_argument("binomial_ci: successes outside [0, trials]");
    const double alpha = 0.05;
    double low = 0.0, high = 1.0;
    if (successes > 0) {
        // Smallest p with P[X >= successes | p] >= alpha/2.
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            const double upper = 1.0 - binom_cdf(successes - 1, trials, mid);
            (upper < alpha / 2.0 ? lo : hi) = mid;
        }
        low = 0.5 * (lo + hi);
    }
    if (successes < trials) {
        // Largest p with P[X <= successes | p] >= alpha/2.
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            const double lower = binom_cdf(successes, trials, mid);
            (lower < alpha / 2.0 ? hi : lo) = mid;
        }
        high = 0.5 * (lo + hi);
    }
    return {low, high};
}

double one_proportion_z(long count, long T, double gamma) {
    if (T <= 0) throw std::invalid_argument("one_proportion_z: T must be >= 1");
    if (count < 0 || count > T) throw std::invalid_argument("one_proportion_z: count outside [0, T]");
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("one_proportion_z: gamma outside (0,1)");
    return (double(count) - gamma * double(T)) / std::sqrt(double(T) * gamma * (1.0 - gamma));
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

namespace {

// Regularized lower incomplete gamma P(a, x), series + continued fraction.
double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_p: bad arguments");
    if (x == 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // Series representation.
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 10000; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    // Lentz continued fraction for Q(a, x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -double(i) * (double(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    const double q = std::exp(-x + a * std::log(x) - lg) * h;
    return 1.0 - q;
}

}  // namespace

double chi_square_sf(double x, double dof) {
    if (x <= 0.0) return 1.0;
    return 1.0 - gamma_p(dof / 2.0, x / 2.0);
}

double chi_square_gof_pvalue(const std::vector<long>& counts, const std::vector<double>& probs) {
    if (counts.size() != probs.size() || counts.empty())
        throw std::invalid_argument("chi_square_gof_pvalue: size mismatch");
    long n = 0;
    for (long c : counts) n += c;
    if (n <= 0) throw std::invalid_argument("chi_square_gof_pvalue: no observations");
    double stat = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double expect = probs[i] * double(n);
        if (!(expect > 0.0)) throw std::invalid_argument("chi_square_gof_pvalue: zero expected count");
        const double d = double(counts[i]) - expect;
        stat += d * d / expect;
    }
    return chi_square_sf(stat, double(counts.size() - 1));
}

double permutation_p_value(double observed, const std::function<double(RngStream&)>& resampler,
                           long resamples, RngStream& rng) {
    if (resamples < 1) throw std::invalid_argument("permutation_p_value: resamples must be >= 1");
    long at_or_below = 0;
    for (long i = 0; i < resamples; ++i)
        if (resampler(rng) <= observed) ++at_or_below;
    return double(1 + at_or_below) / double(1 + resamples);
}

namespace {

RateEstimate finish_estimate(long successes, long trials, long errors) {
    RateEstimate est;
    est.successes = successes;
    est.trials = trials;
    est.errors = errors;
    est.point = trials > 0 ? double(successes) / double(trials) : 0.0;
    if (trials > 0) {
        auto [lo, hi] = binomial_ci(successes, trials);
        est.ci_low = lo;
        est.ci_high = hi;
    }
    return est;
}

}  // namespace

RateEstimate estimate_false_positive(const schemes::WatermarkScheme& scheme, const MarkovModel& model,
                                     const Prompt& x, long n_trials, RngStream& rng) {
    if (n_trials < 100) throw std::invalid_argument("estimate_false_positive: need >= 100 trials");
    long hits = 0;
    for (long i = 0; i < n_trials; ++i) {
        RngStream trial = rng.substream("fp/" + std::to_string(i));
        RngStream key_rng = trial.substream("key");
        RngStream sample_rng = trial.substream("sample");
        const auto keyed = scheme.watermark(key_rng);
        const TokenSequence y = sample(model, x, model.generation_length, sample_rng);
        if (scheme.detect(keyed.key, x, y).decision == 1) ++hits;
    }
    return finish_estimate(hits, n_trials, 0);
}

RateEstimate estimate_false_negative(const schemes::WatermarkScheme& scheme, const MarkovModel& model,
                                     const Prompt& x, long n_trials, RngStream& rng) {
    if (n_trials < 100) throw std::invalid_argument("estimate_false_negative: need >= 100 trials");
    long misses = 0;
    long ok = 0;
    long errors = 0;
    for (long i = 0; i < n_trials; ++i) {
        RngStream trial = rng.substream("fn/" + std::to_string(i));
        RngStream key_rng = trial.substream("key");
        RngStream gen_rng = trial.substream("gen");
        const auto keyed = scheme.watermark(key_rng);
        try {
            const TokenSequence y = keyed.sampler(x, model.generation_length, gen_rng);
            ++ok;
            if (scheme.detect(keyed.key, x, y).decision == 0) ++misses;
        } catch (const std::exception&) {
            ++errors;
        }
    }
    if (ok == 0) throw std::runtime_error("estimate_false_negative: every generation failed");
    return finish_estimate(misses, ok, errors);
}

}  // namespace wmlab::stats
