#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "wmlab/markov.hpp"
#include "wmlab/rng.hpp"
#include "wmlab/schemes.hpp"
#include "wmlab/stats.hpp"

using namespace wmlab;

namespace {

// Exact rational binomial tail for eps = num/den, valid while the integer
// arithmetic fits __int128: sum_{k<=kmax} C(t,k) num^k den^(t-k) / den^t.
double exact_tail_rational(int t, int t_err, int num, int den) {
    const int k_max = t - t_err - 1;
    if (k_max < 0) return 0.0;
    unsigned __int128 total = 0;
    for (int k = 0; k <= k_max; ++k) {
        unsigned __int128 c = 1;
        for (int i = 0; i < k; ++i) c = c * (unsigned __int128)(t - i) / (unsigned __int128)(i + 1);
        unsigned __int128 term = c;
        for (int i = 0; i < k; ++i) term *= (unsigned __int128)num;
        for (int i = 0; i < t - k; ++i) term *= (unsigned __int128)(den - num);
        total += term;
    }
    unsigned __int128 denom = 1;
    for (int i = 0; i < t; ++i) denom *= (unsigned __int128)den;
    return double((long double)total / (long double)denom);
}

// Independent Clopper-Pearson oracle: binomial cdf by pmf recursion in long
// double, interval endpoints by bisection.
long double cdf_recursive(long k, long n, long double p) {
    if (p <= 0.0L) return 1.0L;
    if (p >= 1.0L) return k >= n ? 1.0L : 0.0L;
    long double pmf = powl(1.0L - p, (long double)n);
    long double acc = 0.0L;
    for (long i = 0;; ++i) {
        if (i <= k) acc += pmf;
        if (i >= n || i > k) break;
        pmf *= (long double)(n - i) / (long double)(i + 1) * p / (1.0L - p);
    }
    return acc;
}

std::pair<double, double> exact_cp_oracle(long successes, long trials) {
    const long double alpha = 0.05L;
    long double low = 0.0L, high = 1.0L;
    if (successes > 0) {
        long double lo = 0.0L, hi = 1.0L;
        for (int i = 0; i < 120; ++i) {
            const long double mid = 0.5L * (lo + hi);
            ((1.0L - cdf_recursive(successes - 1, trials, mid)) < alpha / 2 ? lo : hi) = mid;
        }
        low = 0.5L * (lo + hi);
    }
    if (successes < trials) {
        long double lo = 0.0L, hi = 1.0L;
        for (int i = 0; i < 120; ++i) {
            const long double mid = 0.5L * (lo + hi);
            (cdf_recursive(successes, trials, mid) < alpha / 2 ? hi : lo) = mid;
        }
        high = 0.5L * (lo + hi);
    }
    return {double(low), double(high)};
}

// Detector stub that never fires, wrapped around an arbitrary sampler.
class AllRejectScheme final : public schemes::WatermarkScheme {
public:
    explicit AllRejectScheme(MarkovModel model) : model_(std::move(model)) {}
    std::string name() const override { return "all-reject-stub"; }
    schemes::KeyedSampler watermark(RngStream& rng) const override {
        const SecretKey key = rng.random_key();
        return {key, [this](const Prompt& x, long T, RngStream& r) {
                    return sample(model_, x, T, r);
                }};
    }
    DetectionResult detect(const SecretKey&, const Prompt&, const TokenSequence&) const override {
        return DetectionResult{0.0, std::nullopt, 0};
    }

private:
    MarkovModel model_;
};

}  // namespace

TEST_CASE("binomial_tail boundary cases") {
    CHECK(stats::binomial_tail(10, 10, 0.3) == 0.0);
    CHECK(stats::binomial_tail(10, 3, 1.0) == 0.0);
    CHECK(stats::binomial_tail(2, 1, 0.5) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(stats::binomial_tail(10, 3, 0.0) == 1.0);
}

TEST_CASE("binomial_tail matches exact rational summation up to t = 20") {
    for (int t = 1; t <= 20; ++t)
        for (int t_err = 0; t_err <= t; ++t_err)
            for (int num : {1, 2, 3}) {
                const double got = stats::binomial_tail(t, t_err, double(num) / 4.0);
                const double want = exact_tail_rational(t, t_err, num, 4);
                CHECK(got == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("binomial_tail is monotone in eps and in t_err") {
    for (long t : {5L, 60L, 400L}) {
        double prev = 2.0;
        for (double eps : {0.05, 0.2, 0.5, 0.8, 0.95}) {
            const double v = stats::binomial_tail(t, t / 4, eps);
            CHECK(v <= prev + 1e-15);
            prev = v;
        }
        prev = 2.0;
        for (long t_err : {0L, t / 8, t / 4, t / 2, t}) {
            const double v = stats::binomial_tail(t, t_err, 0.4);
            CHECK(v <= prev + 1e-15);
            prev = v;
        }
    }
}

TEST_CASE("binomial_tail agrees with Monte Carlo within 4 sigma") {
    RngStream rng(77, "mc");
    const struct { long t, t_err; double eps; } cases[] = {
        {50, 20, 0.5}, {80, 60, 0.2}, {30, 5, 0.9}};
    for (const auto& c : cases) {
        const long n = 20000;
        long below = 0;
        for (long i = 0; i < n; ++i) {
            long ctr = 0;
            for (long s = 0; s < c.t; ++s)
                if (rng.uniform() < c.eps) ++ctr;
            if (ctr <= c.t - c.t_err - 1) ++below;
        }
        const double want = stats::binomial_tail(c.t, c.t_err, c.eps);
        const double got = double(below) / double(n);
        const double sigma = std::sqrt(std::max(want * (1 - want), 1e-12) / double(n));
        CHECK(std::fabs(got - want) <= 4.0 * sigma + 1e-9);
    }
}

TEST_CASE("binomial_ci boundary and reference values") {
    auto [lo0, hi0] = stats::binomial_ci(0, 50);
    CHECK(lo0 == 0.0);
    CHECK(hi0 > 0.0);
    auto [lon, hin] = stats::binomial_ci(50, 50);
    CHECK(hin == 1.0);
    CHECK(lon < 1.0);

    auto [lo, hi] = stats::binomial_ci(50, 100);
    CHECK(lo == doctest::Approx(0.40).epsilon(0.01));
    CHECK(hi == doctest::Approx(0.60).epsilon(0.01));
    auto [olo, ohi] = exact_cp_oracle(50, 100);
    CHECK(lo == doctest::Approx(olo).epsilon(1e-6));
    CHECK(hi == doctest::Approx(ohi).epsilon(1e-6));

    for (auto [s, n] : {std::pair<long, long>{3, 17}, {40, 123}, {999, 1000}}) {
        auto [a, b] = stats::binomial_ci(s, n);
        auto [oa, ob] = exact_cp_oracle(s, n);
        CHECK(a == doctest::Approx(oa).epsilon(1e-6));
        CHECK(b == doctest::Approx(ob).epsilon(1e-6));
    }
}

TEST_CASE("binomial_ci is monotone in successes") {
    double prev_lo = -1.0, prev_hi = -1.0;
    for (long s = 0; s <= 40; ++s) {
        auto [lo, hi] = stats::binomial_ci(s, 40);
        CHECK(lo >= prev_lo - 1e-12);
        CHECK(hi >= prev_hi - 1e-12);
        prev_lo = lo;
        prev_hi = hi;
    }
}

TEST_CASE("one_proportion_z hand values") {
    CHECK(stats::one_proportion_z(75, 100, 0.5) == doctest::Approx(5.0).epsilon(1e-13));
    CHECK(stats::one_proportion_z(50, 100, 0.5) == 0.0);
    CHECK(stats::one_proportion_z(100, 100, 0.5) == doctest::Approx(10.0).epsilon(1e-13));
    CHECK(stats::one_proportion_z(80, 100, 0.5) == doctest::Approx(6.0).epsilon(1e-13));
    CHECK(stats::one_proportion_z(25, 100, 0.25) == 0.0);
    CHECK_THROWS(stats::one_proportion_z(0, 0, 0.5));
}

TEST_CASE("normal_sf and chi_square_sf reference points") {
    CHECK(stats::normal_sf(0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(stats::normal_sf(1.6448536269514722) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(stats::normal_sf(4.0) == doctest::Approx(3.167124183312e-5).epsilon(1e-6));
    CHECK(stats::chi_square_sf(3.8414588206941236, 1) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(stats::chi_square_sf(18.307038053275146, 10) == doctest::Approx(0.05).epsilon(1e-8));
}

TEST_CASE("permutation_p_value rank conventions") {
    RngStream rng(3, "perm");
    long counter = 0;
    const auto resampler_above = [&counter](RngStream&) { return 10.0 + double(counter++); };
    CHECK(stats::permutation_p_value(1.0, resampler_above, 5000, rng) ==
          doctest::Approx(1.0 / 5001.0).epsilon(1e-15));
    const auto resampler_below = [](RngStream&) { return -1.0; };
    CHECK(stats::permutation_p_value(1.0, resampler_below, 100, rng) == 1.0);
}

TEST_CASE("permutation_p_value matches exhaustive rank on an enumerable statistic") {
    // Resampler that walks a fixed finite statistic set; exhaustive enumeration
    // makes the exact rank p-value computable by hand.
    const std::vector<double> pool{0.3, 0.1, 0.9, 0.5};
    std::size_t idx = 0;
    const auto resampler = [&](RngStream&) { return pool[idx++ % pool.size()]; };
    RngStream rng(4, "exh");
    const double p = stats::permutation_p_value(0.35, resampler, long(pool.size()), rng);
    // Two pool values (0.3, 0.1) are <= 0.35: p = (1 + 2) / (1 + 4).
    CHECK(p == doctest::Approx(3.0 / 5.0).epsilon(1e-15));
}

TEST_CASE("permutation_p_value is super-uniform under the null") {
    RngStream rng(9, "null");
    const long trials = 4000;
    const long resamples = 39;
    long hits_1 = 0, hits_5 = 0, hits_10 = 0;
    for (long i = 0; i < trials; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        const double observed = t.uniform();
        const auto resampler = [](RngStream& r) { return r.uniform(); };
        const double p = stats::permutation_p_value(observed, resampler, resamples, t);
        if (p <= 0.01) ++hits_1;
        if (p <= 0.05) ++hits_5;
        if (p <= 0.10) ++hits_10;
    }
    // Allow 4-sigma sampling slack on top of the nominal level.
    const auto limit = [&](double alpha) {
        return alpha + 4.0 * std::sqrt(alpha * (1 - alpha) / double(trials));
    };
    CHECK(double(hits_1) / double(trials) <= limit(0.01));
    CHECK(double(hits_5) / double(trials) <= limit(0.05));
    CHECK(double(hits_10) / double(trials) <= limit(0.10));
}

TEST_CASE("rate estimators: synthetic exactness and stub degeneracy") {
    const MarkovModel model = uniform_model(Vocabulary(3), 1, 4);
    const Prompt x{{}, "p"};
    schemes::SyntheticParams params;
    params.target_fp_rate = 0.1;
    const schemes::SyntheticScheme synth(model, params);

    RngStream rng(21, "rates");
    const auto fp = stats::estimate_false_positive(synth, model, x, 10000, rng);
    CHECK(fp.ci_low <= 0.1);
    CHECK(fp.ci_high >= 0.1);

    RngStream rng2(22, "rates");
    const auto fn = stats::estimate_false_negative(synth, model, x, 500, rng2);
    CHECK(fn.point == 0.0);
    CHECK(fn.errors == 0);

    const AllRejectScheme stub(model);
    RngStream rng3(23, "rates");
    const auto stub_fp = stats::estimate_false_positive(stub, model, x, 200, rng3);
    CHECK(stub_fp.point == 0.0);
    CHECK(stub_fp.ci_low == 0.0);
}

TEST_CASE("rate estimator is unbiased on the synthetic scheme") {
    const MarkovModel model = uniform_model(Vocabulary(3), 1, 4);
    const Prompt x{{}, "p"};
    schemes::SyntheticParams params;
    params.target_fp_rate = 0.2;
    const schemes::SyntheticScheme synth(model, params);
    RngStream rng(31, "unbiased");
    double acc = 0.0;
    const int reps = 60;
    const long trials = 400;
    for (int r = 0; r < reps; ++r) {
        RngStream sub = rng.substream(std::to_string(r));
        acc += stats::estimate_false_positive(synth, model, x, trials, sub).point;
    }
    const double mean_dev = acc / reps - 0.2;
    const double se = std::sqrt(0.2 * 0.8 / double(trials * reps));
    CHECK(std::fabs(mean_dev) <= 4.0 * se);
}
