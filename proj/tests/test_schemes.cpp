#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "wmlab/oracles.hpp"
#include "wmlab/schemes.hpp"
#include "wmlab/stats.hpp"

using namespace wmlab;
using namespace wmlab::schemes;

namespace {

SecretKey key_from_seed(std::uint64_t seed) {
    RngStream rng(seed, "key");
    return rng.random_key();
}

// The calibrated KGW/Unigram toy generator used across scheme tests: diffuse
// random rows keep per-position entropy high enough for the green bias to
// register.
MarkovModel toy_lm(long T = 200) {
    RngStream rng(2024, "toy-lm");
    return random_model(Vocabulary(16), 1, T, 3.0, rng);
}

}  // namespace

TEST_CASE("kgw_green_list: determinism, expected fraction, gamma limits") {
    const SecretKey k = key_from_seed(1);
    const std::vector<Token> ctx{5};
    CHECK(kgw_green_list(k, ctx, 0.5, 256) == kgw_green_list(k, ctx, 0.5, 256));

    // 1000 contexts over vocab 256 at gamma 0.5: per-context count is
    // Binomial(256, 0.5); check every count within 4 sigma and the mean
    // within 4 standard errors of 128.
    long total = 0;
    const double sigma = std::sqrt(256 * 0.25);
    for (long c = 0; c < 1000; ++c) {
        const auto green = kgw_green_list(k, {Token(c % 64), Token(c / 64)}, 0.5, 256);
        const long count = std::count(green.begin(), green.end(), true);
        CHECK(std::fabs(double(count) - 128.0) <= 5.0 * sigma);
        total += count;
    }
    CHECK(std::fabs(double(total) / 1000.0 - 128.0) <= 4.0 * sigma / std::sqrt(1000.0));

    // gamma near zero: empty or near-empty.
    const auto sparse = kgw_green_list(k, ctx, 1e-6, 256);
    CHECK(std::count(sparse.begin(), sparse.end(), true) <= 1);
}

TEST_CASE("kgw_generate with delta 0 matches the unwatermarked law") {
    const MarkovModel m = uniform_model(Vocabulary(2), 1, 3);
    KgwParams params;
    params.delta = 0.0;
    const KgwScheme scheme(m, params);
    const SecretKey k = key_from_seed(2);
    const EnumeratedSpace space = enumerate_outputs(Vocabulary(2), 3);
    std::vector<long> counts(space.size(), 0);
    RngStream rng(3, "delta0");
    const long n = 60000;
    for (long i = 0; i < n; ++i)
        ++counts[space.index_of(scheme.generate(k, Prompt{}, 3, rng))];
    const std::vector<double> probs(space.size(), 1.0 / 8.0);
    CHECK(stats::chi_square_gof_pvalue(counts, probs) > 0.001);
}

TEST_CASE("kgw_generate with positive delta over-selects green tokens") {
    const MarkovModel m = toy_lm(50);
    const KgwScheme scheme(m, KgwParams{});
    RngStream rng(5, "bias");
    long green_total = 0;
    const long gens = 1000, T = 50;
    for (long i = 0; i < gens; ++i) {
        RngStream trial = rng.substream(std::to_string(i));
        const SecretKey k = trial.random_key();
        const TokenSequence y = scheme.generate(k, Prompt{}, T, trial);
        for (long pos = 0; pos < T; ++pos) {
            const auto ctx = green_context({}, y.tokens, std::size_t(pos), 1);
            if (kgw_is_green(k, ctx, y.tokens[std::size_t(pos)], 0.5)) ++green_total;
        }
    }
    // Null mean would be T/2 per generation; demand a > 5 sigma excess.
    const double null_mean = double(gens * T) * 0.5;
    const double null_sigma = std::sqrt(double(gens * T) * 0.25);
    CHECK(double(green_total) > null_mean + 5.0 * null_sigma);
}

TEST_CASE("kgw_generate with huge delta emits green tokens only") {
    const MarkovModel m = toy_lm(30);
    KgwParams params;
    params.delta = 50.0;
    const KgwScheme scheme(m, params);
    RngStream rng(7, "alldark");
    const SecretKey k = rng.random_key();
    const TokenSequence y = scheme.generate(k, Prompt{}, 30, rng);
    for (long pos = 0; pos < 30; ++pos) {
        const auto ctx = green_context({}, y.tokens, std::size_t(pos), 1);
        CHECK(kgw_is_green(k, ctx, y.tokens[std::size_t(pos)], params.gamma));
    }
}

TEST_CASE("kgw_detect agrees with an independent count-and-normalize route") {
    const MarkovModel m = toy_lm(40);
    const KgwScheme scheme(m, KgwParams{});
    RngStream rng(9, "recount");
    for (int trial = 0; trial < 50; ++trial) {
        RngStream t = rng.substream(std::to_string(trial));
        const SecretKey k = t.random_key();
        const TokenSequence y = sample(m, Prompt{}, 40, t);
        const DetectionResult got = scheme.detect(k, Prompt{}, y);
        // Second route: full green list per position, then the plain formula.
        long count = 0;
        for (long pos = 0; pos < 40; ++pos) {
            const auto ctx = green_context({}, y.tokens, std::size_t(pos), 1);
            const auto green = kgw_green_list(k, ctx, 0.5, 16);
            if (green[std::size_t(y.tokens[std::size_t(pos)])]) ++count;
        }
        const double z = (double(count) - 0.5 * 40.0) / std::sqrt(40.0 * 0.25);
        CHECK(got.statistic == doctest::Approx(z).epsilon(1e-12));
        CHECK(got.decision == (z > 4.0 ? 1 : 0));
    }
    CHECK_THROWS(scheme.detect(key_from_seed(1), Prompt{}, TokenSequence{}));
}

TEST_CASE("kgw end-to-end: watermarked detected, unwatermarked not") {
    const MarkovModel m = toy_lm();
    const KgwScheme scheme(m, KgwParams{});
    RngStream rng(11, "roundtrip");
    long misses = 0, false_pos = 0;
    const long trials = 300;
    for (long i = 0; i < trials; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        RngStream kr = t.substream("k");
        RngStream gr = t.substream("g");
        RngStream ur = t.substream("u");
        const KeyedSampler keyed = scheme.watermark(kr);
        const TokenSequence marked = keyed.sampler(Prompt{}, 200, gr);
        if (scheme.detect(keyed.key, Prompt{}, marked).decision == 0) ++misses;
        const TokenSequence clean = sample(m, Prompt{}, 200, ur);
        if (scheme.detect(keyed.key, Prompt{}, clean).decision == 1) ++false_pos;
    }
    CHECK(double(misses) / double(trials) <= 0.1);
    // Repeated bigrams correlate the green indicators, so the realized false
    // positive rate sits above the nominal normal tail; the loose 0.01 bound
    // is the contract.
    CHECK(double(false_pos) / double(trials) <= 0.01);
}

TEST_CASE("unigram boundary z and permutation invariance") {
    const SecretKey k = key_from_seed(13);
    // Assemble a 100-token sequence with exactly 80 green tokens.
    const auto green = kgw_green_list(k, {}, 0.5, 16);
    Token g = -1, r = -1;
    for (int v = 0; v < 16; ++v) {
        if (green[std::size_t(v)] && g < 0) g = Token(v);
        if (!green[std::size_t(v)] && r < 0) r = Token(v);
    }
    REQUIRE(g >= 0);
    REQUIRE(r >= 0);
    std::vector<Token> tokens;
    for (int i = 0; i < 80; ++i) tokens.push_back(g);
    for (int i = 0; i < 20; ++i) tokens.push_back(r);

    const MarkovModel m = toy_lm(100);
    const UnigramScheme scheme(m, UnigramParams{});
    const DetectionResult res = scheme.detect(k, Prompt{}, TokenSequence{tokens});
    CHECK(res.statistic == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(res.decision == 0);  // strict z > 6

    // Context-free counting is permutation invariant.
    std::vector<Token> shuffled = tokens;
    RngStream rng(14, "shuffle");
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.uniform_below(i)]);
    CHECK(scheme.detect(k, Prompt{}, TokenSequence{shuffled}).statistic ==
          doctest::Approx(res.statistic).epsilon(1e-15));
}

TEST_CASE("unigram end-to-end sanity") {
    const MarkovModel m = toy_lm();
    const UnigramScheme scheme(m, UnigramParams{});
    RngStream rng(15, "uni");
    long misses = 0;
    const long trials = 200;
    for (long i = 0; i < trials; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        RngStream kr = t.substream("k");
        RngStream gr = t.substream("g");
        const KeyedSampler keyed = scheme.watermark(kr);
        const TokenSequence marked = keyed.sampler(Prompt{}, 200, gr);
        if (scheme.detect(keyed.key, Prompt{}, marked).decision == 0) ++misses;
    }
    CHECK(double(misses) / double(trials) <= 0.1);
}

TEST_CASE("exp_generate determinism and degenerate model") {
    const MarkovModel m = toy_lm(24);
    const SecretKey k = key_from_seed(17);
    CHECK(exp_generate(m, k, 32, Prompt{}, 24) == exp_generate(m, k, 32, Prompt{}, 24));
    CHECK_THROWS(exp_generate(m, k, 16, Prompt{}, 24));  // T > n

    // One-hot rows: the model's unique sequence regardless of key.
    MarkovModel det(Vocabulary(3), 1, 4);
    std::vector<double> row{0.0, 0.0, 1.0};
    for (int len = 0; len <= 1; ++len)
        for (std::size_t c = 0; c < det.rows_for_length(len); ++c) det.set_row(len, c, row);
    for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
        const TokenSequence y = exp_generate(det, key_from_seed(seed), 8, Prompt{}, 4);
        CHECK(y.tokens == std::vector<Token>{2, 2, 2, 2});
    }
}

TEST_CASE("exp_generate marginal over random keys equals the model law") {
    RngStream build(19, "expmodel");
    const MarkovModel m = random_model(Vocabulary(3), 1, 4, 2.0, build);
    const EnumeratedSpace space = enumerate_outputs(Vocabulary(3), 4);
    std::vector<double> probs;
    for (const auto& y : space.outputs)
        probs.push_back(std::exp(log_likelihood(m, Prompt{}, y, -100.0)));
    std::vector<long> counts(space.size(), 0);
    RngStream rng(20, "expkeys");
    const long n = 100000;
    for (long i = 0; i < n; ++i) {
        const SecretKey k = rng.random_key();
        ++counts[space.index_of(exp_generate(m, k, 8, Prompt{}, 4))];
    }
    CHECK(stats::chi_square_gof_pvalue(counts, probs) > 0.001);
}

TEST_CASE("exp_alignment_cost: k = 1 reduces to the single-cell minimum") {
    // Hand-built xi table: n = 3 keys, vocabulary {0,1}.
    const std::vector<std::vector<double>> xi{{0.9, 0.2}, {0.5, 0.8}, {0.1, 0.6}};
    const auto xi_at = [&xi](long j, Token v) { return xi[std::size_t(j)][std::size_t(v)]; };
    const TokenSequence y{{1, 0}};
    // Cells: -log xi_j(y_i) over all (j, i); minimum is -log(0.9) at (0, i=1).
    const double got = exp_alignment_cost(xi_at, 3, y, 1);
    CHECK(got == doctest::Approx(-std::log(0.9)).epsilon(1e-12));

    // Pure function: identical on re-invocation.
    CHECK(exp_alignment_cost(xi_at, 3, y, 1) == got);

    // k = 2 window check by hand: diagonals (j0,i0) in {(0,0),(1,0)}.
    const double w00 = -std::log(xi[0][1]) - std::log(xi[1][0]);
    const double w10 = -std::log(xi[1][1]) - std::log(xi[2][0]);
    CHECK(exp_alignment_cost(xi_at, 3, y, 2) ==
          doctest::Approx(std::min(w00, w10)).epsilon(1e-12));
}

TEST_CASE("alignment cost of the generating key beats independent keys on average") {
    const MarkovModel m = toy_lm(24);
    RngStream rng(23, "align");
    const long trials = 1000;
    double diff_sum = 0.0, diff_sq = 0.0;
    for (long i = 0; i < trials; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        const SecretKey gen_key = t.random_key();
        const SecretKey other_key = t.random_key();
        const TokenSequence y = exp_generate(m, gen_key, 32, Prompt{}, 24);
        const double c_gen = exp_alignment_cost(gen_key, 32, y, 12);
        const double c_other = exp_alignment_cost(other_key, 32, y, 12);
        const double d = c_gen - c_other;
        diff_sum += d;
        diff_sq += d * d;
    }
    const double mean = diff_sum / double(trials);
    const double var = diff_sq / double(trials) - mean * mean;
    const double se = std::sqrt(var / double(trials));
    CHECK(mean < -4.0 * se);  // one-sided, far beyond p < 1e-4
}

TEST_CASE("exp_detect: determinism, p floor, null uniformity") {
    ExpParams params;
    params.key_sequence_length = 32;
    params.block_length = 12;
    params.resamples = 199;
    const MarkovModel m = toy_lm(24);
    const ExpScheme scheme(m, params);

    RngStream rng(29, "expdet");
    const SecretKey k = rng.random_key();
    const TokenSequence marked = exp_generate(m, k, 32, Prompt{}, 24);
    const DetectionResult a = scheme.detect(k, Prompt{}, marked);
    const DetectionResult b = scheme.detect(k, Prompt{}, marked);
    CHECK(a.statistic == b.statistic);
    CHECK(*a.p_value == *b.p_value);
    CHECK(*a.p_value >= 1.0 / 200.0 - 1e-15);

    // Null: y independent of the key; p is uniform on its grid.
    double p_sum = 0.0;
    const long trials = 1000;
    for (long i = 0; i < trials; ++i) {
        RngStream t = rng.substream("null/" + std::to_string(i));
        const SecretKey key = t.random_key();
        const TokenSequence y = sample(m, Prompt{}, 24, t);
        p_sum += *scheme.detect(key, Prompt{}, y).p_value;
    }
    CHECK(p_sum / double(trials) == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +- 0.02
}

TEST_CASE("exp_detect p-value matches exhaustive enumeration on a 2-bit key space") {
    // Key space of four keys; the permutation test enumerates it exactly.
    const MarkovModel m = toy_lm(16);
    std::vector<SecretKey> keyspace;
    for (std::uint64_t s = 0; s < 4; ++s) keyspace.push_back(key_from_seed(1000 + s));

    const TokenSequence y = exp_generate(m, keyspace[2], 20, Prompt{}, 16);
    const double observed = exp_alignment_cost(keyspace[2], 20, y, 8);

    // Exact rank over the enumerated key space.
    long at_or_below = 0;
    for (const auto& k : keyspace)
        if (exp_alignment_cost(k, 20, y, 8) <= observed) ++at_or_below;
    const double exact = double(1 + at_or_below) / double(1 + 4);

    std::size_t next = 0;
    const auto resampler = [&](RngStream&) {
        return exp_alignment_cost(keyspace[next++ % 4], 20, y, 8);
    };
    RngStream rng(31, "exh");
    const double p = stats::permutation_p_value(observed, resampler, 4, rng);
    CHECK(p == exact);
}

TEST_CASE("exp end-to-end false negatives stay low") {
    ExpParams params;
    params.key_sequence_length = 32;
    params.block_length = 12;
    params.resamples = 199;
    const MarkovModel m = toy_lm(24);
    const ExpScheme scheme(m, params);
    RngStream rng(37, "expfn");
    const auto fn = stats::estimate_false_negative(scheme, m, Prompt{}, 300, rng);
    CHECK(fn.point <= 0.1);
}

TEST_CASE("synthetic scheme: zero false negatives and exact construction") {
    const MarkovModel m = uniform_model(Vocabulary(3), 1, 4);
    SyntheticParams params;
    params.target_fp_rate = 0.1;
    const SyntheticScheme scheme(m, params);
    RngStream rng(41, "synth");
    for (int i = 0; i < 300; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        RngStream kr = t.substream("k");
        RngStream gr = t.substream("g");
        const KeyedSampler keyed = scheme.watermark(kr);
        const TokenSequence y = keyed.sampler(Prompt{}, 4, gr);
        CHECK(scheme.detect(keyed.key, Prompt{}, y).decision == 1);
    }
}

TEST_CASE("synthetic scheme: fresh-key detection rate matches the target") {
    const MarkovModel m = uniform_model(Vocabulary(3), 1, 4);
    SyntheticParams params;
    params.target_fp_rate = 0.1;
    const SyntheticScheme scheme(m, params);
    RngStream rng(43, "synthfp");
    long hits = 0;
    const long n = 100000;
    for (long i = 0; i < n; ++i) {
        const SecretKey k = rng.random_key();
        const TokenSequence y = sample(m, Prompt{}, 4, rng);
        hits += scheme.detect(k, Prompt{}, y).decision;
    }
    auto [lo, hi] = stats::binomial_ci(hits, n);
    CHECK(lo <= 0.1);
    CHECK(hi >= 0.1);
}

TEST_CASE("synthetic scheme: expected rejections near 1/eps_pos") {
    const MarkovModel m = uniform_model(Vocabulary(3), 1, 4);
    SyntheticParams params;
    params.target_fp_rate = 0.1;
    const SyntheticScheme scheme(m, params);
    RngStream rng(47, "geo");
    long attempts_total = 0;
    long completed = 0;
    const long runs = 3000;
    const long cap = 10000;  // a key can mark nothing on an 81-element space
    for (long i = 0; i < runs; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        const SecretKey k = t.random_key();
        long attempts = 0;
        while (attempts < cap) {
            ++attempts;
            const TokenSequence y = sample(m, Prompt{}, 4, t);
            if (scheme.detect(k, Prompt{}, y).decision == 1) {
                attempts_total += attempts;
                ++completed;
                break;
            }
        }
    }
    CHECK(completed >= runs - 5);
    const double mean = double(attempts_total) / double(completed);
    // Exact expectation: the marked-set size m is Binomial(81, 0.1) over keys
    // and attempts are geometric with p = m/81, so E[attempts | m >= 1] =
    // sum_m pmf(m) * 81/m / P[m >= 1]. The continuum reading is 1/eps = 10;
    // the finite space inflates it (Jensen).
    double expect = 0.0, p_nonempty = 0.0;
    {
        double pmf = std::pow(0.9, 81.0);  // m = 0
        for (int m = 1; m <= 81; ++m) {
            pmf *= double(81 - m + 1) / double(m) * (0.1 / 0.9);
            expect += pmf * 81.0 / double(m);
            p_nonempty += pmf;
        }
        expect /= p_nonempty;
    }
    CHECK(expect == doctest::Approx(10.0).epsilon(0.2));  // the coarse 1/eps reading
    CHECK(mean == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("synthetic sampler errors when the rejection cap is exhausted") {
    // A one-sequence output space: most keys mark nothing reachable.
    MarkovModel det(Vocabulary(2), 1, 2);
    std::vector<double> row{1.0, 0.0};
    for (int len = 0; len <= 1; ++len)
        for (std::size_t c = 0; c < det.rows_for_length(len); ++c) det.set_row(len, c, row);
    SyntheticParams params;
    params.target_fp_rate = 0.01;
    params.rejection_cap = 50;
    const SyntheticScheme scheme(det, params);
    RngStream rng(53, "cap");
    bool saw_error = false;
    for (int i = 0; i < 200 && !saw_error; ++i) {
        RngStream t = rng.substream(std::to_string(i));
        RngStream kr = t.substream("k");
        const KeyedSampler keyed = scheme.watermark(kr);
        try {
            RngStream gr = t.substream("g");
            (void)keyed.sampler(Prompt{}, 2, gr);
        } catch (const std::runtime_error&) {
            saw_error = true;
        }
    }
    CHECK(saw_error);
}

TEST_CASE("scheme interface law: detect is deterministic in (key, x, y)") {
    const MarkovModel m = toy_lm(24);
    ExpParams exp_params;
    exp_params.key_sequence_length = 32;
    exp_params.block_length = 12;
    exp_params.resamples = 99;
    SyntheticParams syn_params;
    const KgwScheme kgw(m, KgwParams{});
    const UnigramScheme uni(m, UnigramParams{});
    const ExpScheme exp_s(m, exp_params);
    const SyntheticScheme syn(m, syn_params);
    const WatermarkScheme* all[] = {&kgw, &uni, &exp_s, &syn};
    RngStream rng(59, "law");
    for (const auto* scheme : all) {
        RngStream kr = rng.substream(scheme->name() + "/k");
        RngStream gr = rng.substream(scheme->name() + "/g");
        const KeyedSampler keyed = scheme->watermark(kr);
        const TokenSequence y = keyed.sampler(Prompt{}, 24, gr);
        const DetectionResult a = scheme->detect(keyed.key, Prompt{}, y);
        const DetectionResult b = scheme->detect(keyed.key, Prompt{}, y);
        CHECK(a.statistic == b.statistic);
        CHECK(a.decision == b.decision);
        CHECK(a.p_value == b.p_value);
    }
}
