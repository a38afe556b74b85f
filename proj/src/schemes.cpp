#include "wmlab/schemes.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "wmlab/stats.hpp"

namespace wmlab::schemes {

void KgwParams::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("kgw: gamma outside (0,1)");
    if (!(delta >= 0.0)) throw ConfigError("kgw: delta must be >= 0");
    if (context_width < 1) throw ConfigError("kgw: context_width must be >= 1");
    if (!(z_threshold > 0.0)) throw ConfigError("kgw: z_threshold must be > 0");
}

void UnigramParams::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("unigram: gamma outside (0,1)");
    if (!(delta >= 0.0)) throw ConfigError("unigram: delta must be >= 0");
    if (!(z_threshold > 0.0)) throw ConfigError("unigram: z_threshold must be > 0");
}

void ExpParams::validate() const {
    if (key_sequence_length < 1) throw ConfigError("exp: key_sequence_length must be >= 1");
    if (block_length < 1 || block_length > key_sequence_length)
        throw ConfigError("exp: block_length outside [1, key_sequence_length]");
    if (resamples < 1) throw ConfigError("exp: resamples must be >= 1");
    if (!(p_threshold > 0.0 && p_threshold < 1.0)) throw ConfigError("exp: p_threshold outside (0,1)");
}

void SyntheticParams::validate() const {
    if (!(target_fp_rate > 0.0 && target_fp_rate < 1.0))
        throw ConfigError("synthetic: target_fp_rate outside (0,1)");
    if (rejection_cap < 1) throw ConfigError("synthetic: rejection_cap must be >= 1");
}

bool kgw_is_green(const SecretKey& key, const std::vector<Token>& context, Token candidate,
                  double gamma) {
    std::vector<Token> material = context;
    material.push_back(candidate);
    const std::uint64_t h = derive_subkey(key, encode_tokens(material));
    return double(h & 0xffff) < gamma * 65536.0;
}

std::vector<bool> kgw_green_list(const SecretKey& key, const std::vector<Token>& context,
                                 double gamma, int vocab) {
    std::vector<bool> green(static_cast<std::size_t>(vocab));
    for (int v = 0; v < vocab; ++v) green[std::size_t(v)] = kgw_is_green(key, context, Token(v), gamma);
    return green;
}

std::vector<Token> green_context(const std::vector<Token>& prompt, const std::vector<Token>& y,
                                 std::size_t pos, int width) {
    std::vector<Token> ctx(std::size_t(width), Token(-1));
    const std::size_t have = prompt.size() + pos;
    const std::size_t take = std::min<std::size_t>(std::size_t(width), have);
    for (std::size_t j = 0; j < take; ++j) {
        const std::size_t src = have - take + j;
        ctx[std::size_t(width) - take + j] =
            src < prompt.size() ? prompt[src] : y[src - prompt.size()];
    }
    return ctx;
}

namespace {

// Shared green-list generation loop: the context builder distinguishes
// KGW (windowed) from Unigram (empty context).
TokenSequence greenlist_generate(const MarkovModel& model, const SecretKey& key, double gamma,
                                 double delta, const Prompt& x, long T, RngStream& rng,
                                 const std::function<std::vector<Token>(const std::vector<Token>&,
                                                                        std::size_t)>& context_fn) {
    if (T < 1) throw std::invalid_argument("generate: T must be >= 1");
    const double boost = std::exp(delta);
    std::vector<Token> out;
    out.reserve(std::size_t(T));
    std::vector<double> weights(std::size_t(model.vocab_size()));
    std::vector<Token> chain_ctx;
    for (long pos = 0; pos < T; ++pos) {
        // Model row under the running chain context.
        chain_ctx.clear();
        const std::size_t have = x.tokens.size() + std::size_t(pos);
        const std::size_t want = std::min<std::size_t>(std::size_t(model.order), have);
        for (std::size_t i = have - want; i < have; ++i)
            chain_ctx.push_back(i < x.tokens.size() ? x.tokens[i] : out[i - x.tokens.size()]);
        const double* row = model.row_for(chain_ctx);

        const auto green_ctx = context_fn(out, std::size_t(pos));
        const auto green = kgw_green_list(key, green_ctx, gamma, model.vocab_size());
        for (int v = 0; v < model.vocab_size(); ++v)
            weights[std::size_t(v)] = row[v] * (green[std::size_t(v)] ? boost : 1.0);
        out.push_back(Token(rng.categorical(weights)));
    }
    return TokenSequence(std::move(out));
}

DetectionResult greenlist_detect(const SecretKey& key, double gamma, double z_threshold,
                                 const Prompt& x, const TokenSequence& y,
                                 const std::function<std::vector<Token>(const std::vector<Token>&,
                                                                        std::size_t)>& context_fn) {
    const long T = long(y.tokens.size());
    if (T < 1) throw std::invalid_argument("detect: empty sequence");
    long green_count = 0;
    for (long pos = 0; pos < T; ++pos) {
        const auto ctx = context_fn(y.tokens, std::size_t(pos));
        if (kgw_is_green(key, ctx, y.tokens[std::size_t(pos)], gamma)) ++green_count;
    }
    DetectionResult r;
    r.statistic = stats::one_proportion_z(green_count, T, gamma);
    r.p_value = stats::normal_sf(r.statistic);
    r.decision = r.statistic > z_threshold ? 1 : 0;
    (void)x;
    return r;
}

}  // namespace

KgwScheme::KgwScheme(MarkovModel model, KgwParams params)
    : model_(std::move(model)), params_(params) {
    params_.validate();
}

TokenSequence KgwScheme::generate(const SecretKey& key, const Prompt& x, long T,
                                  RngStream& rng) const {
    const int w = params_.context_width;
    return greenlist_generate(model_, key, params_.gamma, params_.delta, x, T, rng,
                              [&x, w](const std::vector<Token>& prior, std::size_t pos) {
                                  return green_context(x.tokens, prior, pos, w);
                              });
}

KeyedSampler KgwScheme::watermark(RngStream& rng) const {
    const SecretKey key = rng.random_key();
    return {key, [this, key](const Prompt& x, long T, RngStream& r) {
                return generate(key, x, T, r);
            }};
}

DetectionResult KgwScheme::detect(const SecretKey& key, const Prompt& x,
                                  const TokenSequence& y) const {
    const int w = params_.context_width;
    return greenlist_detect(key, params_.gamma, params_.z_threshold, x, y,
                            [&x, w](const std::vector<Token>& seq, std::size_t pos) {
                                return green_context(x.tokens, seq, pos, w);
                            });
}

UnigramScheme::UnigramScheme(MarkovModel model, UnigramParams params)
    : model_(std::move(model)), params_(params) {
    params_.validate();
}

TokenSequence UnigramScheme::generate(const SecretKey& key, const Prompt& x, long T,
                                      RngStream& rng) const {
    return greenlist_generate(model_, key, params_.gamma, params_.delta, x, T, rng,
                              [](const std::vector<Token>&, std::size_t) {
                                  return std::vector<Token>{};
                              });
}

KeyedSampler UnigramScheme::watermark(RngStream& rng) const {
    const SecretKey key = rng.random_key();
    return {key, [this, key](const Prompt& x, long T, RngStream& r) {
                return generate(key, x, T, r);
            }};
}

DetectionResult UnigramScheme::detect(const SecretKey& key, const Prompt& x,
                                      const TokenSequence& y) const {
    return greenlist_detect(key, params_.gamma, params_.z_threshold, x, y,
                            [](const std::vector<Token>&, std::size_t) {
                                return std::vector<Token>{};
                            });
}

double exp_key_value(const SecretKey& key, long position, Token token) {
    std::string ctx = "exp-xi";
    ctx += encode_tokens({Token(position), token});
    const std::uint64_t h = derive_subkey(key, ctx);
    // Midpoint mapping keeps the value strictly inside (0,1) so -log is finite.
    return (double(h >> 11) + 0.5) * 0x1.0p-53;
}

TokenSequence exp_generate(const MarkovModel& model, const SecretKey& key, long n, const Prompt& x,
                           long T) {
    if (T < 1) throw std::invalid_argument("exp_generate: T must be >= 1");
    if (T > n) throw std::invalid_argument("exp_generate: T exceeds key sequence length");
    std::vector<Token> out;
    out.reserve(std::size_t(T));
    std::vector<Token> ctx;
    for (long pos = 0; pos < T; ++pos) {
        ctx.clear();
        const std::size_t have = x.tokens.size() + std::size_t(pos);
        const std::size_t want = std::min<std::size_t>(std::size_t(model.order), have);
        for (std::size_t i = have - want; i < have; ++i)
            ctx.push_back(i < x.tokens.size() ? x.tokens[i] : out[i - x.tokens.size()]);
        const double* row = model.row_for(ctx);
        Token best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int v = 0; v < model.vocab_size(); ++v) {
            const double p = row[v];
            if (p <= 0.0) continue;
            // log of xi^(1/p); larger is better.
            const double score = std::log(exp_key_value(key, pos, Token(v))) / p;
            if (score > best_score) {
                best_score = score;
                best = Token(v);
            }
        }
        if (best < 0) throw std::runtime_error("exp_generate: empty-support model row");
        out.push_back(best);
    }
    return TokenSequence(std::move(out));
}

double exp_alignment_cost(const std::function<double(long, Token)>& xi_at, long n,
                          const TokenSequence& y, long k) {
    const long T = long(y.tokens.size());
    if (k < 1 || k > T) throw std::invalid_argument("exp_alignment_cost: k outside [1, T]");
    if (n < k) throw std::invalid_argument("exp_alignment_cost: key sequence shorter than k");

    // Memoized per-cell costs c(j, i) = -log xi_j(y_i); only the tokens that
    // actually occur in y are ever needed.
    std::vector<Token> distinct;
    std::vector<long> slot_of_token;
    {
        Token max_tok = 0;
        for (Token t : y.tokens) max_tok = std::max(max_tok, t);
        slot_of_token.assign(std::size_t(max_tok) + 1, -1);
        for (Token t : y.tokens)
            if (slot_of_token[std::size_t(t)] < 0) {
                slot_of_token[std::size_t(t)] = long(distinct.size());
                distinct.push_back(t);
            }
    }
    std::vector<double> cell(std::size_t(n) * distinct.size());
    for (long j = 0; j < n; ++j)
        for (std::size_t s = 0; s < distinct.size(); ++s)
            cell[std::size_t(j) * distinct.size() + s] = -std::log(xi_at(j, distinct[s]));

    const auto cost_at = [&](long j, long i) {
        return cell[std::size_t(j) * distinct.size() +
                    std::size_t(slot_of_token[std::size_t(y.tokens[std::size_t(i)])])];
    };

    // Sliding length-k window along every diagonal j - i = d.
    double best = std::numeric_limits<double>::infinity();
    for (long d = -(T - k); d <= n - k; ++d) {
        const long j0 = std::max<long>(0, d);
        const long i0 = j0 - d;
        const long len = std::min(n - j0, T - i0);
        if (len < k) continue;
        double window = 0.0;
        for (long l = 0; l < len; ++l) {
            window += cost_at(j0 + l, i0 + l);
            if (l >= k) window -= cost_at(j0 + l - k, i0 + l - k);
            if (l >= k - 1) best = std::min(best, window);
        }
    }
    return best;
}

double exp_alignment_cost(const SecretKey& key, long n, const TokenSequence& y, long k) {
    return exp_alignment_cost(
        [&key](long j, Token v) { return exp_key_value(key, j, v); }, n, y, k);
}

ExpScheme::ExpScheme(MarkovModel model, ExpParams params)
    : model_(std::move(model)), params_(params) {
    params_.validate();
}

KeyedSampler ExpScheme::watermark(RngStream& rng) const {
    const SecretKey key = rng.random_key();
    const long n = params_.key_sequence_length;
    return {key, [this, key, n](const Prompt& x, long T, RngStream&) {
                return exp_generate(model_, key, n, x, T);
            }};
}

DetectionResult ExpScheme::detect(const SecretKey& key, const Prompt& x,
                                  const TokenSequence& y) const {
    (void)x;
    const long n = params_.key_sequence_length;
    const long k = std::min<long>(params_.block_length, long(y.tokens.size()));
    const double observed = exp_alignment_cost(key, n, y, k);

    // Resample stream derived from (key, y): deterministic per input, and the
    // resampled key sequences behave as fresh uniform draws.
    const std::uint64_t resample_seed = derive_subkey(key, "exp-perm" + encode_tokens(y));
    RngStream rng(resample_seed, "exp-resample");

    long at_or_below = 0;
    std::vector<double> fresh;  // xi' values for the tokens appearing in y
    Token max_tok = 0;
    for (Token t : y.tokens) max_tok = std::max(max_tok, t);
    for (long r = 0; r < params_.resamples; ++r) {
        fresh.assign(std::size_t(n) * (std::size_t(max_tok) + 1), 0.0);
        for (auto& u : fresh) u = (double(rng.next_u64() >> 11) + 0.5) * 0x1.0p-53;
        const double cost = exp_alignment_cost(
            [&fresh, max_tok](long j, Token v) {
                return fresh[std::size_t(j) * (std::size_t(max_tok) + 1) + std::size_t(v)];
            },
            n, y, k);
        if (cost <= observed) ++at_or_below;
    }
    DetectionResult res;
    res.statistic = observed;
    res.p_value = double(1 + at_or_below) / double(1 + params_.resamples);
    res.decision = *res.p_value < params_.p_threshold ? 1 : 0;
    return res;
}

SyntheticScheme::SyntheticScheme(MarkovModel model, SyntheticParams params)
    : model_(std::move(model)), params_(params) {
    params_.validate();
    const long double scaled = static_cast<long double>(params_.target_fp_rate) * 18446744073709551616.0L;
    threshold_ = static_cast<std::uint64_t>(scaled);
}

KeyedSampler SyntheticScheme::watermark(RngStream& rng) const {
    const SecretKey key = rng.random_key();
    return {key, [this, key](const Prompt& x, long T, RngStream& r) {
                for (long attempt = 0; attempt < params_.rejection_cap; ++attempt) {
                    TokenSequence y = sample(model_, x, T, r);
                    if (detect(key, x, y).decision == 1) return y;
                }
                throw std::runtime_error(
                    "synthetic sampler: rejection cap exhausted; marked set too thin "
                    "for the model's support");
            }};
}

DetectionResult SyntheticScheme::detect(const SecretKey& key, const Prompt& x,
                                        const TokenSequence& y) const {
    (void)x;
    const std::uint64_t h = derive_subkey(key, encode_tokens(y));
    DetectionResult r;
    r.statistic = std::ldexp(double(h), -64);  // hash as a fraction of 2^64
    r.decision = h < threshold_ ? 1 : 0;
    return r;
}

}  // namespace wmlab::schemes
