#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/markov.hpp"
#include "wmlab/rng.hpp"

namespace wmlab::schemes {

struct KgwParams {
    double gamma = 0.5;      // green-list fraction
    double delta = 2.0;      // logit bias on green tokens
    int context_width = 1;   // previous tokens hashed into the green list
    double z_threshold = 4.0;

    void validate() const;
};

struct UnigramParams {
    double gamma = 0.5;
    double delta = 2.0;
    double z_threshold = 6.0;

    void validate() const;
};

struct ExpParams {
    long key_sequence_length = 0;  // n; must be >= generation length
    long block_length = 8;         // k
    long resamples = 5000;
    double p_threshold = 0.05;

    void validate() const;
};

struct SyntheticParams {
    double target_fp_rate = 0.1;
    long rejection_cap = 10000;

    void validate() const;
};

// A keyed sampler produced by Watermark(M).
using Sampler = std::function<TokenSequence(const Prompt&, long, RngStream&)>;

struct KeyedSampler {
    SecretKey key;
    Sampler sampler;
};

// The (Watermark, Detect) pair. watermark() draws a fresh key and returns the
// keyed sampler; detect() is deterministic in (key, x, y).
class WatermarkScheme {
public:
    virtual ~WatermarkScheme() = default;
    virtual std::string name() const = 0;
    virtual KeyedSampler watermark(RngStream& rng) const = 0;
    virtual DetectionResult detect(const SecretKey& key, const Prompt& x,
                                   const TokenSequence& y) const = 0;
};

// Keyed green-list membership. A token v is green iff
// derive_subkey(key, encode(context) || encode(v)) mod 2^16 < gamma * 2^16,
// so the expected green fraction is exactly gamma (up to 16-bit rounding).
// Context tokens may include the sentinel -1 used to pad positions where
// fewer than context_width prior tokens exist.
std::vector<bool> kgw_green_list(const SecretKey& key, const std::vector<Token>& context,
                                 double gamma, int vocab);
bool kgw_is_green(const SecretKey& key, const std::vector<Token>& context, Token candidate,
                  double gamma);

// The hashing window for position `pos` of y under prompt x: the last
// `width` tokens of x || y[0..pos), front-padded with the sentinel -1.
std::vector<Token> green_context(const std::vector<Token>& prompt, const std::vector<Token>& y,
                                 std::size_t pos, int width);

class KgwScheme final : public WatermarkScheme {
public:
    KgwScheme(MarkovModel model, KgwParams params);
    std::string name() const override { return "kgw"; }
    KeyedSampler watermark(RngStream& rng) const override;
    DetectionResult detect(const SecretKey& key, const Prompt& x,
                           const TokenSequence& y) const override;

    TokenSequence generate(const SecretKey& key, const Prompt& x, long T, RngStream& rng) const;
    const KgwParams& params() const { return params_; }

private:
    MarkovModel model_;
    KgwParams params_;
};

// KGW with a key-only (context-free) green list and the z > 6 default.
class UnigramScheme final : public WatermarkScheme {
public:
    UnigramScheme(MarkovModel model, UnigramParams params);
    std::string name() const override { return "unigram"; }
    KeyedSampler watermark(RngStream& rng) const override;
    DetectionResult detect(const SecretKey& key, const Prompt& x,
                           const TokenSequence& y) const override;

    TokenSequence generate(const SecretKey& key, const Prompt& x, long T, RngStream& rng) const;
    const UnigramParams& params() const { return params_; }

private:
    MarkovModel model_;
    UnigramParams params_;
};

// Per-position key vector xi_i(v) in (0,1), derived from the key.
double exp_key_value(const SecretKey& key, long position, Token token);

// Exponential-minimum sampling: position i emits
// argmax_v xi_i(v)^(1 / p_i(v)) against the model's next-token row p_i.
// Deterministic given (key, prompt, model); marginal over uniform keys equals
// the model's own law.
TokenSequence exp_generate(const MarkovModel& model, const SecretKey& key, long n, const Prompt& x,
                           long T);

// Minimum over offset alignments of length-k windows of y against length-k
// windows of the key sequence of sum of -log xi_j(y_i).
// xi_at(j, v) supplies the key values; n is the key sequence length.
double exp_alignment_cost(const std::function<double(long, Token)>& xi_at, long n,
                          const TokenSequence& y, long k);
double exp_alignment_cost(const SecretKey& key, long n, const TokenSequence& y, long k);

class ExpScheme final : public WatermarkScheme {
public:
    ExpScheme(MarkovModel model, ExpParams params);
    std::string name() const override { return "exp"; }
    KeyedSampler watermark(RngStream& rng) const override;

    // Permutation test on the alignment cost. Resampled key sequences are
    // drawn from a stream derived from (key, y), so the result is a
    // deterministic function of (key, x, y) while the resamples behave as
    // fresh uniform keys. p floors at 1/(1+resamples).
    DetectionResult detect(const SecretKey& key, const Prompt& x,
                           const TokenSequence& y) const override;

    const ExpParams& params() const { return params_; }

private:
    MarkovModel model_;
    ExpParams params_;
};

// Hash-threshold watermark with analytically exact false-positive rate:
// the marked set is {y : derive_subkey(key, encode(y)) < target * 2^64} and
// the sampler rejection-samples the base model until it lands in the set.
class SyntheticScheme final : public WatermarkScheme {
public:
    SyntheticScheme(MarkovModel model, SyntheticParams params);
    std::string name() const override { return "synthetic"; }
    KeyedSampler watermark(RngStream& rng) const override;
    DetectionResult detect(const SecretKey& key, const Prompt& x,
                           const TokenSequence& y) const override;

    const SyntheticParams& params() const { return params_; }
    std::uint64_t threshold() const { return threshold_; }

private:
    MarkovModel model_;
    SyntheticParams params_;
    std::uint64_t threshold_;
};

}  // namespace wmlab::schemes
