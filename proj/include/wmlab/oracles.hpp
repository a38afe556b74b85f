#pragma once

#include <functional>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/markov.hpp"

namespace wmlab {

// Attacker capabilities. The quality oracle is deterministic; the
// perturbation oracle is randomized through the supplied stream.
using QualityOracle = std::function<QualityScore(const Prompt&, const TokenSequence&)>;
using PerturbationOracle =
    std::function<TokenSequence(const Prompt&, const TokenSequence&, RngStream&)>;

// Deterministic quality function: mean per-token log-likelihood under a fixed
// reference chain (clamped below at floor_log_prob per token), mapped through
// the affine scale*(L - floor) and clamped into [0,1]. Independent of which
// generator produced the sequence.
struct ReferenceQuality {
    MarkovModel reference_model;
    double floor_log_prob = -20.0;  // nats per token
    double scale = 0.0;             // set by calibrate() or explicitly

    QualityScore operator()(const Prompt& x, const TokenSequence& y) const;
};

// Chooses the affine scale so the reference chain's own sampled sequences
// score target_mean on average: scale = target_mean / (mean_loglik - floor).
// Returns the Monte Carlo mean per-token log-likelihood it calibrated against.
double calibrate_quality(ReferenceQuality& q, const Prompt& x, long samples, double target_mean,
                         RngStream& rng);

// Randomized span-resampling perturbation: pick a uniformly random span start,
// redraw span_length tokens from the proposal chain conditioned on the left
// context (top-p truncated), keep everything else. Output length equals input
// length and at most span_length positions change.
struct SpanPerturber {
    MarkovModel proposal_model;
    long span_length = 1;
    double top_p = 1.0;

    void validate() const;
};

TokenSequence perturb(const SpanPerturber& p, const Prompt& x, const TokenSequence& y, RngStream& rng);

// Keeps the smallest prefix of tokens (sorted by descending probability, ties
// by index) whose cumulative probability reaches top_p, renormalized. Shared
// by sampling and the exact kernel so the two agree bit-for-bit.
std::vector<double> top_p_truncate(const double* row, int vocab, double top_p);

// Exhaustive fixed-length output space with lexicographic indexing.
struct EnumeratedSpace {
    Vocabulary vocab;
    long length;
    std::vector<TokenSequence> outputs;

    std::size_t size() const { return outputs.size(); }
    std::size_t index_of(const TokenSequence& y) const;  // mixed-radix code
};

inline constexpr std::size_t kEnumerationCap = 100000;

// All vocab^length sequences in lexicographic order; refuses past the cap.
EnumeratedSpace enumerate_outputs(Vocabulary vocab, long length, std::size_t cap = kEnumerationCap);

// Exact output law of perturb(p, x, y, .): dense probability vector over the
// enumerated space, computed by summing over span starts and span fills.
// Sums to 1 within 1e-10.
std::vector<double> perturbation_kernel(const SpanPerturber& p, const Prompt& x,
                                        const TokenSequence& y, const EnumeratedSpace& space);

}  // namespace wmlab
