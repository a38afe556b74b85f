#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "wmlab/core.hpp"

namespace wmlab {

// Labeled deterministic random stream. A stream is identified by
// (master_seed, label); identical pairs yield identical draw sequences and
// distinct labels behave as independent streams.
//
// Derivation, bit-exact: stream seed = SipHash-2-4(k0 = master_seed,
// k1 = 0x77ca3c0f1b0ad7d5, label bytes), feeding std::mt19937_64 (whose
// sequence is fully specified by the standard). All draw primitives below
// avoid std::uniform_*_distribution, which is not portable bit-for-bit.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string label);

    std::uint64_t master_seed() const { return master_seed_; }
    const std::string& label() const { return label_; }

    // Child stream with label "<label>/<suffix>".
    RngStream substream(const std::string& suffix) const;

    std::uint64_t next_u64();

    // Uniform on [0,1) with 53-bit resolution.
    double uniform();

    // Uniform integer in [0, n); n >= 1. Unbiased via rejection.
    std::uint64_t uniform_below(std::uint64_t n);

    // Standard normal via Box-Muller (pairless variant: one draw per call).
    double normal();

    // Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
    double gamma(double shape);

    // Index drawn from an unnormalized nonnegative weight vector.
    std::size_t categorical(const std::vector<double>& weights);

    // Fresh uniformly random 32-byte key.
    SecretKey random_key();

private:
    std::uint64_t master_seed_;
    std::string label_;
    std::mt19937_64 gen_;
};

}  // namespace wmlab
