#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wmlab {

// Raised for malformed configuration; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Token = std::int32_t;

// Dense token alphabet: indices 0..size-1.
struct Vocabulary {
    int size = 0;

    explicit Vocabulary(int n) : size(n) {
        if (n < 2) throw std::invalid_argument("Vocabulary: size must be >= 2, got " + std::to_string(n));
    }
    bool contains(Token t) const { return t >= 0 && t < size; }
};

// A fixed-length output y: an ordered list of token indices.
struct TokenSequence {
    std::vector<Token> tokens;

    TokenSequence() = default;
    explicit TokenSequence(std::vector<Token> t) : tokens(std::move(t)) {}

    std::size_t length() const { return tokens.size(); }
    bool operator==(const TokenSequence&) const = default;
};

// Conditioning input x; identifier is a stable label for experiment records.
struct Prompt {
    std::vector<Token> tokens;
    std::string identifier = "prompt";

    bool operator==(const Prompt&) const = default;
};

// 32 bytes of uniformly drawn key material.
struct SecretKey {
    static constexpr std::size_t kWidth = 32;
    std::array<std::uint8_t, kWidth> bytes{};

    bool operator==(const SecretKey&) const = default;
};

// Score in [0,1]; construction rejects anything outside the interval.
struct QualityScore {
    double value = 0.0;

    QualityScore() = default;
    explicit QualityScore(double v) : value(v) {
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("QualityScore: value outside [0,1]: " + std::to_string(v));
    }
    auto operator<=>(const QualityScore&) const = default;
};

enum class QualityVerdict { win, tie, lose };

// win iff q_new - q_ref > delta, lose iff q_ref - q_new > delta, tie otherwise.
QualityVerdict compare_quality(QualityScore q_new, QualityScore q_ref, double delta);

inline bool non_lose(QualityScore q_new, QualityScore q_ref, double delta) {
    return compare_quality(q_new, q_ref, delta) != QualityVerdict::lose;
}

// Detector output: decision bit plus the raw statistic and, when the test
// produces one, a p-value.
struct DetectionResult {
    double statistic = 0.0;
    std::optional<double> p_value;
    int decision = 0;
};

// Keyed pseudorandom function: 32-byte key x byte-string -> 64-bit value.
//
// Bit-exact construction: SipHash-2-4 with k0 = LE64(key[0..8)),
// k1 = LE64(key[8..16)), over the message key[16..32) || context. Outputs
// over distinct contexts behave as independent uniform 64-bit values.
std::uint64_t derive_subkey(const SecretKey& key, std::string_view context);

// Raw SipHash-2-4 (64-bit result), exposed so the construction above is
// testable against the reference vectors.
std::uint64_t siphash24(std::uint64_t k0, std::uint64_t k1, const std::uint8_t* data, std::size_t len);

// Canonical byte encoding used wherever token sequences are hashed or keyed:
// each token as a 4-byte little-endian unsigned value, concatenated.
std::string encode_tokens(const std::vector<Token>& tokens);
inline std::string encode_tokens(const TokenSequence& y) { return encode_tokens(y.tokens); }

// Maps a 64-bit hash to [0,1) with 53-bit resolution.
inline double u64_to_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace wmlab
