#include "wmlab/core.hpp"

namespace wmlab {

QualityVerdict compare_quality(QualityScore q_new, QualityScore q_ref, double delta) {
    if (delta < 0.0) throw std::invalid_argument("compare_quality: delta must be >= 0");
    const double diff = q_new.value - q_ref.value;
    if (diff > delta) return QualityVerdict::win;
    if (-diff > delta) return QualityVerdict::lose;
    return QualityVerdict::tie;
}

namespace {

inline std::uint64_t rotl(std::uint64_t x, int b) { return (x << b) | (x >> (64 - b)); }

inline void sip_round(std::uint64_t& v0, std::uint64_t& v1, std::uint64_t& v2, std::uint64_t& v3) {
    v0 += v1; v1 = rotl(v1, 13); v1 ^= v0; v0 = rotl(v0, 32);
    v2 += v3; v3 = rotl(v3, 16); v3 ^= v2;
    v0 += v3; v3 = rotl(v3, 21); v3 ^= v0;
    v2 += v1; v1 = rotl(v1, 17); v1 ^= v2; v2 = rotl(v2, 32);
}

// Explicit little-endian decode so results do not depend on host byte order.
inline std::uint64_t load_le64(const std::uint8_t* p) {
    return static_cast<std::uint64_t>(p[0]) | static_cast<std::uint64_t>(p[1]) << 8 |
           static_cast<std::uint64_t>(p[2]) << 16 | static_cast<std::uint64_t>(p[3]) << 24 |
           static_cast<std::uint64_t>(p[4]) << 32 | static_cast<std::uint64_t>(p[5]) << 40 |
           static_cast<std::uint64_t>(p[6]) << 48 | static_cast<std::uint64_t>(p[7]) << 56;
}

}  // namespace

std::uint64_t siphash24(std::uint64_t k0, std::uint64_t k1, const std::uint8_t* data, std::size_t len) {
    std::uint64_t v0 = 0x736f6d6570736575ULL ^ k0;
    std::uint64_t v1 = 0x646f72616e646f6dULL ^ k1;
    std::uint64_t v2 = 0x6c7967656e657261ULL ^ k0;
    std::uint64_t v3 = 0x7465646279746573ULL ^ k1;

    const std::size_t whole = len & ~std::size_t{7};
    for (std::size_t i = 0; i < whole; i += 8) {
        const std::uint64_t m = load_le64(data + i);
        v3 ^= m;
        sip_round(v0, v1, v2, v3);
        sip_round(v0, v1, v2, v3);
        v0 ^= m;
    }

    std::uint64_t last = static_cast<std::uint64_t>(len & 0xff) << 56;
    for (std::size_t i = 0; i < (len & 7); ++i)
        last |= static_cast<std::uint64_t>(data[whole + i]) << (8 * i);
    v3 ^= last;
    sip_round(v0, v1, v2, v3);
    sip_round(v0, v1, v2, v3);
    v0 ^= last;

    v2 ^= 0xff;
    sip_round(v0, v1, v2, v3);
    sip_round(v0, v1, v2, v3);
    sip_round(v0, v1, v2, v3);
    sip_round(v0, v1, v2, v3);
    return v0 ^ v1 ^ v2 ^ v3;
}

std::uint64_t derive_subkey(const SecretKey& key, std::string_view context) {
    const std::uint64_t k0 = load_le64(key.bytes.data());
    const std::uint64_t k1 = load_le64(key.bytes.data() + 8);
    std::vector<std::uint8_t> msg;
    msg.reserve(16 + context.size());
    msg.insert(msg.end(), key.bytes.begin() + 16, key.bytes.end());
    msg.insert(msg.end(), context.begin(), context.end());
    return siphash24(k0, k1, msg.data(), msg.size());
}

std::string encode_tokens(const std::vector<Token>& tokens) {
    std::string out;
    out.reserve(tokens.size() * 4);
    for (Token t : tokens) {
        const auto u = static_cast<std::uint32_t>(t);
        out.push_back(static_cast<char>(u & 0xff));
        out.push_back(static_cast<char>((u >> 8) & 0xff));
        out.push_back(static_cast<char>((u >> 16) & 0xff));
        out.push_back(static_cast<char>((u >> 24) & 0xff));
    }
    return out;
}

}  // namespace wmlab
