#include "wmlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace wmlab {

namespace {
constexpr std::uint64_t kStreamDomain = 0x77ca3c0f1b0ad7d5ULL;
}

RngStream::RngStream(std::uint64_t master_seed, std::string label)
    : master_seed_(master_seed), label_(std::move(label)) {
    const std::uint64_t seed = siphash24(
        master_seed_, kStreamDomain,
        reinterpret_cast<const std::uint8_t*>(label_.data()), label_.size());
    gen_.seed(seed);
}

RngStream RngStream::substream(const std::string& suffix) const {
    return RngStream(master_seed_, label_ + "/" + suffix);
}

std::uint64_t RngStream::next_u64() { return gen_(); }

double RngStream::uniform() { return u64_to_unit(next_u64()); }

std::uint64_t RngStream::uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be >= 1");
    if (n == 1) return 0;
    const std::uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
    const std::uint64_t limit = UINT64_MAX - rem;        // inclusive
    std::uint64_t x = next_u64();
    while (rem != 0 && x > limit) x = next_u64();
    return x % n;
}

double RngStream::normal() {
    // Box-Muller; u clamped away from 0 so log stays finite.
    double u = uniform();
    if (u <= 0.0) u = 0x1.0p-53;
    const double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925286766559 * v);
}

double RngStream::gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be > 0");
    if (shape < 1.0) {
        double u = uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::size_t RngStream::categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("categorical: negative weight");
        total += w;
    }
    if (!(total > 0.0)) throw std::invalid_argument("categorical: all weights zero");
    const double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    // Round-off fell past the end; return the last positive-weight index.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return weights.size() - 1;
}

SecretKey RngStream::random_key() {
    SecretKey key;
    for (std::size_t i = 0; i < SecretKey::kWidth; i += 8) {
        const std::uint64_t w = next_u64();
        for (std::size_t b = 0; b < 8; ++b)
            key.bytes[i + b] = static_cast<std::uint8_t>((w >> (8 * b)) & 0xff);
    }
    return key;
}

}  // namespace wmlab
