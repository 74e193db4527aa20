#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace multipoet {

/**
 * Counter-based random generator (Philox 4x64, 10 rounds).
 *
 * Output matches the Random123 reference bit for bit. Every consumer of
 * randomness in this library owns a stream identified by
 * (seed, purpose, a, b); streams are independent of thread scheduling,
 * which keeps parallel simulations reproducible.
 */
class Philox {
public:
    Philox(std::uint64_t key0, std::uint64_t key1) : key_{key0, key1} {}

    std::uint64_t next_u64() {
        if (buffer_pos_ == 4) {
            block(counter_, key_, buffer_);
            increment(counter_);
            buffer_pos_ = 0;
        }
        return buffer_[buffer_pos_++];
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Rejection keeps the draw unbiased.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Standard normal via Box-Muller (both values of the pair are used).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    /// Gamma(shape, rate) via Marsaglia-Tsang squeeze, shape >= 1.
    double gamma(double shape, double rate) {
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v / rate;
            }
        }
    }

    /// Raw keyed block, exposed for seed derivation and tests.
    static std::array<std::uint64_t, 4> block(const std::array<std::uint64_t, 4>& counter,
                                              const std::array<std::uint64_t, 2>& key) {
        std::array<std::uint64_t, 4> out;
        block(counter, key, out);
        return out;
    }

private:
    static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
    static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
    static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;

    static void mul_hi_lo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
        const __uint128_t prod = static_cast<__uint128_t>(a) * b;
        hi = static_cast<std::uint64_t>(prod >> 64);
        lo = static_cast<std::uint64_t>(prod);
    }

    static void block(std::array<std::uint64_t, 4> x, std::array<std::uint64_t, 2> k,
                      std::array<std::uint64_t, 4>& out) {
        for (int round = 0; round < 10; ++round) {
            std::uint64_t hi0, lo0, hi1, lo1;
            mul_hi_lo(kMul0, x[0], hi0, lo0);
            mul_hi_lo(kMul1, x[2], hi1, lo1);
            x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        out = x;
    }

    static void increment(std::array<std::uint64_t, 4>& counter) {
        for (auto& word : counter) {
            if (++word != 0) break;
        }
    }

    std::array<std::uint64_t, 2> key_;
    std::array<std::uint64_t, 4> counter_{0, 0, 0, 0};
    std::array<std::uint64_t, 4> buffer_{};
    int buffer_pos_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Well-known stream purposes; listed here so the mapping from seed to
/// stream is documented in one place.
enum class Stream : std::uint64_t {
    mu_global = 1,
    global_loadings = 2,
    mu_local = 3,
    local_loadings = 4,
    error_cov = 5,
    global_factors = 6,
    local_factors = 7,
    idiosyncratic = 8,
    perturbation = 9,
    kmeans = 10,
    derive = 11,
    generic = 12,
};

/// Stream handle: (seed, purpose, a, b) fully determines the sequence.
inline Philox make_stream(std::uint64_t seed, Stream purpose, std::uint64_t a = 0,
                          std::uint64_t b = 0) {
    const auto mixed = Philox::block({static_cast<std::uint64_t>(purpose), a, b, 0},
                                     {seed, 0x6d756c7469706f65ULL});
    return Philox(mixed[0], mixed[1]);
}

/// Deterministically derives a child seed, e.g. one per replication.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return Philox::block({a, b, 0, 0}, {seed, static_cast<std::uint64_t>(Stream::derive)})[0];
}

}  // namespace multipoet
