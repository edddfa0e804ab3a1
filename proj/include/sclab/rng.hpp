#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace sclab {

// Sub-stream tags. A consumer stream is seeded with master_seed XOR tag, so
// dataset generation, weight init, minibatch shuffling and metric-time
// sampling never share a stream even though a run is configured by a single
// master seed.
inline constexpr std::uint64_t kSeedTagTrainData = 0x5343'4441'5441'5452ULL;
inline constexpr std::uint64_t kSeedTagTestData  = 0x5343'4441'5441'5445ULL;
inline constexpr std::uint64_t kSeedTagInit      = 0x5343'494e'4954'5731ULL;
inline constexpr std::uint64_t kSeedTagShuffle   = 0x5343'5348'5546'464cULL;
inline constexpr std::uint64_t kSeedTagEval      = 0x5343'4556'414c'5331ULL;

/// Deterministic random stream. The engine is std::mt19937_64 (fully
/// specified by the standard, hence reproducible across platforms); all
/// distributions are implemented here on top of raw 64-bit draws because the
/// standard library's distribution objects are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform on [0, 1) with 53 bits of mantissa.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        shuffle(p);
        return p;
    }

    /// `k` distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("Rng::sample_without_replacement: k > n");
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = static_cast<std::size_t>(below(n - i));
            out.push_back(pool[j]);
            std::swap(pool[j], pool[n - i - 1]);
        }
        return out;
    }

private:
    std::mt19937_64 gen_;
};

inline Rng substream(std::uint64_t master_seed, std::uint64_t tag) {
    return Rng(master_seed ^ tag);
}

} // namespace sclab
