#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace colonformer {

using Scalar = double;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic RNG used for weight init, splits and shuffles.
/// All draws go through explicit algorithms (no std::uniform_int_distribution /
/// std::shuffle) so byte-identical results do not depend on the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // unbiased integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw Error("Rng::next_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    Scalar uniform() {  // [0, 1)
        return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53;
    }

    Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

    Scalar normal(Scalar mean = 0.0, Scalar stddev = 1.0) {
        // Box-Muller, cached second value
        if (has_cached_) {
            has_cached_ = false;
            return mean + stddev * cached_;
        }
        Scalar u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const Scalar r = std::sqrt(-2.0 * std::log(u1));
        const Scalar theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // normal clipped to +/- 2 stddev by resampling
    Scalar trunc_normal(Scalar stddev) {
        Scalar x;
        do {
            x = normal(0.0, stddev);
        } while (x < -2.0 * stddev || x > 2.0 * stddev);
        return x;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {  // Fisher-Yates
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[next_below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    Scalar cached_ = 0.0;
    bool has_cached_ = false;
};

// FNV-1a, used to fingerprint configs and manifests
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace colonformer
