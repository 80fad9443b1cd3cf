// Seeded random number generation with self-contained samplers.
//
// The standard library distributions are implementation-defined, so every
// draw here is hand-rolled on top of mt19937_64. Given the same seed, the
// stream of values is identical across compilers and standard libraries,
// which is what the reproducibility contract of the training loop needs.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chimera {

// Derives independent sub-seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master ^ (0xA076'1D64'78BD'642FULL * (stream + 1));
    return splitmix64(s);
}

class Rng {
public:
    Rng() : engine_(0xC0FFEEULL) {}
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0,1) with 53 bits of mantissa.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n) by rejection; n must be positive.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    int index(std::size_t n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    // Box-Muller without the cached spare, so the engine state alone
    // captures the sampler state (needed for checkpointing).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    // Marsaglia-Tsang; the alpha < 1 case is boosted through alpha + 1.
    double gamma(double alpha) {
        if (alpha <= 0.0) throw std::invalid_argument("Rng::gamma: alpha must be positive");
        if (alpha < 1.0) {
            const double u = uniform01();
            return gamma(alpha + 1.0) * std::pow(u > 0 ? u : 0x1.0p-53, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Beta(a, b) via two gammas, clamped into the open interval.
    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        double r = x / (x + y);
        if (r < 1e-12) r = 1e-12;
        if (r > 1.0 - 1e-12) r = 1.0 - 1e-12;
        return r;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Draws k distinct indices from [0, n); k <= n.
    std::vector<int> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) throw std::invalid_argument("Rng::sample_without_replacement: k > n");
        std::vector<int> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(below(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw std::runtime_error("Rng::load_state: malformed engine state");
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace chimera
