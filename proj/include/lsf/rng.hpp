#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace lsf {

// Deterministic random stream. mt19937_64 output is standardized, but the
// std distributions are not, so uniform/normal are derived here by hand to
// keep runs bit-identical across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix(seed)) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    // Box-Muller; one fresh pair per call keeps the stream position
    // independent of caller parity.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double z = r * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
        return mean + stddev * z;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[gen_() % i]);
        }
    }

    // Independent substream for a named component; same seed + same tag
    // always yields the same stream regardless of draws made on the parent.
    Rng fork(std::uint64_t tag) const {
        return Rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace lsf
