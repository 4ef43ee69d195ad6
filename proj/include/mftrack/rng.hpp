#ifndef MFTRACK_RNG_HPP
#define MFTRACK_RNG_HPP

#include <cmath>
#include <cstdint>

namespace mft {

// Deterministic RNG. std::mt19937_64 keeps state portable, but the standard
// distributions are implementation-defined, so the draws below are hand
// rolled to make artifacts byte-identical across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ULL) : s_(splitmix(seed)) {}

    uint64_t next_u64() {
        // xorshift128+ style step on splitmix-derived state
        uint64_t x = s_[0];
        const uint64_t y = s_[1];
        s_[0] = y;
        x ^= x << 23;
        s_[1] = x ^ y ^ (x >> 17) ^ (y >> 26);
        return s_[1] + y;
    }

    // Uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi <= lo) return lo;
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    // Box-Muller, no spare caching so the draw sequence stays simple
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derive an independent child stream
    Rng fork(uint64_t stream) {
        uint64_t base = next_u64();
        return Rng(base ^ (0xbf58476d1ce4e5b9ULL * (stream + 1)));
    }

private:
    struct State {
        uint64_t v[2];
        uint64_t& operator[](int i) { return v[i]; }
        uint64_t operator[](int i) const { return v[i]; }
    };

    static State splitmix(uint64_t seed) {
        State st{};
        for (int i = 0; i < 2; ++i) {
            seed += 0x9e3779b97f4a7c15ULL;
            uint64_t z = seed;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            st.v[i] = z ^ (z >> 31);
        }
        if (st.v[0] == 0 && st.v[1] == 0) st.v[0] = 1;
        return st;
    }

    State s_;
};

}  // namespace mft

#endif
