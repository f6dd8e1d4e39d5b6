#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace mpcs {

// xoshiro256++ with splitmix64 seeding. Hand-rolled distributions keep every
// draw reproducible across compilers; std:: distributions are
// implementation-defined. State is four u64 words, trivially serializable.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
        spare_valid_ = false;
    }

    // Derives an independent stream from (this seed, ids...). Used for the
    // per-epoch / per-worker stream contract.
    static Rng derive(uint64_t seed, std::initializer_list<uint64_t> ids) {
        uint64_t x = seed;
        uint64_t h = splitmix64(x);
        for (uint64_t id : ids) {
            x = h ^ (id + 0x9e3779b97f4a7c15ULL);
            h = splitmix64(x);
        }
        return Rng(h);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, bound). Rejection sampling, unbiased.
    uint64_t uniform_int(uint64_t bound) {
        const uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    int uniform_index(int n) { return static_cast<int>(uniform_int(static_cast<uint64_t>(n))); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller with cached spare.
    double normal() {
        if (spare_valid_) {
            spare_valid_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        spare_valid_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) {
        s_ = s;
        spare_valid_ = false;
    }

    std::string state_string() const {
        std::string out;
        for (int i = 0; i < 4; ++i) out += (i ? ":" : "") + std::to_string(s_[i]);
        return out;
    }
    static Rng from_state_string(const std::string& text) {
        Rng r(0);
        std::array<uint64_t, 4> s{};
        size_t pos = 0;
        for (int i = 0; i < 4; ++i) {
            size_t next = text.find(':', pos);
            s[i] = std::stoull(text.substr(pos, next - pos));
            pos = (next == std::string::npos) ? text.size() : next + 1;
        }
        r.set_state(s);
        return r;
    }

private:
    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> s_{};
    double spare_ = 0.0;
    bool spare_valid_ = false;
};

}  // namespace mpcs
