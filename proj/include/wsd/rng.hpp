#pragma once

#include <cmath>
#include <cstdint>

namespace wsd {

// Splittable counter-based generator. The core is the splitmix64 mixer
// applied to a weyl sequence, so a stream is fully determined by (key, counter)
// and child streams can be derived without touching the parent's state.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)), counter_(0) {}

    uint64_t next_u64() {
        uint64_t z = key_ + counter_ * 0x9e3779b97f4a7c15ull;
        ++counter_;
        return mix(z);
    }

    // Child stream independent of this one; does not advance the parent.
    Rng split(uint64_t tag) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(tag + 0xbf58476d1ce4e5b9ull));
        child.counter_ = 0;
        return child;
    }

    double next_double() {  // [0,1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float next_float() { return static_cast<float>(next_double()); }

    // Uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    uint32_t next_below(uint32_t n) {
        // modulo bias is negligible for the small n used here
        return static_cast<uint32_t>(next_u64() % n);
    }

    // Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    float normal_f() { return static_cast<float>(normal()); }

private:
    static uint64_t mix(uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    uint64_t key_;
    uint64_t counter_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace wsd
