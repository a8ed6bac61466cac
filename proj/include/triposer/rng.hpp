// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "triposer/tensor.hpp"

namespace triposer {

// Deterministic random source. std::mt19937_64 is bit-exact across platforms;
// the uniform/normal transforms are implemented here because the standard
// distributions are not portable. One normal() consumes exactly two engine
// draws, so the stream position is a pure function of the call history.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Inclusive range. Modulo bias is below 2^-53 for the spans used here.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Box-Muller, cosine branch only (fixed two-draw consumption).
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    void fill_normal(Tensor& t) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal();
    }

    void fill_uniform(Tensor& t, double a, double b) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(a, b);
    }

    // splitmix64 finalizer over (seed, stream); used to derive independent
    // per-frame / per-sample streams from one master seed.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // mt19937_64 stream state round-trips losslessly through decimal text.
    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace triposer
