#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "plrn/tensor.hpp"

namespace plrn {

/// Deterministic random source. Distributions are implemented here rather
/// than with std:: distribution objects, whose sequences are
/// implementation-defined; mt19937_64 itself is fully specified.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        const int span = hi - lo + 1;
        int v = lo + static_cast<int>(uniform() * span);
        return v > hi ? hi : v;
    }

    /// Standard normal via Box-Muller.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform() * i);
            std::swap(v[i - 1], v[j >= i ? i - 1 : j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline void init_uniform(Rng& rng, const TensorPtr& t, double lo, double hi) {
    for (double& v : t->data) v = rng.uniform(lo, hi);
}

/// Xavier/Glorot uniform: +-sqrt(6 / (fan_in + fan_out)).
inline void init_xavier(Rng& rng, const TensorPtr& t, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    init_uniform(rng, t, -a, a);
}

}  // namespace plrn
