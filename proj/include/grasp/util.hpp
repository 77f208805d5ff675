#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace grasp {

// FNV-1a, used as the 64-bit checksum for tensor payloads and model digests.
class Fnv1a64 {
  public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return state_; }

  private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    Fnv1a64 h;
    h.update(data, n);
    return h.digest();
}

// Deterministic Gaussian stream. Box-Muller on top of mt19937_64 rather than
// std::normal_distribution, whose output is implementation-defined.
class GaussianStream {
  public:
    explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

    double next(double stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return spare_ * stddev;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta) * stddev;
    }

    std::uint64_t raw() { return engine_(); }

  private:
    double uniform01() {
        // 53-bit mantissa, uniform in [0, 1)
        return (engine_() >> 11) * 0x1.0p-53;
    }

    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace grasp
