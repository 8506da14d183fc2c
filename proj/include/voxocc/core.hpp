// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace voxocc {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct Vec2 {
    double x = 0.0, y = 0.0;
};

struct Vec3i {
    int x = 0, y = 0, z = 0;

    bool operator==(const Vec3i& o) const = default;
    bool operator<(const Vec3i& o) const {
        if (x != o.x) return x < o.x;
        if (y != o.y) return y < o.y;
        return z < o.z;
    }
};

// Grid extents (H, W, Z) = voxel counts along x, y, z.
struct GridDims {
    int h = 0, w = 0, z = 0;

    bool operator==(const GridDims& o) const = default;
    std::int64_t count() const {
        return std::int64_t(h) * std::int64_t(w) * std::int64_t(z);
    }
    bool contains(const Vec3i& v) const {
        return v.x >= 0 && v.x < h && v.y >= 0 && v.y < w && v.z >= 0 && v.z < z;
    }
    // x-fastest linear index.
    std::int64_t index(const Vec3i& v) const {
        return std::int64_t(v.x) + std::int64_t(h) * (std::int64_t(v.y) + std::int64_t(w) * v.z);
    }
    Vec3i coord(std::int64_t idx) const {
        const int cx = int(idx % h);
        const int cy = int((idx / h) % w);
        const int cz = int(idx / (std::int64_t(h) * w));
        return {cx, cy, cz};
    }
};

// Counter-based deterministic RNG (splitmix64 core). Results depend only on
// the seed and the call sequence, never on platform library internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (uses exactly two draws per pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = std::max(uniform(), 1e-300);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Mixes independent seed components into one stream seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    return z ^ (z >> 27);
}

} // namespace voxocc
