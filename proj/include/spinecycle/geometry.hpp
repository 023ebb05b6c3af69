#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace spinecycle {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

inline double norm(const Vec3& v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

/// Axis-aligned box in world millimetres. An empty box has min > max.
struct Box3 {
    Vec3 min{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
    Vec3 max{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity()};

    bool empty() const { return min.x > max.x || min.y > max.y || min.z > max.z; }

    void expand(const Vec3& p) {
        for (std::size_t i = 0; i < 3; ++i) {
            min[i] = std::min(min[i], p[i]);
            max[i] = std::max(max[i], p[i]);
        }
    }

    void expand(const Box3& b) {
        if (b.empty()) return;
        expand(b.min);
        expand(b.max);
    }

    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
               p.z <= max.z;
    }

    bool strictly_contains(const Vec3& p) const {
        return p.x > min.x && p.x < max.x && p.y > min.y && p.y < max.y && p.z > min.z &&
               p.z < max.z;
    }

    static Box3 around(const Vec3& c, double half) {
        Box3 b;
        b.min = c - Vec3{half, half, half};
        b.max = c + Vec3{half, half, half};
        return b;
    }

    friend bool operator==(const Box3&, const Box3&) = default;
};

/// Patient-frame directions. World coordinates are LPS: +x Left, +y Posterior, +z Superior.
enum class AxisCode { L, R, P, A, S, I };

/// World axis (0, 1, 2) that an axis code runs along.
constexpr int world_axis(AxisCode c) {
    switch (c) {
    case AxisCode::L:
    case AxisCode::R: return 0;
    case AxisCode::P:
    case AxisCode::A: return 1;
    case AxisCode::S:
    case AxisCode::I: return 2;
    }
    return 0;
}

/// +1 when increasing index moves along the positive LPS world axis.
constexpr double axis_sign(AxisCode c) {
    return (c == AxisCode::L || c == AxisCode::P || c == AxisCode::S) ? 1.0 : -1.0;
}

char axis_code_char(AxisCode c);
AxisCode axis_code_from_char(char c);

using Orientation = std::array<AxisCode, 3>;

inline constexpr Orientation kLPS{AxisCode::L, AxisCode::P, AxisCode::S};

/// True when the three codes cover each world axis exactly once.
bool valid_orientation(const Orientation& o);

}  // namespace spinecycle
