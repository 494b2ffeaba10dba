#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "edgi/core.hpp"

namespace edgi {

// 3x3 rotation matrix, row-major.
using Mat3 = std::array<double, 9>;
using Vec3 = std::array<double, 3>;

inline Vec3 mat3_apply(const Mat3& r, const Vec3& v) {
    return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2], r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
            r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = acc;
        }
    return c;
}

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 mat3_transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

inline double mat3_det(const Mat3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
}

inline double mat3_orthonormality_error(const Mat3& r) {
    Mat3 rtr = mat3_mul(mat3_transpose(r), r);
    Mat3 eye = mat3_identity();
    double worst = 0.0;
    for (int i = 0; i < 9; ++i) worst = std::max(worst, std::abs(rtr[i] - eye[i]));
    return worst;
}

inline bool is_rotation(const Mat3& r, double tol) {
    return mat3_orthonormality_error(r) <= tol && std::abs(mat3_det(r) - 1.0) <= tol;
}

inline Mat3 rotation_about_z(double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}

// Haar-uniform rotation via a normalized Gaussian quaternion.
inline Mat3 random_rotation(Rng& rng) {
    double q[4];
    double norm2 = 0.0;
    for (auto& x : q) {
        x = rng.normal();
        norm2 += x * x;
    }
    double inv = 1.0 / std::sqrt(norm2);
    double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

// ----------------------------------------------------------------------------
// Group element of SO(3) x Z x S_n (translations handled by the relative-
// position convention in the data).
// ----------------------------------------------------------------------------

struct GroupElement {
    Mat3 rotation = mat3_identity();
    Dim time_shift = 0;
    std::vector<Dim> permutation;  // object o moves to slot permutation[o]

    static GroupElement identity(Dim n_objects) {
        GroupElement g;
        g.permutation.resize(static_cast<size_t>(n_objects));
        std::iota(g.permutation.begin(), g.permutation.end(), Dim(0));
        return g;
    }

    void validate() const {
        constexpr double tol = 1e-10;
        if (mat3_orthonormality_error(rotation) > tol)
            throw std::invalid_argument("group element: rotation is not orthonormal");
        if (std::abs(mat3_det(rotation) - 1.0) > tol)
            throw std::invalid_argument("group element: rotation determinant is not +1");
        std::vector<bool> seen(permutation.size(), false);
        for (Dim p : permutation) {
            if (p < 0 || p >= static_cast<Dim>(permutation.size()) || seen[static_cast<size_t>(p)])
                throw std::invalid_argument("group element: permutation is not a bijection");
            seen[static_cast<size_t>(p)] = true;
        }
    }
};

inline GroupElement random_group_element(Rng& rng, Dim n_objects, Dim max_shift = 0) {
    GroupElement g = GroupElement::identity(n_objects);
    g.rotation = random_rotation(rng);
    if (max_shift > 0) g.time_shift = static_cast<Dim>(rng.uniform_index(2 * max_shift + 1)) - max_shift;
    // Fisher-Yates
    for (Dim i = n_objects - 1; i > 0; --i) {
        Dim j = static_cast<Dim>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
        std::swap(g.permutation[static_cast<size_t>(i)], g.permutation[static_cast<size_t>(j)]);
    }
    return g;
}

// g2 after g1.
inline GroupElement compose(const GroupElement& g2, const GroupElement& g1) {
    GroupElement g;
    g.rotation = mat3_mul(g2.rotation, g1.rotation);
    g.time_shift = g2.time_shift + g1.time_shift;
    g.permutation.resize(g1.permutation.size());
    for (size_t o = 0; o < g1.permutation.size(); ++o)
        g.permutation[o] = g2.permutation[static_cast<size_t>(g1.permutation[o])];
    return g;
}

// ----------------------------------------------------------------------------
// SO(3) pose embedding: first two columns of the rotation matrix, and its
// Gram-Schmidt left inverse.
// ----------------------------------------------------------------------------

inline void pose_embed(const Mat3& r, Vec3& u, Vec3& v) {
    if (!is_rotation(r, 1e-6))
        throw std::invalid_argument("pose_embed: input is not a rotation matrix");
    u = {r[0], r[3], r[6]};
    v = {r[1], r[4], r[7]};
}

inline Mat3 pose_project(const Vec3& u, const Vec3& v) {
    constexpr double tol = 1e-9;
    double nu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    if (nu < tol) throw std::invalid_argument("pose_project: first vector is degenerate");
    Vec3 c0{u[0] / nu, u[1] / nu, u[2] / nu};
    double dot = v[0] * c0[0] + v[1] * c0[1] + v[2] * c0[2];
    Vec3 w{v[0] - dot * c0[0], v[1] - dot * c0[1], v[2] - dot * c0[2]};
    double nw = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
    if (nw < tol)
        throw std::invalid_argument("pose_project: vectors are parallel (defined almost everywhere)");
    Vec3 c1{w[0] / nw, w[1] / nw, w[2] / nw};
    Vec3 c2{c0[1] * c1[2] - c0[2] * c1[1], c0[2] * c1[0] - c0[0] * c1[2],
            c0[0] * c1[1] - c0[1] * c1[0]};
    return {c0[0], c1[0], c2[0], c0[1], c1[1], c2[1], c0[2], c1[2], c2[2]};
}

}  // namespace edgi
