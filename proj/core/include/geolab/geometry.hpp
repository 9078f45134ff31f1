#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "geolab/error.hpp"

namespace geolab::geom {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);

// Row-major 3x3.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity();
    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
    Mat3 transposed() const;
    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const;
    double trace() const { return m[0] + m[4] + m[8]; }
    double det() const;
};

// A proper rotation: orthonormal with determinant +1, both within 1e-9.
class Rotation {
public:
    Rotation() : m_(Mat3::identity()) {}
    explicit Rotation(const Mat3& m);

    static Rotation identity() { return Rotation(); }
    static Rotation from_axis_angle(const Vec3& axis, double angle);
    static Rotation rot_x(double angle);
    static Rotation rot_y(double angle);
    static Rotation rot_z(double angle);

    const Mat3& matrix() const { return m_; }
    Rotation transposed() const;
    Rotation operator*(const Rotation& o) const;
    Vec3 operator*(const Vec3& v) const { return m_ * v; }

private:
    struct Unchecked {};
    Rotation(const Mat3& m, Unchecked) : m_(m) {}
    Mat3 m_;
    friend Rotation rotation_unchecked(const Mat3& m);
};

// Internal factory that skips invariant validation; callers guarantee the
// matrix is already a rotation (e.g. products of validated rotations).
Rotation rotation_unchecked(const Mat3& m);

// Rigid transform. Convention used throughout: camera-to-world. The rotation
// maps camera-frame directions to world directions and the translation is the
// camera center in world coordinates.
struct Pose {
    Rotation rotation;
    Vec3 translation{0, 0, 0};

    std::array<double, 16> as_homogeneous() const;
    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

// H x W grid of camera-frame 3D points plus a validity mask.
struct PointMap {
    int height = 0;
    int width = 0;
    std::vector<double> points;        // h*w*3, row-major
    std::vector<std::uint8_t> valid;   // h*w

    PointMap() = default;
    PointMap(int h, int w)
        : height(h), width(w), points(static_cast<std::size_t>(h) * w * 3, 0.0),
          valid(static_cast<std::size_t>(h) * w, 0) {}

    std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * width + c; }
    Vec3 point(int r, int c) const {
        std::size_t i = index(r, c) * 3;
        return {points[i], points[i + 1], points[i + 2]};
    }
    void set_point(int r, int c, const Vec3& p, bool is_valid = true) {
        std::size_t i = index(r, c) * 3;
        points[i] = p[0];
        points[i + 1] = p[1];
        points[i + 2] = p[2];
        valid[index(r, c)] = is_valid ? 1 : 0;
    }
    bool is_valid(int r, int c) const { return valid[index(r, c)] != 0; }

    // Ground-truth invariants: finite coordinates and strictly positive z on
    // every valid pixel. Predictions are exempt.
    void validate_ground_truth() const;
};

// H x W unit normals plus a validity mask. Layout mirrors PointMap.
struct NormalMap {
    int height = 0;
    int width = 0;
    std::vector<double> normals;
    std::vector<std::uint8_t> valid;

    NormalMap() = default;
    NormalMap(int h, int w)
        : height(h), width(w), normals(static_cast<std::size_t>(h) * w * 3, 0.0),
          valid(static_cast<std::size_t>(h) * w, 0) {}

    std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * width + c; }
    Vec3 normal(int r, int c) const {
        std::size_t i = index(r, c) * 3;
        return {normals[i], normals[i + 1], normals[i + 2]};
    }
    void set_normal(int r, int c, const Vec3& n, bool is_valid = true) {
        std::size_t i = index(r, c) * 3;
        normals[i] = n[0];
        normals[i + 1] = n[1];
        normals[i + 2] = n[2];
        valid[index(r, c)] = is_valid ? 1 : 0;
    }
    bool is_valid(int r, int c) const { return valid[index(r, c)] != 0; }
};

// Depth grid; invalid pixels carry quiet NaN and a cleared mask bit.
struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;
};

// Projects a raw 9-vector (row-major 3x3) onto SO(3) via SVD: R = U V^T with
// det correction. Errors on rank-deficient input.
Rotation svd_orthogonalize(const std::array<double, 9>& raw9);

// Geodesic distance between rotations: arccos((tr(a^T b) - 1)/2) with the
// fixed clamping rule; result in [0, pi].
double geodesic_angle(const Rotation& a, const Rotation& b);

// Transform mapping camera-b coordinates into camera-a coordinates:
// R = Ra^T Rb, t = Ra^T (tb - ta).
Pose relative_pose(const Pose& a, const Pose& b);

// Four-quadrant cross-product normals. Each quadrant pairs two neighbor
// differences (right x down, down x left, left x up, up x right); valid
// quadrant normals are unit-normalized, flipped into the negative-z hemisphere
// (ties broken toward the camera), averaged and renormalized. Pixels with no
// valid quadrant, or a degenerate average, come out invalid.
NormalMap pointmap_normals(const PointMap& x);

DepthMap depth_of(const PointMap& x);

}  // namespace geolab::geom
