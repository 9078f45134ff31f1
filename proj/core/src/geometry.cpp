#include "geolab/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <string>

namespace geolab::geom {

namespace {
constexpr double kRotationTol = 1e-9;
constexpr double kArccosClamp = 1e-7;
}  // namespace

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
    double n = norm(a);
    if (n < 1e-300) throw Error("normalized: zero-length vector");
    return {a[0] / n, a[1] / n, a[2] / n};
}

Mat3 Mat3::identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
            r(i, j) = s;
        }
    return r;
}

Vec3 Mat3::operator*(const Vec3& v) const {
    Vec3 r;
    for (int i = 0; i < 3; ++i)
        r[static_cast<std::size_t>(i)] =
            (*this)(i, 0) * v[0] + (*this)(i, 1) * v[1] + (*this)(i, 2) * v[2];
    return r;
}

double Mat3::det() const {
    const auto& a = *this;
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Rotation::Rotation(const Mat3& m) : m_(m) {
    Mat3 mtm = m.transposed() * m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double expected = i == j ? 1.0 : 0.0;
            if (std::fabs(mtm(i, j) - expected) > kRotationTol) {
                throw Error("rotation: matrix is not orthonormal within 1e-9");
            }
        }
    if (std::fabs(m.det() - 1.0) > kRotationTol) {
        throw Error("rotation: determinant is not +1 within 1e-9");
    }
}

Rotation rotation_unchecked(const Mat3& m) { return Rotation(m, Rotation::Unchecked{}); }

Rotation Rotation::from_axis_angle(const Vec3& axis, double angle) {
    Vec3 u = normalized(axis);
    double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    Mat3 m;
    m(0, 0) = c + u[0] * u[0] * t;
    m(0, 1) = u[0] * u[1] * t - u[2] * s;
    m(0, 2) = u[0] * u[2] * t + u[1] * s;
    m(1, 0) = u[1] * u[0] * t + u[2] * s;
    m(1, 1) = c + u[1] * u[1] * t;
    m(1, 2) = u[1] * u[2] * t - u[0] * s;
    m(2, 0) = u[2] * u[0] * t - u[1] * s;
    m(2, 1) = u[2] * u[1] * t + u[0] * s;
    m(2, 2) = c + u[2] * u[2] * t;
    return rotation_unchecked(m);
}

Rotation Rotation::rot_x(double a) { return from_axis_angle({1, 0, 0}, a); }
Rotation Rotation::rot_y(double a) { return from_axis_angle({0, 1, 0}, a); }
Rotation Rotation::rot_z(double a) { return from_axis_angle({0, 0, 1}, a); }

Rotation Rotation::transposed() const { return rotation_unchecked(m_.transposed()); }

Rotation Rotation::operator*(const Rotation& o) const { return rotation_unchecked(m_ * o.m_); }

std::array<double, 16> Pose::as_homogeneous() const {
    std::array<double, 16> h{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) h[static_cast<std::size_t>(i * 4 + j)] = rotation.matrix()(i, j);
        h[static_cast<std::size_t>(i * 4 + 3)] = translation[static_cast<std::size_t>(i)];
    }
    h[15] = 1.0;
    return h;
}

void PointMap::validate_ground_truth() const {
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            if (!is_valid(r, c)) continue;
            Vec3 p = point(r, c);
            for (double v : p) {
                if (!std::isfinite(v)) {
                    throw Error("pointmap: non-finite coordinate at valid pixel (" +
                                std::to_string(r) + "," + std::to_string(c) + ")");
                }
            }
            if (p[2] <= 0.0) {
                throw Error("pointmap: non-positive depth at valid pixel (" + std::to_string(r) +
                            "," + std::to_string(c) + ")");
            }
        }
    }
}

Rotation svd_orthogonalize(const std::array<double, 9>& raw9) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = raw9[static_cast<std::size_t>(i * 3 + j)];
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double sigma_min = svd.singularValues()(2);
    if (sigma_min < 1e-12) {
        throw Error("svd_orthogonalize: rank-deficient input (sigma_min=" +
                    std::to_string(sigma_min) + ")");
    }
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    Eigen::Matrix3d r = u * v.transpose();
    Mat3 out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out(i, j) = r(i, j);
    return rotation_unchecked(out);
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
    Mat3 rel = a.matrix().transposed() * b.matrix();
    double c = (rel.trace() - 1.0) / 2.0;
    c = std::min(std::max(c, -1.0 + kArccosClamp), 1.0 - kArccosClamp);
    return std::acos(c);
}

Pose relative_pose(const Pose& a, const Pose& b) {
    Pose rel;
    Rotation rat = a.rotation.transposed();
    rel.rotation = rat * b.rotation;
    rel.translation = rat * (b.translation - a.translation);
    return rel;
}

NormalMap pointmap_normals(const PointMap& x) {
    NormalMap out(x.height, x.width);
    // Neighbor offsets in the quadrant order right, down, left, up.
    const int dr[4] = {0, 1, 0, -1};
    const int dc[4] = {1, 0, -1, 0};
    for (int r = 0; r < x.height; ++r) {
        for (int c = 0; c < x.width; ++c) {
            if (!x.is_valid(r, c)) continue;
            Vec3 p = x.point(r, c);
            Vec3 d[4] = {};
            bool have[4];
            for (int k = 0; k < 4; ++k) {
                int rr = r + dr[k], cc = c + dc[k];
                have[k] = rr >= 0 && rr < x.height && cc >= 0 && cc < x.width && x.is_valid(rr, cc);
                if (have[k]) d[k] = x.point(rr, cc) - p;
            }
            Vec3 acc{0, 0, 0};
            int used = 0;
            for (int k = 0; k < 4; ++k) {
                int k2 = (k + 1) % 4;
                if (!have[k] || !have[k2]) continue;
                Vec3 n = cross(d[k], d[k2]);
                double len = norm(n);
                if (len < 1e-15) continue;
                n = (1.0 / len) * n;
                if (n[2] > 0.0 || (n[2] == 0.0 && dot(n, p) > 0.0)) n = -1.0 * n;
                acc = acc + n;
                ++used;
            }
            if (used == 0) continue;
            double len = norm(acc);
            if (len < 1e-12) continue;
            out.set_normal(r, c, (1.0 / len) * acc);
        }
    }
    return out;
}

DepthMap depth_of(const PointMap& x) {
    DepthMap d;
    d.height = x.height;
    d.width = x.width;
    d.depth.assign(static_cast<std::size_t>(x.height) * x.width,
                   std::numeric_limits<double>::quiet_NaN());
    d.valid.assign(static_cast<std::size_t>(x.height) * x.width, 0);
    for (int r = 0; r < x.height; ++r) {
        for (int c = 0; c < x.width; ++c) {
            if (!x.is_valid(r, c)) continue;
            d.depth[x.index(r, c)] = x.point(r, c)[2];
            d.valid[x.index(r, c)] = 1;
        }
    }
    return d;
}

}  // namespace geolab::geom
