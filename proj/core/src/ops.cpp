#include "geolab/ops.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace geolab::ops {
namespace {

constexpr double kArccosClamp = 1e-7;     // arccos argument kept inside [-1+c, 1-c]
constexpr double kArccosDomainTol = 1e-6; // beyond [-1-tol, 1+tol] is a caller bug
constexpr double kNormEps2 = 1e-32;       // additive guard inside l2 norms

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

struct ConstView {
    const Shape* shape;
    const double* data;
    std::int64_t n;
};

ConstView view_of(const Tensor& t) {
    return ConstView{&t.shape, t.data.data(), t.numel()};
}

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
    throw Error(std::string(op_name(kind)) + ": " + detail);
}

void require(bool cond, OpKind kind, const std::string& detail) {
    if (!cond) shape_error(kind, detail);
}

std::vector<std::int64_t> strides_of(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::int64_t i = static_cast<std::int64_t>(s.size()) - 2; i >= 0; --i) {
        st[i] = st[i + 1] * s[i + 1];
    }
    return st;
}

// Shape of an elementwise binary op; one side may be a single element.
enum class BinMode { Full, ScalarLeft, ScalarRight };

BinMode binary_mode(OpKind kind, const Shape& a, const Shape& b) {
    if (a == b) return BinMode::Full;
    if (numel(a) == 1) return BinMode::ScalarLeft;
    if (numel(b) == 1) return BinMode::ScalarRight;
    shape_error(kind, "shape mismatch " + shape_str(a) + " vs " + shape_str(b) +
                          " (only scalar-tensor broadcasting is supported)");
}

double huber_value(double r, double d) {
    double a = std::fabs(r);
    return a <= d ? 0.5 * r * r : d * (a - 0.5 * d);
}

double huber_slope(double r, double d) {
    double a = std::fabs(r);
    return a <= d ? r : (r > 0 ? d : -d);
}

// Sums a small set of per-block partials in ascending value order, making the
// result independent of block order.
double sorted_sum(std::vector<double>& partials) {
    std::sort(partials.begin(), partials.end());
    double s = 0.0;
    for (double v : partials) s += v;
    return s;
}

struct Svd3Result {
    Eigen::Matrix3d r;
    Eigen::Matrix3d m;
    double sigma_min = 0.0;
};

Svd3Result svd_orthogonalize3_impl(const double* data9) {
    Eigen::Matrix3d m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m(i, j) = data9[i * 3 + j];
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Svd3Result out;
    out.m = m;
    out.sigma_min = svd.singularValues()(2);
    if (out.sigma_min < 1e-12) {
        throw Error("svd_orthogonalize3: rank-deficient input (sigma_min=" +
                    std::to_string(out.sigma_min) + ")");
    }
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d& v = svd.matrixV();
    if ((u * v.transpose()).determinant() < 0.0) u.col(2) = -u.col(2);
    out.r = u * v.transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Forward kernels. Pure functions of (attrs, inputs); used by the eager path
// and by Graph::replay, so both produce identical bits.
// ---------------------------------------------------------------------------

struct KernelResult {
    Shape shape;
    std::vector<double> data;
};

KernelResult eval_binary(OpKind kind, const ConstView& a, const ConstView& b) {
    BinMode mode = binary_mode(kind, *a.shape, *b.shape);
    const Shape& out_shape = (mode == BinMode::ScalarLeft) ? *b.shape : *a.shape;
    std::int64_t n = numel(out_shape);
    std::vector<double> out(static_cast<std::size_t>(n));
    auto pick_a = [&](std::int64_t i) { return mode == BinMode::ScalarLeft ? a.data[0] : a.data[i]; };
    auto pick_b = [&](std::int64_t i) { return mode == BinMode::ScalarRight ? b.data[0] : b.data[i]; };
    switch (kind) {
        case OpKind::Add:
            for (std::int64_t i = 0; i < n; ++i) out[i] = pick_a(i) + pick_b(i);
            break;
        case OpKind::Sub:
            for (std::int64_t i = 0; i < n; ++i) out[i] = pick_a(i) - pick_b(i);
            break;
        case OpKind::Mul:
            for (std::int64_t i = 0; i < n; ++i) out[i] = pick_a(i) * pick_b(i);
            break;
        default: shape_error(kind, "not a binary kind");
    }
    return {out_shape, std::move(out)};
}

KernelResult eval_matmul(const ConstView& a, const ConstView& b) {
    require(a.shape->size() == 2 && b.shape->size() == 2, OpKind::MatMul,
            "expects rank-2 operands, got " + shape_str(*a.shape) + " and " + shape_str(*b.shape));
    std::int64_t m = (*a.shape)[0], k = (*a.shape)[1], k2 = (*b.shape)[0], n = (*b.shape)[1];
    require(k == k2, OpKind::MatMul,
            "incompatible shapes " + shape_str(*a.shape) + " and " + shape_str(*b.shape));
    std::vector<double> out(static_cast<std::size_t>(m * n));
    MapConstMat ma(a.data, m, k), mb(b.data, k, n);
    MapMat mo(out.data(), m, n);
    mo.noalias() = ma * mb;
    return {{m, n}, std::move(out)};
}

KernelResult eval_reshape(const OpAttrs& attrs, const ConstView& a) {
    require(numel(attrs.shape) == a.n, OpKind::Reshape,
            "cannot reshape " + shape_str(*a.shape) + " to " + shape_str(attrs.shape));
    return {attrs.shape, std::vector<double>(a.data, a.data + a.n)};
}

void permute_copy(const Shape& in_shape, const std::vector<int>& perm, const double* src,
                  double* dst) {
    std::int64_t rank = static_cast<std::int64_t>(in_shape.size());
    Shape out_shape(rank);
    for (std::int64_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];
    auto in_st = strides_of(in_shape);
    auto out_st = strides_of(out_shape);
    std::int64_t n = numel(in_shape);
    std::vector<std::int64_t> idx(rank, 0);
    for (std::int64_t flat = 0; flat < n; ++flat) {
        // idx enumerates the output index; map back through perm.
        std::int64_t src_off = 0;
        for (std::int64_t i = 0; i < rank; ++i) src_off += idx[i] * in_st[perm[i]];
        dst[flat] = src[src_off];
        for (std::int64_t i = rank - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    (void)out_st;
}

KernelResult eval_transpose(const OpAttrs& attrs, const ConstView& a) {
    std::int64_t rank = static_cast<std::int64_t>(a.shape->size());
    require(static_cast<std::int64_t>(attrs.perm.size()) == rank, OpKind::Transpose,
            "permutation size " + std::to_string(attrs.perm.size()) + " does not match rank of " +
                shape_str(*a.shape));
    std::vector<bool> hit(static_cast<std::size_t>(rank), false);
    for (int p : attrs.perm) {
        require(p >= 0 && p < rank && !hit[static_cast<std::size_t>(p)], OpKind::Transpose,
                "invalid permutation");
        hit[static_cast<std::size_t>(p)] = true;
    }
    Shape out_shape(static_cast<std::size_t>(rank));
    for (std::int64_t i = 0; i < rank; ++i) out_shape[i] = (*a.shape)[attrs.perm[i]];
    std::vector<double> out(static_cast<std::size_t>(a.n));
    permute_copy(*a.shape, attrs.perm, a.data, out.data());
    return {std::move(out_shape), std::move(out)};
}

KernelResult eval_concat(const OpAttrs& attrs, const std::vector<ConstView>& parts) {
    require(!parts.empty(), OpKind::Concat, "needs at least one input");
    std::int64_t rank = static_cast<std::int64_t>(parts[0].shape->size());
    int axis = attrs.axis;
    require(axis >= 0 && axis < rank, OpKind::Concat, "axis out of range");
    Shape out_shape = *parts[0].shape;
    std::int64_t axis_total = 0;
    for (const auto& p : parts) {
        require(static_cast<std::int64_t>(p.shape->size()) == rank, OpKind::Concat,
                "rank mismatch " + shape_str(*parts[0].shape) + " vs " + shape_str(*p.shape));
        for (std::int64_t i = 0; i < rank; ++i) {
            if (i == axis) continue;
            require((*p.shape)[i] == out_shape[i], OpKind::Concat,
                    "shape mismatch " + shape_str(*parts[0].shape) + " vs " + shape_str(*p.shape));
        }
        axis_total += (*p.shape)[axis];
    }
    out_shape[axis] = axis_total;

    std::int64_t outer = 1;
    for (std::int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
    std::int64_t inner = 1;
    for (std::int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];

    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    std::int64_t dst_axis_off = 0;
    for (const auto& p : parts) {
        std::int64_t pa = (*p.shape)[axis];
        for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = p.data + o * pa * inner;
            double* dst = out.data() + (o * axis_total + dst_axis_off) * inner;
            std::copy(src, src + pa * inner, dst);
        }
        dst_axis_off += pa;
    }
    return {std::move(out_shape), std::move(out)};
}

KernelResult eval_slice(const OpAttrs& attrs, const ConstView& a) {
    std::int64_t rank = static_cast<std::int64_t>(a.shape->size());
    require(static_cast<std::int64_t>(attrs.offsets.size()) == rank &&
                static_cast<std::int64_t>(attrs.extents.size()) == rank,
            OpKind::Slice, "offsets/extents rank mismatch with " + shape_str(*a.shape));
    for (std::int64_t i = 0; i < rank; ++i) {
        require(attrs.offsets[i] >= 0 && attrs.extents[i] >= 1 &&
                    attrs.offsets[i] + attrs.extents[i] <= (*a.shape)[i],
                OpKind::Slice,
                "window out of bounds for " + shape_str(*a.shape) + " at axis " + std::to_string(i));
    }
    Shape out_shape(attrs.extents.begin(), attrs.extents.end());
    auto in_st = strides_of(*a.shape);
    std::int64_t n = numel(out_shape);
    std::vector<double> out(static_cast<std::size_t>(n));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t src = 0;
        for (std::int64_t i = 0; i < rank; ++i) src += (attrs.offsets[i] + idx[i]) * in_st[i];
        out[static_cast<std::size_t>(flat)] = a.data[src];
        for (std::int64_t i = rank - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return {std::move(out_shape), std::move(out)};
}

// Sum/Mean: axis == -1 reduces everything to a scalar; otherwise removes axis.
KernelResult eval_reduce(OpKind kind, const OpAttrs& attrs, const ConstView& a) {
    bool mean = kind == OpKind::Mean;
    if (attrs.axis < 0) {
        double s = 0.0;
        for (std::int64_t i = 0; i < a.n; ++i) s += a.data[i];
        if (mean && a.n > 0) s /= static_cast<double>(a.n);
        return {{1}, {s}};
    }
    std::int64_t rank = static_cast<std::int64_t>(a.shape->size());
    require(attrs.axis < rank, kind, "axis out of range for " + shape_str(*a.shape));
    std::int64_t outer = 1, inner = 1, extent = (*a.shape)[attrs.axis];
    for (std::int64_t i = 0; i < attrs.axis; ++i) outer *= (*a.shape)[i];
    for (std::int64_t i = attrs.axis + 1; i < rank; ++i) inner *= (*a.shape)[i];
    Shape out_shape;
    for (std::int64_t i = 0; i < rank; ++i)
        if (i != attrs.axis) out_shape.push_back((*a.shape)[i]);
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t e = 0; e < extent; ++e)
            for (std::int64_t i = 0; i < inner; ++i)
                out[o * inner + i] += a.data[(o * extent + e) * inner + i];
    if (mean && extent > 0)
        for (auto& v : out) v /= static_cast<double>(extent);
    return {std::move(out_shape), std::move(out)};
}

KernelResult eval_softmax(const ConstView& a) {
    require(!a.shape->empty(), OpKind::Softmax, "needs rank >= 1");
    std::int64_t last = a.shape->back();
    std::int64_t rows = a.n / last;
    std::vector<double> out(static_cast<std::size_t>(a.n));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.data + r * last;
        double* y = out.data() + r * last;
        double m = x[0];
        for (std::int64_t i = 1; i < last; ++i) m = std::max(m, x[i]);
        double z = 0.0;
        for (std::int64_t i = 0; i < last; ++i) {
            y[i] = std::exp(x[i] - m);
            z += y[i];
        }
        for (std::int64_t i = 0; i < last; ++i) y[i] /= z;
    }
    return {*a.shape, std::move(out)};
}

KernelResult eval_layernorm(const OpAttrs& attrs, const ConstView& a) {
    require(!a.shape->empty(), OpKind::LayerNorm, "needs rank >= 1");
    std::int64_t last = a.shape->back();
    std::int64_t rows = a.n / last;
    std::vector<double> out(static_cast<std::size_t>(a.n));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.data + r * last;
        double* y = out.data() + r * last;
        double mu = 0.0;
        for (std::int64_t i = 0; i < last; ++i) mu += x[i];
        mu /= static_cast<double>(last);
        double var = 0.0;
        for (std::int64_t i = 0; i < last; ++i) var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(last);
        double inv = 1.0 / std::sqrt(var + attrs.eps);
        for (std::int64_t i = 0; i < last; ++i) y[i] = (x[i] - mu) * inv;
    }
    return {*a.shape, std::move(out)};
}

KernelResult eval_unary(OpKind kind, const OpAttrs& attrs, const ConstView& a) {
    std::vector<double> out(static_cast<std::size_t>(a.n));
    for (std::int64_t i = 0; i < a.n; ++i) {
        double x = a.data[i];
        switch (kind) {
            case OpKind::Relu: out[i] = x > 0 ? x : 0.0; break;
            case OpKind::Gelu: out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); break;
            case OpKind::Exp: out[i] = std::exp(x); break;
            case OpKind::Log:
                if (x <= 0.0) shape_error(kind, "domain error, input " + std::to_string(x) + " <= 0");
                out[i] = std::log(x);
                break;
            case OpKind::Sqrt:
                if (x < 0.0) shape_error(kind, "domain error, input " + std::to_string(x) + " < 0");
                out[i] = std::sqrt(x);
                break;
            case OpKind::Abs: out[i] = std::fabs(x); break;
            case OpKind::Clamp: out[i] = std::min(std::max(x, attrs.lo), attrs.hi); break;
            case OpKind::Arccos: {
                if (std::fabs(x) > 1.0 + kArccosDomainTol) {
                    shape_error(kind, "input " + std::to_string(x) +
                                          " outside [-1,1] beyond clamping tolerance");
                }
                double c = std::min(std::max(x, -1.0 + kArccosClamp), 1.0 - kArccosClamp);
                out[i] = std::acos(c);
                break;
            }
            case OpKind::Huber: out[i] = huber_value(x, attrs.delta); break;
            default: shape_error(kind, "not a unary kind");
        }
    }
    return {*a.shape, std::move(out)};
}

KernelResult eval_cross3(const ConstView& a, const ConstView& b) {
    require(*a.shape == *b.shape, OpKind::Cross3,
            "shape mismatch " + shape_str(*a.shape) + " vs " + shape_str(*b.shape));
    require(!a.shape->empty() && a.shape->back() == 3, OpKind::Cross3,
            "last axis must be 3, got " + shape_str(*a.shape));
    std::vector<double> out(static_cast<std::size_t>(a.n));
    for (std::int64_t v = 0; v < a.n / 3; ++v) {
        const double* x = a.data + v * 3;
        const double* y = b.data + v * 3;
        double* o = out.data() + v * 3;
        o[0] = x[1] * y[2] - x[2] * y[1];
        o[1] = x[2] * y[0] - x[0] * y[2];
        o[2] = x[0] * y[1] - x[1] * y[0];
    }
    return {*a.shape, std::move(out)};
}

KernelResult eval_l2_normalize(const ConstView& a) {
    require(!a.shape->empty(), OpKind::L2Normalize, "needs rank >= 1");
    std::int64_t last = a.shape->back();
    std::int64_t rows = a.n / last;
    std::vector<double> out(static_cast<std::size_t>(a.n));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = a.data + r * last;
        double* y = out.data() + r * last;
        double n2 = kNormEps2;
        for (std::int64_t i = 0; i < last; ++i) n2 += x[i] * x[i];
        double inv = 1.0 / std::sqrt(n2);
        for (std::int64_t i = 0; i < last; ++i) y[i] = x[i] * inv;
    }
    return {*a.shape, std::move(out)};
}

KernelResult eval_svd_orthogonalize3(const ConstView& a) {
    require(a.n == 9, OpKind::SvdOrthogonalize3,
            "expects 9 elements (3x3 or flat 9), got " + shape_str(*a.shape));
    Svd3Result s = svd_orthogonalize3_impl(a.data);
    std::vector<double> out(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(i * 3 + j)] = s.r(i, j);
    return {{3, 3}, std::move(out)};
}

struct AttentionDims {
    std::int64_t tq, tk, dim, hd, nb;
};

AttentionDims attention_dims(const OpAttrs& attrs, const ConstView& q, const ConstView& k,
                             const ConstView& v) {
    require(q.shape->size() == 2 && k.shape->size() == 2 && v.shape->size() == 2, OpKind::Attention,
            "expects rank-2 q/k/v");
    AttentionDims d;
    d.tq = (*q.shape)[0];
    d.tk = (*k.shape)[0];
    d.dim = (*q.shape)[1];
    require((*k.shape)[1] == d.dim && (*v.shape)[0] == d.tk && (*v.shape)[1] == d.dim,
            OpKind::Attention,
            "q/k/v shapes disagree: " + shape_str(*q.shape) + ", " + shape_str(*k.shape) + ", " +
                shape_str(*v.shape));
    require(attrs.heads >= 1 && d.dim % attrs.heads == 0, OpKind::Attention,
            "dim " + std::to_string(d.dim) + " not divisible by heads " + std::to_string(attrs.heads));
    d.hd = d.dim / attrs.heads;
    d.nb = static_cast<std::int64_t>(attrs.block_starts.size()) - 1;
    require(d.nb >= 1 && attrs.block_starts.front() == 0 && attrs.block_starts.back() == d.tk,
            OpKind::Attention, "block_starts must cover the key axis");
    for (std::int64_t b = 0; b < d.nb; ++b)
        require(attrs.block_starts[b] < attrs.block_starts[b + 1], OpKind::Attention,
                "block_starts must be strictly increasing");
    require(static_cast<std::int64_t>(attrs.allowed.size()) == d.tq * d.nb, OpKind::Attention,
            "allowed table must be Tq x nblocks");
    for (std::int64_t t = 0; t < d.tq; ++t) {
        bool any = false;
        for (std::int64_t b = 0; b < d.nb; ++b) any = any || attrs.allowed[t * d.nb + b];
        require(any, OpKind::Attention, "query " + std::to_string(t) + " sees no key block");
    }
    return d;
}

KernelResult eval_attention(const OpAttrs& attrs, const ConstView& q, const ConstView& k,
                            const ConstView& v) {
    AttentionDims d = attention_dims(attrs, q, k, v);
    std::vector<double> out(static_cast<std::size_t>(d.tq * d.dim), 0.0);
    std::vector<double> score(static_cast<std::size_t>(d.tk));
    std::vector<double> partials;
    partials.reserve(static_cast<std::size_t>(d.nb));
    for (std::int64_t h = 0; h < attrs.heads; ++h) {
        std::int64_t c0 = h * d.hd;
        for (std::int64_t t = 0; t < d.tq; ++t) {
            const double* qr = q.data + t * d.dim + c0;
            const std::uint8_t* al = attrs.allowed.data() + t * d.nb;
            double m = -std::numeric_limits<double>::infinity();
            for (std::int64_t b = 0; b < d.nb; ++b) {
                if (!al[b]) continue;
                for (std::int64_t kk = attrs.block_starts[b]; kk < attrs.block_starts[b + 1]; ++kk) {
                    const double* kr = k.data + kk * d.dim + c0;
                    double s = 0.0;
                    for (std::int64_t c = 0; c < d.hd; ++c) s += qr[c] * kr[c];
                    s *= attrs.scale;
                    score[kk] = s;
                    m = std::max(m, s);
                }
            }
            partials.clear();
            for (std::int64_t b = 0; b < d.nb; ++b) {
                if (!al[b]) continue;
                double z = 0.0;
                for (std::int64_t kk = attrs.block_starts[b]; kk < attrs.block_starts[b + 1]; ++kk) {
                    score[kk] = std::exp(score[kk] - m);
                    z += score[kk];
                }
                partials.push_back(z);
            }
            double z = sorted_sum(partials);
            double* orow = out.data() + t * d.dim + c0;
            for (std::int64_t c = 0; c < d.hd; ++c) {
                partials.clear();
                for (std::int64_t b = 0; b < d.nb; ++b) {
                    if (!al[b]) continue;
                    double acc = 0.0;
                    for (std::int64_t kk = attrs.block_starts[b]; kk < attrs.block_starts[b + 1];
                         ++kk) {
                        acc += score[kk] * v.data[kk * d.dim + c0 + c];
                    }
                    partials.push_back(acc);
                }
                orow[c] = sorted_sum(partials) / z;
            }
        }
    }
    return {{d.tq, d.dim}, std::move(out)};
}

KernelResult eval_op(OpKind kind, const OpAttrs& attrs, const std::vector<ConstView>& in) {
    switch (kind) {
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul: return eval_binary(kind, in[0], in[1]);
        case OpKind::MatMul: return eval_matmul(in[0], in[1]);
        case OpKind::Reshape: return eval_reshape(attrs, in[0]);
        case OpKind::Transpose: return eval_transpose(attrs, in[0]);
        case OpKind::Concat: return eval_concat(attrs, in);
        case OpKind::Slice: return eval_slice(attrs, in[0]);
        case OpKind::Sum:
        case OpKind::Mean: return eval_reduce(kind, attrs, in[0]);
        case OpKind::Softmax: return eval_softmax(in[0]);
        case OpKind::LayerNorm: return eval_layernorm(attrs, in[0]);
        case OpKind::Relu:
        case OpKind::Gelu:
        case OpKind::Exp:
        case OpKind::Log:
        case OpKind::Sqrt:
        case OpKind::Abs:
        case OpKind::Clamp:
        case OpKind::Arccos:
        case OpKind::Huber: return eval_unary(kind, attrs, in[0]);
        case OpKind::Cross3: return eval_cross3(in[0], in[1]);
        case OpKind::L2Normalize: return eval_l2_normalize(in[0]);
        case OpKind::SvdOrthogonalize3: return eval_svd_orthogonalize3(in[0]);
        case OpKind::Attention: return eval_attention(attrs, in[0], in[1], in[2]);
        case OpKind::Leaf: break;
    }
    throw Error("eval_op: unsupported kind");
}

// ---------------------------------------------------------------------------
// Backward closures.
// ---------------------------------------------------------------------------

void accum_scaled(Tensor& parent, const std::vector<double>& g) { parent.accumulate_grad(g); }

void binary_backward(OpKind kind, const Tensor& self) {
    const auto& a = self.parents[0];
    const auto& b = self.parents[1];
    BinMode mode = binary_mode(kind, a->shape, b->shape);
    std::int64_t n = self.numel();
    auto reduce_to = [&](const TensorPtr& p, const std::vector<double>& g, bool is_scalar_side) {
        if (!p->requires_grad) return;
        if (!is_scalar_side) {
            accum_scaled(*p, g);
        } else {
            double s = 0.0;
            for (double v : g) s += v;
            p->ensure_grad();
            p->grad[0] += s;
        }
    };
    std::vector<double> ga, gb;
    auto aval = [&](std::int64_t i) { return mode == BinMode::ScalarLeft ? a->data[0] : a->data[i]; };
    auto bval = [&](std::int64_t i) { return mode == BinMode::ScalarRight ? b->data[0] : b->data[i]; };
    if (a->requires_grad) {
        ga.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            switch (kind) {
                case OpKind::Add:
                case OpKind::Sub: ga[i] = self.grad[i]; break;
                case OpKind::Mul: ga[i] = self.grad[i] * bval(i); break;
                default: break;
            }
        }
        reduce_to(a, ga, mode == BinMode::ScalarLeft);
    }
    if (b->requires_grad) {
        gb.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            switch (kind) {
                case OpKind::Add: gb[i] = self.grad[i]; break;
                case OpKind::Sub: gb[i] = -self.grad[i]; break;
                case OpKind::Mul: gb[i] = self.grad[i] * aval(i); break;
                default: break;
            }
        }
        reduce_to(b, gb, mode == BinMode::ScalarRight);
    }
}

void matmul_backward(const Tensor& self) {
    const auto& a = self.parents[0];
    const auto& b = self.parents[1];
    std::int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    MapConstMat ma(a->data.data(), m, k), mb(b->data.data(), k, n), mg(self.grad.data(), m, n);
    if (a->requires_grad) {
        std::vector<double> ga(static_cast<std::size_t>(m * k));
        MapMat(ga.data(), m, k).noalias() = mg * mb.transpose();
        a->accumulate_grad(ga);
    }
    if (b->requires_grad) {
        std::vector<double> gb(static_cast<std::size_t>(k * n));
        MapMat(gb.data(), k, n).noalias() = ma.transpose() * mg;
        b->accumulate_grad(gb);
    }
}

void attention_backward(const OpAttrs& attrs, const std::vector<double>& out_copy,
                        const Tensor& self) {
    const auto& q = self.parents[0];
    const auto& k = self.parents[1];
    const auto& v = self.parents[2];
    AttentionDims d = attention_dims(attrs, view_of(*q), view_of(*k), view_of(*v));
    std::vector<double> gq(q->data.size(), 0.0), gk(k->data.size(), 0.0), gv(v->data.size(), 0.0);
    std::vector<double> p(static_cast<std::size_t>(d.tk));
    for (std::int64_t h = 0; h < attrs.heads; ++h) {
        std::int64_t c0 = h * d.hd;
        for (std::int64_t t = 0; t < d.tq; ++t) {
            const double* qr = q->data.data() + t * d.dim + c0;
            const double* gr = self.grad.data() + t * d.dim + c0;
            const double* orow = out_copy.data() + t * d.dim + c0;
            const std::uint8_t* al = attrs.allowed.data() + t * d.nb;
            // Recompute normalized attention weights for this row.
            double m = -std::numeric_limits<double>::infinity();
            for (std::int64_t b = 0; b < d.nb; ++b) {
                if (!al[b]) continue;
                for (std::int64_t kk = attrs.block_starts[b]; kk < attrs.block_starts[b + 1]; ++kk) {
                    const double* kr = k->data.data() + kk * d.dim + c0;
                    double s = 0.0;
                    for (std::int64_t c = 0; c < d.hd; ++c) s += qr[c] * kr[c];
                    p[kk] = s * attrs.scale;
                    m = std::max(m, p[kk]);
                }
            }
            double z = 0.0;
            for (std::int64_t b = 0; b < d.nb; ++b) {
                if (!al[b]) continue;
                for (std::int64_t kk = attrs.block_starts[b]; kk < attrs.block_starts[b + 1]; ++kk) {
                    p[kk] = std::exp(p[kk] - m);
                    z += p[kk];
                }
            }
            double r = 0.0;
            for (std::int64_t c = 0; c < d.hd; ++c) r += gr[c] * orow[c];
            for (std::int64_t b = 0; b < d.nb; ++b) {
                if (!al[b]) continue;
                for (std::int64_t kk = attrs.block_starts[b]; kk < attrs.block_starts[b + 1]; ++kk) {
                    double pw = p[kk] / z;
                    const double* vr = v->data.data() + kk * d.dim + c0;
                    const double* kr = k->data.data() + kk * d.dim + c0;
                    double gdotv = 0.0;
                    for (std::int64_t c = 0; c < d.hd; ++c) {
                        gdotv += gr[c] * vr[c];
                        gv[kk * d.dim + c0 + c] += pw * gr[c];
                    }
                    double ds = pw * (gdotv - r) * attrs.scale;
                    for (std::int64_t c = 0; c < d.hd; ++c) {
                        gq[t * d.dim + c0 + c] += ds * kr[c];
                        gk[kk * d.dim + c0 + c] += ds * qr[c];
                    }
                }
            }
        }
    }
    if (q->requires_grad) q->accumulate_grad(gq);
    if (k->requires_grad) k->accumulate_grad(gk);
    if (v->requires_grad) v->accumulate_grad(gv);
}

std::function<void(const Tensor&)> make_backward(OpKind kind, const OpAttrs& attrs,
                                                 const KernelResult& result) {
    switch (kind) {
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul:
            return [kind](const Tensor& self) { binary_backward(kind, self); };
        case OpKind::MatMul:
            return [](const Tensor& self) { matmul_backward(self); };
        case OpKind::Reshape:
            return [](const Tensor& self) { self.parents[0]->accumulate_grad(self.grad); };
        case OpKind::Transpose: {
            std::vector<int> inv(attrs.perm.size());
            for (std::size_t i = 0; i < attrs.perm.size(); ++i)
                inv[static_cast<std::size_t>(attrs.perm[i])] = static_cast<int>(i);
            return [inv](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                permute_copy(self.shape, inv, self.grad.data(), ga.data());
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Concat: {
            int axis = attrs.axis;
            return [axis](const Tensor& self) {
                std::int64_t rank = self.rank();
                std::int64_t outer = 1, inner = 1;
                for (std::int64_t i = 0; i < axis; ++i) outer *= self.shape[i];
                for (std::int64_t i = axis + 1; i < rank; ++i) inner *= self.shape[i];
                std::int64_t total_axis = self.shape[axis];
                std::int64_t axis_off = 0;
                for (const auto& p : self.parents) {
                    std::int64_t pa = p->shape[axis];
                    if (p->requires_grad) {
                        std::vector<double> gp(p->data.size());
                        for (std::int64_t o = 0; o < outer; ++o) {
                            const double* src =
                                self.grad.data() + (o * total_axis + axis_off) * inner;
                            std::copy(src, src + pa * inner, gp.data() + o * pa * inner);
                        }
                        p->accumulate_grad(gp);
                    }
                    axis_off += pa;
                }
            };
        }
        case OpKind::Slice: {
            auto offsets = attrs.offsets;
            return [offsets](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size(), 0.0);
                auto in_st = strides_of(a->shape);
                std::int64_t rank = self.rank();
                std::int64_t n = self.numel();
                std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
                for (std::int64_t flat = 0; flat < n; ++flat) {
                    std::int64_t dst = 0;
                    for (std::int64_t i = 0; i < rank; ++i) dst += (offsets[i] + idx[i]) * in_st[i];
                    ga[static_cast<std::size_t>(dst)] += self.grad[static_cast<std::size_t>(flat)];
                    for (std::int64_t i = rank - 1; i >= 0; --i) {
                        if (++idx[i] < self.shape[i]) break;
                        idx[i] = 0;
                    }
                }
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Sum:
        case OpKind::Mean: {
            int axis = attrs.axis;
            bool mean = kind == OpKind::Mean;
            return [axis, mean](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                if (axis < 0) {
                    double g = self.grad[0];
                    if (mean) g /= static_cast<double>(a->numel());
                    std::fill(ga.begin(), ga.end(), g);
                } else {
                    std::int64_t rank = a->rank();
                    std::int64_t outer = 1, inner = 1, extent = a->shape[axis];
                    for (std::int64_t i = 0; i < axis; ++i) outer *= a->shape[i];
                    for (std::int64_t i = axis + 1; i < rank; ++i) inner *= a->shape[i];
                    double w = mean ? 1.0 / static_cast<double>(extent) : 1.0;
                    for (std::int64_t o = 0; o < outer; ++o)
                        for (std::int64_t e = 0; e < extent; ++e)
                            for (std::int64_t i = 0; i < inner; ++i)
                                ga[(o * extent + e) * inner + i] = self.grad[o * inner + i] * w;
                }
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Softmax: {
            std::vector<double> y = result.data;
            return [y](const Tensor& self) {
                const auto& a = self.parents[0];
                std::int64_t last = self.shape.back();
                std::int64_t rows = self.numel() / last;
                std::vector<double> ga(a->data.size());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* yr = y.data() + r * last;
                    const double* gr = self.grad.data() + r * last;
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < last; ++i) dot += gr[i] * yr[i];
                    for (std::int64_t i = 0; i < last; ++i)
                        ga[r * last + i] = yr[i] * (gr[i] - dot);
                }
                a->accumulate_grad(ga);
            };
        }
        case OpKind::LayerNorm: {
            std::vector<double> y = result.data;
            double eps = attrs.eps;
            return [y, eps](const Tensor& self) {
                const auto& a = self.parents[0];
                std::int64_t last = self.shape.back();
                std::int64_t rows = self.numel() / last;
                std::vector<double> ga(a->data.size());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* x = a->data.data() + r * last;
                    const double* yr = y.data() + r * last;
                    const double* gr = self.grad.data() + r * last;
                    double mu = 0.0;
                    for (std::int64_t i = 0; i < last; ++i) mu += x[i];
                    mu /= static_cast<double>(last);
                    double var = 0.0;
                    for (std::int64_t i = 0; i < last; ++i) var += (x[i] - mu) * (x[i] - mu);
                    var /= static_cast<double>(last);
                    double inv = 1.0 / std::sqrt(var + eps);
                    double gmean = 0.0, gymean = 0.0;
                    for (std::int64_t i = 0; i < last; ++i) {
                        gmean += gr[i];
                        gymean += gr[i] * yr[i];
                    }
                    gmean /= static_cast<double>(last);
                    gymean /= static_cast<double>(last);
                    for (std::int64_t i = 0; i < last; ++i)
                        ga[r * last + i] = (gr[i] - gmean - yr[i] * gymean) * inv;
                }
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Relu:
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] = a->data[i] > 0 ? self.grad[i] : 0.0;
                a->accumulate_grad(ga);
            };
        case OpKind::Gelu:
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                constexpr double inv_sqrt2pi = 0.3989422804014326779;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    double x = a->data[i];
                    double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                    double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                    ga[i] = self.grad[i] * (cdf + x * pdf);
                }
                a->accumulate_grad(ga);
            };
        case OpKind::Exp: {
            std::vector<double> y = result.data;
            return [y](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * y[i];
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Log:
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] / a->data[i];
                a->accumulate_grad(ga);
            };
        case OpKind::Sqrt: {
            std::vector<double> y = result.data;
            return [y](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] / (2.0 * y[i]);
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Abs:
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    double x = a->data[i];
                    ga[i] = x > 0 ? self.grad[i] : (x < 0 ? -self.grad[i] : 0.0);
                }
                a->accumulate_grad(ga);
            };
        case OpKind::Clamp: {
            double lo = attrs.lo, hi = attrs.hi;
            return [lo, hi](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    double x = a->data[i];
                    ga[i] = (x > lo && x < hi) ? self.grad[i] : 0.0;
                }
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Arccos:
            // Derivative evaluated at the clamped argument; bounded even at
            // perfect alignment.
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i) {
                    double c = std::min(std::max(a->data[i], -1.0 + kArccosClamp),
                                        1.0 - kArccosClamp);
                    ga[i] = -self.grad[i] / std::sqrt(1.0 - c * c);
                }
                a->accumulate_grad(ga);
            };
        case OpKind::Huber: {
            double delta = attrs.delta;
            return [delta](const Tensor& self) {
                const auto& a = self.parents[0];
                std::vector<double> ga(a->data.size());
                for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] = self.grad[i] * huber_slope(a->data[i], delta);
                a->accumulate_grad(ga);
            };
        }
        case OpKind::Cross3:
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                const auto& b = self.parents[1];
                std::int64_t nv = self.numel() / 3;
                std::vector<double> ga(a->data.size()), gb(b->data.size());
                for (std::int64_t t = 0; t < nv; ++t) {
                    const double* x = a->data.data() + t * 3;
                    const double* y = b->data.data() + t * 3;
                    const double* g = self.grad.data() + t * 3;
                    // d(a x b)/da^T g = b x g ; d(a x b)/db^T g = g x a
                    ga[t * 3 + 0] = y[1] * g[2] - y[2] * g[1];
                    ga[t * 3 + 1] = y[2] * g[0] - y[0] * g[2];
                    ga[t * 3 + 2] = y[0] * g[1] - y[1] * g[0];
                    gb[t * 3 + 0] = g[1] * x[2] - g[2] * x[1];
                    gb[t * 3 + 1] = g[2] * x[0] - g[0] * x[2];
                    gb[t * 3 + 2] = g[0] * x[1] - g[1] * x[0];
                }
                if (a->requires_grad) a->accumulate_grad(ga);
                if (b->requires_grad) b->accumulate_grad(gb);
            };
        case OpKind::L2Normalize: {
            std::vector<double> y = result.data;
            return [y](const Tensor& self) {
                const auto& a = self.parents[0];
                std::int64_t last = self.shape.back();
                std::int64_t rows = self.numel() / last;
                std::vector<double> ga(a->data.size());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const double* x = a->data.data() + r * last;
                    const double* yr = y.data() + r * last;
                    const double* gr = self.grad.data() + r * last;
                    double n2 = kNormEps2;
                    for (std::int64_t i = 0; i < last; ++i) n2 += x[i] * x[i];
                    double inv = 1.0 / std::sqrt(n2);
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < last; ++i) dot += gr[i] * yr[i];
                    for (std::int64_t i = 0; i < last; ++i)
                        ga[r * last + i] = (gr[i] - yr[i] * dot) * inv;
                }
                a->accumulate_grad(ga);
            };
        }
        case OpKind::SvdOrthogonalize3:
            // VJP of the special-orthogonal projection R(M) = U V^T:
            // with S = R^T M (symmetric), K = tr(S) I - S,
            //   dL/dM = R [y]_x  where  K y = vee(R^T G - G^T R), G = dL/dR.
            return [](const Tensor& self) {
                const auto& a = self.parents[0];
                Svd3Result s = svd_orthogonalize3_impl(a->data.data());
                Eigen::Matrix3d g;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) g(i, j) = self.grad[static_cast<std::size_t>(i * 3 + j)];
                Eigen::Matrix3d sym = s.r.transpose() * s.m;
                sym = 0.5 * (sym + sym.transpose().eval());
                Eigen::Matrix3d kmat = sym.trace() * Eigen::Matrix3d::Identity() - sym;
                Eigen::Matrix3d aa = s.r.transpose() * g;
                Eigen::Vector3d w(aa(2, 1) - aa(1, 2), aa(0, 2) - aa(2, 0), aa(1, 0) - aa(0, 1));
                Eigen::Vector3d y = kmat.fullPivLu().solve(w);
                Eigen::Matrix3d yx;
                yx << 0, -y(2), y(1), y(2), 0, -y(0), -y(1), y(0), 0;
                Eigen::Matrix3d gm = s.r * yx;
                std::vector<double> ga(9);
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) ga[static_cast<std::size_t>(i * 3 + j)] = gm(i, j);
                a->accumulate_grad(ga);
            };
        case OpKind::Attention: {
            std::vector<double> out_copy = result.data;
            OpAttrs at = attrs;
            return [at, out_copy](const Tensor& self) { attention_backward(at, out_copy, self); };
        }
        case OpKind::Leaf: break;
    }
    return {};
}

}  // namespace

TensorPtr forward_op(OpKind kind, const OpAttrs& attrs, const std::vector<TensorPtr>& inputs) {
    std::vector<ConstView> views;
    views.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (!in) throw Error(std::string(op_name(kind)) + ": null input");
        views.push_back(view_of(*in));
    }
    KernelResult result = eval_op(kind, attrs, views);

    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;

    std::function<void(const Tensor&)> backward_fn;
    if (needs_grad) backward_fn = make_backward(kind, attrs, result);

    auto out = std::make_shared<Tensor>(std::move(result.data), result.shape, needs_grad);
    out->op = kind;
    if (needs_grad) {
        out->parents = inputs;
        out->backward_fn = std::move(backward_fn);
        if (Graph* g = current_graph()) g->register_node(kind, attrs, inputs, out);
    }
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return forward_op(OpKind::Add, {}, {a, b}); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return forward_op(OpKind::Sub, {}, {a, b}); }
TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return forward_op(OpKind::Mul, {}, {a, b}); }

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    return forward_op(OpKind::MatMul, {}, {a, b});
}

TensorPtr reshape(const TensorPtr& a, Shape shape) {
    OpAttrs attrs;
    attrs.shape = std::move(shape);
    return forward_op(OpKind::Reshape, attrs, {a});
}

TensorPtr transpose(const TensorPtr& a, std::vector<int> perm) {
    OpAttrs attrs;
    attrs.perm = std::move(perm);
    return forward_op(OpKind::Transpose, attrs, {a});
}

TensorPtr transpose2d(const TensorPtr& a) { return transpose(a, {1, 0}); }

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    OpAttrs attrs;
    attrs.axis = axis;
    return forward_op(OpKind::Concat, attrs, parts);
}

TensorPtr slice(const TensorPtr& a, std::vector<std::int64_t> offsets,
                std::vector<std::int64_t> extents) {
    OpAttrs attrs;
    attrs.offsets = std::move(offsets);
    attrs.extents = std::move(extents);
    return forward_op(OpKind::Slice, attrs, {a});
}

TensorPtr sum_all(const TensorPtr& a) {
    OpAttrs attrs;
    attrs.axis = -1;
    return forward_op(OpKind::Sum, attrs, {a});
}

TensorPtr sum_axis(const TensorPtr& a, int axis) {
    OpAttrs attrs;
    attrs.axis = axis;
    return forward_op(OpKind::Sum, attrs, {a});
}

TensorPtr mean_all(const TensorPtr& a) {
    OpAttrs attrs;
    attrs.axis = -1;
    return forward_op(OpKind::Mean, attrs, {a});
}

TensorPtr mean_axis(const TensorPtr& a, int axis) {
    OpAttrs attrs;
    attrs.axis = axis;
    return forward_op(OpKind::Mean, attrs, {a});
}

TensorPtr softmax(const TensorPtr& a) { return forward_op(OpKind::Softmax, {}, {a}); }

TensorPtr layernorm(const TensorPtr& a, double eps) {
    OpAttrs attrs;
    attrs.eps = eps;
    return forward_op(OpKind::LayerNorm, attrs, {a});
}

TensorPtr relu(const TensorPtr& a) { return forward_op(OpKind::Relu, {}, {a}); }
TensorPtr gelu(const TensorPtr& a) { return forward_op(OpKind::Gelu, {}, {a}); }
TensorPtr exp(const TensorPtr& a) { return forward_op(OpKind::Exp, {}, {a}); }
TensorPtr log(const TensorPtr& a) { return forward_op(OpKind::Log, {}, {a}); }
TensorPtr sqrt(const TensorPtr& a) { return forward_op(OpKind::Sqrt, {}, {a}); }
TensorPtr abs(const TensorPtr& a) { return forward_op(OpKind::Abs, {}, {a}); }

TensorPtr clamp(const TensorPtr& a, double lo, double hi) {
    if (lo > hi) throw Error("clamp: lo > hi");
    OpAttrs attrs;
    attrs.lo = lo;
    attrs.hi = hi;
    return forward_op(OpKind::Clamp, attrs, {a});
}

TensorPtr arccos(const TensorPtr& a) { return forward_op(OpKind::Arccos, {}, {a}); }

TensorPtr huber(const TensorPtr& a, double delta) {
    if (delta <= 0) throw Error("huber: delta must be positive");
    OpAttrs attrs;
    attrs.delta = delta;
    return forward_op(OpKind::Huber, attrs, {a});
}

TensorPtr cross3(const TensorPtr& a, const TensorPtr& b) {
    return forward_op(OpKind::Cross3, {}, {a, b});
}

TensorPtr l2_normalize(const TensorPtr& a) { return forward_op(OpKind::L2Normalize, {}, {a}); }

TensorPtr svd_orthogonalize3(const TensorPtr& a) {
    return forward_op(OpKind::SvdOrthogonalize3, {}, {a});
}

TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v, int heads,
                    double scale, std::vector<std::int64_t> block_starts,
                    std::vector<std::uint8_t> allowed) {
    OpAttrs attrs;
    attrs.heads = heads;
    attrs.scale = scale;
    attrs.block_starts = std::move(block_starts);
    attrs.allowed = std::move(allowed);
    return forward_op(OpKind::Attention, attrs, {q, k, v});
}

TensorPtr add_row_bias(const TensorPtr& x, const TensorPtr& b) {
    if (x->rank() != 2) throw Error("add_row_bias: x must be rank-2, got " + shape_str(x->shape));
    std::int64_t rows = x->shape[0];
    std::int64_t cols = x->shape[1];
    if (b->numel() != cols) {
        throw Error("add_row_bias: bias length " + std::to_string(b->numel()) +
                    " does not match columns of " + shape_str(x->shape));
    }
    auto ones = full({rows, 1}, 1.0);
    return add(x, matmul(ones, reshape(b, {1, cols})));
}

TensorPtr mul_row_vector(const TensorPtr& x, const TensorPtr& w) {
    if (x->rank() != 2) throw Error("mul_row_vector: x must be rank-2, got " + shape_str(x->shape));
    std::int64_t rows = x->shape[0];
    std::int64_t cols = x->shape[1];
    if (w->numel() != cols) {
        throw Error("mul_row_vector: vector length " + std::to_string(w->numel()) +
                    " does not match columns of " + shape_str(x->shape));
    }
    auto ones = full({rows, 1}, 1.0);
    return mul(x, matmul(ones, reshape(w, {1, cols})));
}

}  // namespace geolab::ops

namespace geolab {

// Defined here so it can reuse the forward kernels above; replaying the tape
// re-executes the exact same code paths and therefore reproduces every node's
// buffer bit-identically.
std::vector<std::vector<double>> Graph::replay() const {
    std::vector<std::vector<double>> values(tensors_.size());
    std::vector<Shape> shapes(tensors_.size());
    for (const auto& rec : records_) {
        auto idx = static_cast<std::size_t>(rec.output);
        if (rec.kind == OpKind::Leaf) {
            values[idx] = tensors_[idx]->data;
            shapes[idx] = tensors_[idx]->shape;
            continue;
        }
        std::vector<ops::ConstView> views;
        views.reserve(rec.inputs.size());
        for (auto in : rec.inputs) {
            auto i = static_cast<std::size_t>(in);
            views.push_back(ops::ConstView{&shapes[i], values[i].data(),
                                           static_cast<std::int64_t>(values[i].size())});
        }
        auto r = ops::eval_op(rec.kind, rec.attrs, views);
        shapes[idx] = std::move(r.shape);
        values[idx] = std::move(r.data);
    }
    return values;
}

}  // namespace geolab
