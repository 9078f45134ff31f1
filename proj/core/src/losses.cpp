#include "geolab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace geolab::losses {

namespace T = geolab::ops;
using geom::NormalMap;
using geom::PointMap;
using geom::Pose;
using geom::Rotation;
using geom::Vec3;

namespace {

void check_batch_shape(const char* who, const TensorPtr& points, int n, int h, int w) {
    Shape expect = {n, h, w, 3};
    if (!points || points->shape != expect) {
        throw Error(std::string(who) + ": prediction shape " +
                    (points ? shape_str(points->shape) : std::string("null")) +
                    " does not match ground truth " + shape_str(expect));
    }
}

Rng scale_rng() {
    if (Graph* g = current_graph()) return g->draw_rng("optimal_scale");
    return Rng(0x6e01abUL);
}

// Flattened ground-truth tensors for the point loss: target coordinates and
// the per-coordinate weight (1/z on valid pixels, 0 elsewhere).
struct GtTensors {
    TensorPtr targets;
    TensorPtr weights;
    std::int64_t total_pixels = 0;
};

GtTensors gt_point_tensors(const std::vector<PointMap>& gt, bool world_frame,
                           const std::vector<Pose>* poses) {
    int n = static_cast<int>(gt.size());
    int h = gt[0].height, w = gt[0].width;
    std::int64_t p = static_cast<std::int64_t>(n) * h * w;
    std::vector<double> tgt(static_cast<std::size_t>(p) * 3, 0.0);
    std::vector<double> wts(static_cast<std::size_t>(p) * 3, 0.0);
    std::int64_t i = 0;
    for (int f = 0; f < n; ++f) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c, ++i) {
                if (!gt[f].is_valid(r, c)) continue;
                Vec3 x = gt[f].point(r, c);
                double z = x[2];
                if (world_frame) x = (*poses)[static_cast<std::size_t>(f)].apply(x);
                for (int k = 0; k < 3; ++k) {
                    tgt[static_cast<std::size_t>(i * 3 + k)] = x[static_cast<std::size_t>(k)];
                    wts[static_cast<std::size_t>(i * 3 + k)] = 1.0 / z;
                }
            }
        }
    }
    return {constant(std::move(tgt), {n, h, w, 3}), constant(std::move(wts), {n, h, w, 3}), p};
}

TensorPtr weighted_l1_point_term(const TensorPtr& pred, const GtTensors& gt, double s_star) {
    auto residual = T::sub(T::mul(pred, scalar(s_star)), gt.targets);
    auto weighted = T::mul(T::abs(residual), gt.weights);
    double norm = 1.0 / (3.0 * static_cast<double>(gt.total_pixels));
    return T::mul(T::sum_all(weighted), scalar(norm));
}

}  // namespace

void LossWeights::validate() const {
    if (lambda_cam < 0 || lambda_normal < 0 || lambda_trans < 0) {
        throw ValidationError("loss weights must be non-negative");
    }
    if (huber_delta <= 0) throw ValidationError("huber_delta must be positive");
    if (align_subsample < 1) throw ValidationError("align_subsample must be >= 1");
}

double optimal_scale(std::span<const double> pred, std::span<const double> gt,
                     std::span<const std::uint8_t> valid, std::span<const double> pixel_weights,
                     std::int64_t align_subsample, Rng& rng) {
    std::size_t p = valid.size();
    if (pred.size() != p * 3 || gt.size() != p * 3 || pixel_weights.size() != p) {
        throw Error("optimal_scale: inconsistent buffer sizes");
    }
    std::vector<std::int64_t> pixels;
    pixels.reserve(p);
    for (std::size_t i = 0; i < p; ++i) {
        if (valid[i]) pixels.push_back(static_cast<std::int64_t>(i));
    }
    if (pixels.empty()) throw Error("optimal_scale: no valid pixels");

    if (static_cast<std::int64_t>(pixels.size()) > align_subsample) {
        // Partial Fisher-Yates: first align_subsample entries become the sample.
        for (std::int64_t i = 0; i < align_subsample; ++i) {
            std::int64_t j = i + static_cast<std::int64_t>(
                                     rng.uniform_index(pixels.size() - static_cast<std::size_t>(i)));
            std::swap(pixels[static_cast<std::size_t>(i)], pixels[static_cast<std::size_t>(j)]);
        }
        pixels.resize(static_cast<std::size_t>(align_subsample));
    }

    std::vector<std::pair<double, double>> terms;  // (ratio, weight)
    terms.reserve(pixels.size() * 3);
    for (std::int64_t pix : pixels) {
        double wp = pixel_weights[static_cast<std::size_t>(pix)];
        for (int k = 0; k < 3; ++k) {
            double ph = pred[static_cast<std::size_t>(pix * 3 + k)];
            double xg = gt[static_cast<std::size_t>(pix * 3 + k)];
            if (std::fabs(ph) <= 1e-12) continue;
            terms.emplace_back(xg / ph, wp * std::fabs(ph));
        }
    }
    if (terms.empty()) {
        throw Error("optimal_scale: all predicted coordinates below magnitude threshold");
    }
    std::sort(terms.begin(), terms.end());
    double total = 0.0;
    for (const auto& t : terms) total += t.second;
    double half = 0.5 * total;
    double cum = 0.0;
    for (const auto& t : terms) {
        cum += t.second;
        if (cum >= half) return t.first;
    }
    return terms.back().first;
}

double optimal_scale(const TensorPtr& pred_points, const std::vector<PointMap>& gt,
                     std::int64_t align_subsample, Rng& rng) {
    if (gt.empty()) throw Error("optimal_scale: empty batch");
    int n = static_cast<int>(gt.size());
    int h = gt[0].height, w = gt[0].width;
    check_batch_shape("optimal_scale", pred_points, n, h, w);
    std::size_t p = static_cast<std::size_t>(n) * h * w;
    std::vector<double> gt_flat(p * 3, 0.0);
    std::vector<std::uint8_t> valid(p, 0);
    std::vector<double> weights(p, 0.0);
    std::size_t i = 0;
    for (int f = 0; f < n; ++f) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c, ++i) {
                if (!gt[f].is_valid(r, c)) continue;
                Vec3 x = gt[f].point(r, c);
                gt_flat[i * 3 + 0] = x[0];
                gt_flat[i * 3 + 1] = x[1];
                gt_flat[i * 3 + 2] = x[2];
                valid[i] = 1;
                weights[i] = 1.0 / x[2];
            }
        }
    }
    return optimal_scale(std::span<const double>(pred_points->data), gt_flat, valid, weights,
                         align_subsample, rng);
}

TensorPtr point_loss(const TensorPtr& pred_points, const std::vector<PointMap>& gt, double s_star) {
    if (gt.empty()) throw Error("point_loss: empty batch");
    int n = static_cast<int>(gt.size());
    check_batch_shape("point_loss", pred_points, n, gt[0].height, gt[0].width);
    return weighted_l1_point_term(pred_points, gt_point_tensors(gt, false, nullptr), s_star);
}

TensorPtr rotation_loss(const TensorPtr& pred_rel, const geom::Rotation& gt_rel) {
    if (!pred_rel || pred_rel->numel() != 9) {
        throw Error("rotation_loss: predicted rotation must have 9 elements");
    }
    std::vector<double> gtm(gt_rel.matrix().m.begin(), gt_rel.matrix().m.end());
    auto gt_const = constant(std::move(gtm), pred_rel->shape);
    // tr(A^T B) = sum(A o B)
    auto trace = T::sum_all(T::mul(gt_const, pred_rel));
    auto cosine = T::mul(T::sub(trace, scalar(1.0)), scalar(0.5));
    return T::arccos(cosine);
}

TensorPtr rotation_loss(const geom::Rotation& pred_rel, const geom::Rotation& gt_rel) {
    std::vector<double> m(pred_rel.matrix().m.begin(), pred_rel.matrix().m.end());
    return rotation_loss(constant(std::move(m), {3, 3}), gt_rel);
}

TensorPtr translation_loss(const TensorPtr& pred_rel_t, const Vec3& gt_rel_t, double s_star,
                           double delta) {
    if (!pred_rel_t || pred_rel_t->numel() != 3) {
        throw Error("translation_loss: predicted translation must have 3 elements");
    }
    auto gt_const = constant({gt_rel_t[0], gt_rel_t[1], gt_rel_t[2]}, pred_rel_t->shape);
    auto residual = T::sub(T::mul(pred_rel_t, scalar(s_star)), gt_const);
    return T::sum_all(T::huber(residual, delta));
}

TensorPtr camera_loss(const std::vector<TensorPtr>& pred_rotations,
                      const std::vector<TensorPtr>& pred_translations,
                      const std::vector<Pose>& gt, double s_star, const LossWeights& w,
                      TensorPtr* rot_out, TensorPtr* trans_out) {
    std::size_t n = gt.size();
    if (n < 2) throw Error("camera_loss: needs at least 2 views");
    if (pred_rotations.size() != n || pred_translations.size() != n) {
        throw Error("camera_loss: prediction list length does not match ground truth");
    }
    TensorPtr rot_sum = scalar(0.0);
    TensorPtr trans_sum = scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto ri_t = T::transpose2d(T::reshape(pred_rotations[i], {3, 3}));
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            auto rel_rot = T::matmul(ri_t, T::reshape(pred_rotations[j], {3, 3}));
            auto dt = T::sub(T::reshape(pred_translations[j], {3, 1}),
                             T::reshape(pred_translations[i], {3, 1}));
            auto rel_t = T::reshape(T::matmul(ri_t, dt), {3});
            Pose gt_rel = geom::relative_pose(gt[i], gt[j]);
            rot_sum = T::add(rot_sum, rotation_loss(rel_rot, gt_rel.rotation));
            trans_sum = T::add(trans_sum,
                               translation_loss(rel_t, gt_rel.translation, s_star, w.huber_delta));
        }
    }
    double inv_pairs = 1.0 / static_cast<double>(n * (n - 1));
    auto rot_avg = T::mul(rot_sum, scalar(inv_pairs));
    auto trans_avg = T::mul(trans_sum, scalar(inv_pairs));
    if (rot_out) *rot_out = rot_avg;
    if (trans_out) *trans_out = trans_avg;
    return T::add(rot_avg, T::mul(trans_avg, scalar(w.lambda_trans)));
}

std::pair<TensorPtr, std::vector<std::uint8_t>> normals_from_points(
    const TensorPtr& points, const std::vector<PointMap>& gt_validity) {
    if (gt_validity.empty()) throw Error("normals_from_points: empty batch");
    std::int64_t n = static_cast<std::int64_t>(gt_validity.size());
    std::int64_t h = gt_validity[0].height, w = gt_validity[0].width;
    check_batch_shape("normals_from_points", points, static_cast<int>(n), static_cast<int>(h),
                      static_cast<int>(w));

    auto zeros_col = full({n, h, 1, 3}, 0.0);
    auto zeros_row = full({n, 1, w, 3}, 0.0);
    TensorPtr rdiff, ldiff, ddiff, udiff;
    if (w >= 2) {
        auto rint = T::sub(T::slice(points, {0, 0, 1, 0}, {n, h, w - 1, 3}),
                           T::slice(points, {0, 0, 0, 0}, {n, h, w - 1, 3}));
        rdiff = T::concat({rint, zeros_col}, 2);
        ldiff = T::concat({zeros_col, T::mul(rint, scalar(-1.0))}, 2);
    } else {
        rdiff = full({n, h, w, 3}, 0.0);
        ldiff = rdiff;
    }
    if (h >= 2) {
        auto dint = T::sub(T::slice(points, {0, 1, 0, 0}, {n, h - 1, w, 3}),
                           T::slice(points, {0, 0, 0, 0}, {n, h - 1, w, 3}));
        ddiff = T::concat({dint, zeros_row}, 1);
        udiff = T::concat({zeros_row, T::mul(dint, scalar(-1.0))}, 1);
    } else {
        ddiff = full({n, h, w, 3}, 0.0);
        udiff = ddiff;
    }

    // Quadrants pair consecutive neighbor differences: RxD, DxL, LxU, UxR.
    std::array<TensorPtr, 4> quad = {T::cross3(rdiff, ddiff), T::cross3(ddiff, ldiff),
                                     T::cross3(ldiff, udiff), T::cross3(udiff, rdiff)};

    std::int64_t pix = n * h * w;
    // Neighbor availability from the ground-truth masks; quadrant k uses
    // neighbors k and k+1 in the order right, down, left, up.
    const int dr[4] = {0, 1, 0, -1};
    const int dc[4] = {1, 0, -1, 0};
    auto gt_ok = [&](std::int64_t f, std::int64_t r, std::int64_t c) {
        return r >= 0 && r < h && c >= 0 && c < w &&
               gt_validity[static_cast<std::size_t>(f)].is_valid(static_cast<int>(r),
                                                                 static_cast<int>(c));
    };

    std::vector<std::uint8_t> pixel_valid(static_cast<std::size_t>(pix), 0);
    std::vector<int> used(static_cast<std::size_t>(pix), 0);
    TensorPtr acc;
    for (int k = 0; k < 4; ++k) {
        std::vector<double> coef(static_cast<std::size_t>(pix) * 3, 0.0);
        std::int64_t i = 0;
        for (std::int64_t f = 0; f < n; ++f) {
            for (std::int64_t r = 0; r < h; ++r) {
                for (std::int64_t c = 0; c < w; ++c, ++i) {
                    if (!gt_ok(f, r, c)) continue;
                    int k2 = (k + 1) % 4;
                    if (!gt_ok(f, r + dr[k], c + dc[k]) || !gt_ok(f, r + dr[k2], c + dc[k2]))
                        continue;
                    const double* q = quad[static_cast<std::size_t>(k)]->data.data() + i * 3;
                    double len = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
                    if (len < 1e-15) continue;
                    // Orientation from forward values, treated as a constant:
                    // negative-z hemisphere, ties broken toward the camera.
                    double sign = 1.0;
                    if (q[2] > 0.0) {
                        sign = -1.0;
                    } else if (q[2] == 0.0) {
                        const double* pp = points->data.data() + i * 3;
                        if (q[0] * pp[0] + q[1] * pp[1] + q[2] * pp[2] > 0.0) sign = -1.0;
                    }
                    coef[static_cast<std::size_t>(i * 3)] = sign;
                    coef[static_cast<std::size_t>(i * 3 + 1)] = sign;
                    coef[static_cast<std::size_t>(i * 3 + 2)] = sign;
                    ++used[static_cast<std::size_t>(i)];
                }
            }
        }
        auto oriented = T::mul(T::l2_normalize(quad[static_cast<std::size_t>(k)]),
                               constant(std::move(coef), {n, h, w, 3}));
        acc = acc ? T::add(acc, oriented) : oriented;
    }

    for (std::int64_t i = 0; i < pix; ++i) {
        if (used[static_cast<std::size_t>(i)] == 0) continue;
        const double* a = acc->data.data() + i * 3;
        double len = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        if (len < 1e-12) continue;
        pixel_valid[static_cast<std::size_t>(i)] = 1;
    }
    return {T::l2_normalize(acc), std::move(pixel_valid)};
}

TensorPtr normal_loss(const TensorPtr& pred_normals, const std::vector<std::uint8_t>& pred_valid,
                      const std::vector<NormalMap>& gt) {
    if (gt.empty()) throw Error("normal_loss: empty batch");
    std::int64_t n = static_cast<std::int64_t>(gt.size());
    std::int64_t h = gt[0].height, w = gt[0].width;
    Shape expect = {n, h, w, 3};
    if (!pred_normals || pred_normals->shape != expect) {
        throw Error("normal_loss: shape mismatch " +
                    (pred_normals ? shape_str(pred_normals->shape) : std::string("null")) + " vs " +
                    shape_str(expect));
    }
    std::int64_t pix = n * h * w;
    if (static_cast<std::int64_t>(pred_valid.size()) != pix) {
        throw Error("normal_loss: validity mask size mismatch");
    }
    std::vector<double> gt_flat(static_cast<std::size_t>(pix) * 3, 0.0);
    std::vector<double> mask(static_cast<std::size_t>(pix), 0.0);
    std::int64_t count = 0;
    std::int64_t i = 0;
    for (std::int64_t f = 0; f < n; ++f) {
        for (std::int64_t r = 0; r < h; ++r) {
            for (std::int64_t c = 0; c < w; ++c, ++i) {
                const auto& nm = gt[static_cast<std::size_t>(f)];
                if (!pred_valid[static_cast<std::size_t>(i)] ||
                    !nm.is_valid(static_cast<int>(r), static_cast<int>(c)))
                    continue;
                Vec3 gn = nm.normal(static_cast<int>(r), static_cast<int>(c));
                gt_flat[static_cast<std::size_t>(i * 3)] = gn[0];
                gt_flat[static_cast<std::size_t>(i * 3 + 1)] = gn[1];
                gt_flat[static_cast<std::size_t>(i * 3 + 2)] = gn[2];
                mask[static_cast<std::size_t>(i)] = 1.0;
                ++count;
            }
        }
    }
    if (count == 0) return scalar(0.0);
    auto dots = T::sum_axis(T::mul(pred_normals, constant(std::move(gt_flat), expect)), 3);
    auto angles = T::arccos(dots);
    auto masked = T::mul(angles, constant(std::move(mask), {n, h, w}));
    return T::mul(T::sum_all(masked), scalar(1.0 / static_cast<double>(count)));
}

TensorPtr normal_loss(const NormalMap& pred, const NormalMap& gt) {
    std::int64_t h = pred.height, w = pred.width;
    if (h != gt.height || w != gt.width) {
        throw Error("normal_loss: shape mismatch (" + std::to_string(pred.height) + "," +
                    std::to_string(pred.width) + ") vs (" + std::to_string(gt.height) + "," +
                    std::to_string(gt.width) + ")");
    }
    auto pn = constant(pred.normals, {1, h, w, 3});
    return normal_loss(pn, pred.valid, {gt});
}

LossReport vg_loss(const VgPredictions& pred, const VgGroundTruth& gt, const LossWeights& w,
                   std::optional<double> fixed_s_star) {
    w.validate();
    int n = gt.frames();
    if (n == 0) throw Error("vg_loss: empty batch");
    if (static_cast<int>(pred.rotations.size()) != n ||
        static_cast<int>(pred.translations.size()) != n) {
        throw Error("vg_loss: pose prediction count does not match frames");
    }
    check_batch_shape("vg_loss", pred.points, n, gt.height(), gt.width());

    LossReport report;
    if (fixed_s_star) {
        report.s_star = *fixed_s_star;
    } else {
        Rng rng = scale_rng();
        report.s_star = optimal_scale(pred.points, gt.points, w.align_subsample, rng);
    }
    report.points = point_loss(pred.points, gt.points, report.s_star);
    if (n >= 2) {
        report.cam = camera_loss(pred.rotations, pred.translations, gt.poses, report.s_star, w,
                                 &report.rot, &report.trans);
    } else {
        report.cam = scalar(0.0);
        report.rot = scalar(0.0);
        report.trans = scalar(0.0);
    }
    auto [pred_normals, pred_valid] = normals_from_points(pred.points, gt.points);
    report.normal = normal_loss(pred_normals, pred_valid, gt.normals);
    report.total = T::add(report.points, T::add(T::mul(report.cam, scalar(w.lambda_cam)),
                                                T::mul(report.normal, scalar(w.lambda_normal))));
    report.clipped = false;
    return report;
}

TensorPtr global_point_loss(const TensorPtr& global_pred, const VgGroundTruth& gt,
                            const LossWeights& w, double* s_star_out) {
    int n = gt.frames();
    if (n == 0) throw Error("global_point_loss: empty batch");
    check_batch_shape("global_point_loss", global_pred, n, gt.height(), gt.width());
    GtTensors world = gt_point_tensors(gt.points, true, &gt.poses);

    // Optimal scale for the world-frame cloud, weights still 1/z (camera depth).
    std::size_t p = static_cast<std::size_t>(world.total_pixels);
    std::vector<std::uint8_t> valid(p, 0);
    std::vector<double> weights(p, 0.0);
    std::size_t i = 0;
    for (int f = 0; f < n; ++f) {
        const auto& pm = gt.points[static_cast<std::size_t>(f)];
        for (int r = 0; r < pm.height; ++r) {
            for (int c = 0; c < pm.width; ++c, ++i) {
                if (!pm.is_valid(r, c)) continue;
                valid[i] = 1;
                weights[i] = 1.0 / pm.point(r, c)[2];
            }
        }
    }
    Rng rng = current_graph() ? current_graph()->draw_rng("optimal_scale_global") : Rng(0x61abUL);
    double s = optimal_scale(std::span<const double>(global_pred->data),
                             std::span<const double>(world.targets->data), valid, weights,
                             w.align_subsample, rng);
    if (s_star_out) *s_star_out = s;
    return weighted_l1_point_term(global_pred, world, s);
}

LossReport clip_loss(const LossReport& report, double threshold) {
    if (!report.total) throw Error("clip_loss: report has no total");
    LossReport out = report;
    if (report.total->value() > threshold) {
        out.total = T::mul(report.total, scalar(0.0));
        out.clipped = true;
    }
    return out;
}

}  // namespace geolab::losses
