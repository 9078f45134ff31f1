#include "geolab/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace geolab::metrics {

using namespace geolab::geom;
using json = nlohmann::json;

namespace {

constexpr double kRadToDeg = 57.29577951308232088;

double median(std::vector<double> v) {
    if (v.empty()) throw Error("median: empty input");
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Exact rotation angle for metric purposes (no differentiability clamp).
double rotation_angle(const Rotation& a, const Rotation& b) {
    Mat3 rel = a.matrix().transposed() * b.matrix();
    double c = (rel.trace() - 1.0) / 2.0;
    c = std::min(1.0, std::max(-1.0, c));
    return std::acos(c);
}

double direction_angle(const Vec3& a, const Vec3& b) {
    double na = norm(a), nb = norm(b);
    if (na < 1e-9) return 1.5707963267948966;  // no direction information
    double c = dot(a, b) / (na * nb);
    c = std::min(1.0, std::max(-1.0, c));
    return std::acos(c);
}

double mean_squared_error(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                          const Sim3& t) {
    double mse = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        Vec3 d = t.apply(source[i]) - target[i];
        mse += dot(d, d);
    }
    return mse / static_cast<double>(source.size());
}

}  // namespace

KdTree3::KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw Error("kdtree: empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size());
    nodes_.push_back({});
    build(0, 0, static_cast<int>(points_.size()), 0);
}

void KdTree3::build(int node, int begin, int end, int depth) {
    constexpr int kLeafSize = 8;
    if (end - begin <= kLeafSize) {
        nodes_[static_cast<std::size_t>(node)] = Node{-1, begin, end, 0, -1, -1};
        return;
    }
    int axis = depth % 3;
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         return points_[static_cast<std::size_t>(a)][axis] <
                                points_[static_cast<std::size_t>(b)][axis];
                     });
    double split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
    int left = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    int right = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_[static_cast<std::size_t>(node)] = Node{axis, begin, end, split, left, right};
    build(left, begin, mid, depth + 1);
    build(right, mid, end, depth + 1);
}

void KdTree3::search(int node, const Vec3& q, int* best, double* best_d2) const {
    const Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            int idx = order_[static_cast<std::size_t>(i)];
            Vec3 d = points_[static_cast<std::size_t>(idx)] - q;
            double d2 = dot(d, d);
            if (d2 < *best_d2) {
                *best_d2 = d2;
                *best = idx;
            }
        }
        return;
    }
    double diff = q[n.axis] - n.split;
    int first = diff < 0 ? n.left : n.right;
    int second = diff < 0 ? n.right : n.left;
    search(first, q, best, best_d2);
    if (diff * diff < *best_d2) search(second, q, best, best_d2);
}

std::pair<int, double> KdTree3::nearest(const Vec3& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(0, q, &best, &best_d2);
    return {best, best_d2};
}

double median_depth_scale(std::span<const double> pred, std::span<const double> gt,
                          std::span<const std::uint8_t> mask) {
    std::vector<double> ratios;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        if (pred[i] == 0.0) continue;
        ratios.push_back(gt[i] / pred[i]);
    }
    if (ratios.empty()) throw Error("median_depth_scale: empty mask");
    return median(std::move(ratios));
}

double abs_rel(std::span<const double> pred, std::span<const double> gt,
               std::span<const std::uint8_t> mask, bool align) {
    double s = align ? median_depth_scale(pred, gt, mask) : 1.0;
    double total = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        if (gt[i] <= 0) throw Error("abs_rel: non-positive ground-truth depth under mask");
        total += std::fabs(s * pred[i] - gt[i]) / gt[i];
        ++count;
    }
    if (count == 0) throw Error("abs_rel: empty mask");
    return total / static_cast<double>(count);
}

double delta_accuracy(std::span<const double> pred, std::span<const double> gt,
                      std::span<const std::uint8_t> mask, double threshold, bool align) {
    double s = align ? median_depth_scale(pred, gt, mask) : 1.0;
    std::int64_t hit = 0, count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++count;
        double p = s * pred[i];
        if (p <= 0) continue;
        double ratio = std::max(p / gt[i], gt[i] / p);
        if (ratio < threshold) ++hit;
    }
    if (count == 0) throw Error("delta_accuracy: empty mask");
    return static_cast<double>(hit) / static_cast<double>(count);
}

Sim3 umeyama_sim3(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
    std::size_t n = source.size();
    if (n != target.size()) throw Error("umeyama: correspondence count mismatch");
    if (n < 3) throw Error("umeyama: needs at least 3 correspondences");

    Vec3 mu_s{0, 0, 0}, mu_t{0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        mu_s = mu_s + source[i];
        mu_t = mu_t + target[i];
    }
    mu_s = (1.0 / static_cast<double>(n)) * mu_s;
    mu_t = (1.0 / static_cast<double>(n)) * mu_t;

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double var_s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 ds = source[i] - mu_s;
        Vec3 dt = target[i] - mu_t;
        var_s += dot(ds, ds);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) cov(r, c) += dt[r] * ds[c];
    }
    cov /= static_cast<double>(n);
    var_s /= static_cast<double>(n);
    if (var_s < 1e-18) throw Error("umeyama: degenerate (coincident) source configuration");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = svd.singularValues();
    if (d(1) <= 1e-12 * std::max(d(0), 1e-300)) {
        throw Error("umeyama: degenerate (collinear) configuration");
    }
    Eigen::Matrix3d s_fix = Eigen::Matrix3d::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s_fix(2, 2) = -1.0;
    Eigen::Matrix3d r = svd.matrixU() * s_fix * svd.matrixV().transpose();
    double scale = (d(0) + d(1) + s_fix(2, 2) * d(2)) / var_s;
    if (scale <= 0) throw Error("umeyama: non-positive scale (degenerate configuration)");

    Sim3 out;
    Mat3 rm;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rm(i, j) = r(i, j);
    out.rotation = Rotation(rm);
    out.scale = scale;
    Vec3 rs = out.rotation * mu_s;
    out.translation = mu_t - scale * rs;

    // If the identity already attains the least-squares optimum (identical
    // clouds), prefer it so exact self-alignment stays exact.
    Sim3 identity;
    if (mean_squared_error(source, target, identity) <= mean_squared_error(source, target, out)) {
        return identity;
    }
    return out;
}

IcpResult icp_refine(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                     const Sim3& init, int max_iter, double tol) {
    if (source.empty() || target.empty()) throw Error("icp: empty input cloud");
    KdTree3 tree(target);
    IcpResult result;
    result.transform = init;
    double prev = std::numeric_limits<double>::infinity();
    std::vector<Vec3> correspond(source.size());
    for (int it = 0; it < max_iter; ++it) {
        double se = 0.0;
        for (std::size_t i = 0; i < source.size(); ++i) {
            Vec3 p = result.transform.apply(source[i]);
            auto [idx, d2] = tree.nearest(p);
            correspond[i] = target[static_cast<std::size_t>(idx)];
            se += d2;
        }
        double rms = std::sqrt(se / static_cast<double>(source.size()));
        result.residuals.push_back(rms);
        ++result.iterations;
        if (prev - rms < tol) break;
        prev = rms;
        result.transform = umeyama_sim3(source, correspond);
    }
    return result;
}

std::pair<double, double> acc_comp(const std::vector<Vec3>& pred_cloud,
                                   const std::vector<Vec3>& gt_cloud) {
    if (pred_cloud.empty() || gt_cloud.empty()) throw Error("acc_comp: empty cloud");
    KdTree3 gt_tree(gt_cloud);
    double acc = 0.0;
    for (const auto& p : pred_cloud) acc += std::sqrt(gt_tree.nearest(p).second);
    acc /= static_cast<double>(pred_cloud.size());
    KdTree3 pred_tree(pred_cloud);
    double comp = 0.0;
    for (const auto& q : gt_cloud) comp += std::sqrt(pred_tree.nearest(q).second);
    comp /= static_cast<double>(gt_cloud.size());
    return {acc, comp};
}

PoseAccuracy pose_metrics(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                          const std::vector<int>& thresholds_deg) {
    std::size_t n = gt.size();
    if (n < 2) throw Error("pose_metrics: needs at least 2 poses");
    if (pred.size() != n) throw Error("pose_metrics: prediction count mismatch");
    PoseAccuracy out;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            Pose rel_gt = relative_pose(gt[i], gt[j]);
            if (norm(rel_gt.translation) < 1e-9) {
                ++out.skipped_pairs;
                continue;
            }
            Pose rel_pred = relative_pose(pred[i], pred[j]);
            out.rot_err_deg.push_back(rotation_angle(rel_gt.rotation, rel_pred.rotation) *
                                      kRadToDeg);
            out.trans_err_deg.push_back(
                direction_angle(rel_pred.translation, rel_gt.translation) * kRadToDeg);
            ++out.evaluated_pairs;
        }
    }
    for (int t : thresholds_deg) {
        std::int64_t rhit = 0, thit = 0;
        for (std::size_t k = 0; k < out.rot_err_deg.size(); ++k) {
            if (out.rot_err_deg[k] < t) ++rhit;
            if (out.trans_err_deg[k] < t) ++thit;
        }
        double denom = out.evaluated_pairs > 0 ? static_cast<double>(out.evaluated_pairs) : 1.0;
        out.rra[t] = static_cast<double>(rhit) / denom;
        out.rta[t] = static_cast<double>(thit) / denom;
    }
    return out;
}

double auc(const std::vector<double>& rot_err_deg, const std::vector<double>& trans_err_deg,
           int max_threshold_deg) {
    if (max_threshold_deg <= 0) throw Error("auc: max threshold must be positive");
    if (rot_err_deg.size() != trans_err_deg.size()) throw Error("auc: error list mismatch");
    if (rot_err_deg.empty()) return 0.0;
    double total = 0.0;
    for (int t = 1; t <= max_threshold_deg; ++t) {
        std::int64_t hit = 0;
        for (std::size_t k = 0; k < rot_err_deg.size(); ++k) {
            if (std::max(rot_err_deg[k], trans_err_deg[k]) < t) ++hit;
        }
        total += static_cast<double>(hit) / static_cast<double>(rot_err_deg.size());
    }
    return total / static_cast<double>(max_threshold_deg);
}

MetricsReport evaluate_scene(const ScenePredictionValues& pred, const synth::SceneSample& sample,
                             const EvalOptions& opts) {
    std::size_t n = sample.points.size();
    if (pred.points.size() != n || pred.poses.size() != n) {
        throw Error("evaluate_scene: prediction frame count does not match the sample");
    }
    MetricsReport report;

    // Monocular depth: per frame over ground-truth-valid pixels, mean over frames.
    double ar = 0.0, da = 0.0;
    for (std::size_t f = 0; f < n; ++f) {
        auto pred_depth = geom::depth_of(pred.points[f]);
        auto gt_depth = geom::depth_of(sample.points[f]);
        std::vector<std::uint8_t> mask = sample.points[f].valid;
        // Invalid predicted pixels carry NaN depth; restrict to jointly valid.
        for (std::size_t i = 0; i < mask.size(); ++i)
            mask[i] = mask[i] && pred_depth.valid[i] ? 1 : 0;
        ar += abs_rel(pred_depth.depth, gt_depth.depth, mask, opts.align_depth);
        da += delta_accuracy(pred_depth.depth, gt_depth.depth, mask, 1.25, opts.align_depth);
        for (auto m : mask) report.depth_pixels += m;
    }
    report.values["abs_rel"] = ar / static_cast<double>(n);
    report.values["delta_125"] = da / static_cast<double>(n);

    // Point maps: world clouds via each side's own poses, Umeyama on the
    // pixel-aligned correspondences, ICP refinement, then accuracy/completion.
    std::vector<Vec3> pred_cloud, gt_cloud;
    for (std::size_t f = 0; f < n; ++f) {
        for (int r = 0; r < sample.points[f].height; ++r) {
            for (int c = 0; c < sample.points[f].width; ++c) {
                if (!sample.points[f].is_valid(r, c)) continue;
                if (!pred.points[f].is_valid(r, c)) continue;
                pred_cloud.push_back(pred.poses[f].apply(pred.points[f].point(r, c)));
                gt_cloud.push_back(sample.poses[f].apply(sample.points[f].point(r, c)));
            }
        }
    }
    report.pred_points = static_cast<std::int64_t>(pred_cloud.size());
    report.gt_points = static_cast<std::int64_t>(gt_cloud.size());
    Sim3 coarse = umeyama_sim3(pred_cloud, gt_cloud);
    report.sim3_found = true;
    auto icp = icp_refine(pred_cloud, gt_cloud, coarse, opts.icp_max_iter, opts.icp_tol);
    report.icp_iterations = icp.iterations;
    report.sim3_scale = icp.transform.scale;
    std::vector<Vec3> aligned(pred_cloud.size());
    for (std::size_t i = 0; i < pred_cloud.size(); ++i)
        aligned[i] = icp.transform.apply(pred_cloud[i]);
    auto [acc, comp] = acc_comp(aligned, gt_cloud);
    report.values["acc"] = acc;
    report.values["comp"] = comp;

    // Poses: seeded sample of min(pose_samples, N) frames, then all ordered pairs.
    std::vector<std::size_t> frame_ids(n);
    std::iota(frame_ids.begin(), frame_ids.end(), 0);
    std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(opts.pose_samples), n);
    Rng rng = Rng(opts.seed).fork("pose_sample");
    for (std::size_t i = 0; i < keep; ++i) {
        std::size_t j = i + rng.uniform_index(n - i);
        std::swap(frame_ids[i], frame_ids[j]);
    }
    frame_ids.resize(keep);
    std::vector<Pose> sp, sg;
    for (auto f : frame_ids) {
        sp.push_back(pred.poses[f]);
        sg.push_back(sample.poses[f]);
    }
    PoseAccuracy pa = pose_metrics(sp, sg, opts.thresholds_deg);
    report.pose_pairs = pa.evaluated_pairs;
    report.skipped_pairs = pa.skipped_pairs;
    for (int t : opts.thresholds_deg) {
        report.values["rra@" + std::to_string(t)] = pa.rra[t];
        report.values["rta@" + std::to_string(t)] = pa.rta[t];
    }
    report.values["auc@" + std::to_string(opts.auc_max_deg)] =
        auc(pa.rot_err_deg, pa.trans_err_deg, opts.auc_max_deg);
    return report;
}

std::string MetricsReport::to_json() const {
    json j;
    for (const auto& [k, v] : values) j[k] = v;
    j["n_depth_pixels"] = depth_pixels;
    j["n_pose_pairs"] = pose_pairs;
    j["n_skipped_pairs"] = skipped_pairs;
    j["n_pred_points"] = pred_points;
    j["n_gt_points"] = gt_points;
    j["sim3_found"] = sim3_found;
    j["sim3_scale"] = sim3_scale;
    j["icp_iterations"] = icp_iterations;
    return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    json j = json::parse(text);
    MetricsReport r;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "n_depth_pixels") r.depth_pixels = it.value().get<std::int64_t>();
        else if (k == "n_pose_pairs") r.pose_pairs = it.value().get<std::int64_t>();
        else if (k == "n_skipped_pairs") r.skipped_pairs = it.value().get<std::int64_t>();
        else if (k == "n_pred_points") r.pred_points = it.value().get<std::int64_t>();
        else if (k == "n_gt_points") r.gt_points = it.value().get<std::int64_t>();
        else if (k == "sim3_found") r.sim3_found = it.value().get<bool>();
        else if (k == "sim3_scale") r.sim3_scale = it.value().get<double>();
        else if (k == "icp_iterations") r.icp_iterations = it.value().get<std::int64_t>();
        else r.values[k] = it.value().get<double>();
    }
    return r;
}

std::string MetricsReport::csv_header() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, v] : values) {
        (void)v;
        if (!first) os << ',';
        os << k;
        first = false;
    }
    os << ",n_depth_pixels,n_pose_pairs,n_skipped_pairs,n_pred_points,n_gt_points";
    return os.str();
}

std::string MetricsReport::csv_row() const {
    std::ostringstream os;
    os.precision(17);
    bool first = true;
    for (const auto& [k, v] : values) {
        (void)k;
        if (!first) os << ',';
        os << v;
        first = false;
    }
    os << ',' << depth_pixels << ',' << pose_pairs << ',' << skipped_pairs << ',' << pred_points
       << ',' << gt_points;
    return os.str();
}

MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw Error("aggregate_reports: no reports");
    MetricsReport agg;
    for (const auto& r : reports) {
        for (const auto& [k, v] : r.values) agg.values[k] += v;
        agg.depth_pixels += r.depth_pixels;
        agg.pose_pairs += r.pose_pairs;
        agg.skipped_pairs += r.skipped_pairs;
        agg.pred_points += r.pred_points;
        agg.gt_points += r.gt_points;
        agg.icp_iterations += r.icp_iterations;
        agg.sim3_found = agg.sim3_found || r.sim3_found;
    }
    double inv = 1.0 / static_cast<double>(reports.size());
    for (auto& [k, v] : agg.values) {
        (void)k;
        v *= inv;
    }
    agg.sim3_scale = 1.0;
    return agg;
}

}  // namespace geolab::metrics
