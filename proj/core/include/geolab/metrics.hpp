#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geolab/geometry.hpp"
#include "geolab/synthscene.hpp"

namespace geolab::metrics {

// Vec3 aliases std::array, so the geom operators are not found by ADL here.
using geom::operator+;
using geom::operator-;
using geom::operator*;

// Similarity transform: p -> scale * R p + t.
struct Sim3 {
    double scale = 1.0;
    geom::Rotation rotation;
    geom::Vec3 translation{0, 0, 0};

    geom::Vec3 apply(const geom::Vec3& p) const {
        return scale * (rotation * p) + translation;
    }
};

// Exact nearest-neighbor queries over a static 3D point set.
class KdTree3 {
public:
    explicit KdTree3(std::vector<geom::Vec3> points);
    std::size_t size() const { return points_.size(); }
    // Returns (index, squared distance) of the exact nearest point.
    std::pair<int, double> nearest(const geom::Vec3& q) const;

private:
    struct Node {
        int axis = -1;   // -1 marks a leaf
        int begin = 0, end = 0;
        double split = 0;
        int left = -1, right = -1;
    };
    void build(int node, int begin, int end, int depth);
    void search(int node, const geom::Vec3& q, int* best, double* best_d2) const;

    std::vector<geom::Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

// Median(gt/pred) scale; the alignment used by the monocular depth metrics.
double median_depth_scale(std::span<const double> pred, std::span<const double> gt,
                          std::span<const std::uint8_t> mask);

// Mean over masked pixels of |aligned_pred - gt| / gt.
double abs_rel(std::span<const double> pred, std::span<const double> gt,
               std::span<const std::uint8_t> mask, bool align = true);

// Fraction of masked pixels with max(pred/gt, gt/pred) below the threshold.
double delta_accuracy(std::span<const double> pred, std::span<const double> gt,
                      std::span<const std::uint8_t> mask, double threshold = 1.25,
                      bool align = true);

// Closed-form least-squares similarity mapping source onto target (Umeyama),
// with reflection correction. Errors on degenerate configurations. When the
// identity transform already attains the optimum (identical clouds), it is
// returned exactly.
Sim3 umeyama_sim3(const std::vector<geom::Vec3>& source, const std::vector<geom::Vec3>& target);

struct IcpResult {
    Sim3 transform;
    int iterations = 0;
    std::vector<double> residuals;  // RMS point-to-correspondence distance per iteration
};

// Alternates exact nearest-neighbor correspondence with a full Umeyama re-fit.
// The RMS residual sequence is monotone non-increasing.
IcpResult icp_refine(const std::vector<geom::Vec3>& source, const std::vector<geom::Vec3>& target,
                     const Sim3& init, int max_iter = 50, double tol = 1e-9);

// (accuracy, completion): mean nearest-neighbor distance pred->gt and gt->pred.
std::pair<double, double> acc_comp(const std::vector<geom::Vec3>& pred_cloud,
                                   const std::vector<geom::Vec3>& gt_cloud);

struct PoseAccuracy {
    std::map<int, double> rra;  // threshold deg -> fraction in [0,1]
    std::map<int, double> rta;
    std::vector<double> rot_err_deg;    // per evaluated ordered pair
    std::vector<double> trans_err_deg;  // aligned with rot_err_deg
    int evaluated_pairs = 0;
    int skipped_pairs = 0;  // ground-truth relative translation below 1e-9
};

// All ordered pairs i != j: rotation error is the geodesic angle between
// relative rotations; translation error is the angle between relative
// translation directions.
PoseAccuracy pose_metrics(const std::vector<geom::Pose>& pred, const std::vector<geom::Pose>& gt,
                          const std::vector<int>& thresholds_deg);

// Mean over integer thresholds 1..max_threshold of the fraction of pairs whose
// combined error max(rot, trans) lies below the threshold; equals the
// min(RRA,RTA) accuracy curve area.
double auc(const std::vector<double>& rot_err_deg, const std::vector<double>& trans_err_deg,
           int max_threshold_deg);

struct EvalOptions {
    bool align_depth = true;
    std::vector<int> thresholds_deg = {5, 10, 15, 30};
    int auc_max_deg = 30;
    int pose_samples = 10;
    int icp_max_iter = 50;
    double icp_tol = 1e-9;
    std::uint64_t seed = 0;
};

// Value-level predictions for one scene (no gradients involved).
struct ScenePredictionValues {
    std::vector<geom::PointMap> points;  // camera frame, per frame
    std::vector<geom::Pose> poses;       // camera-to-world
};

struct MetricsReport {
    std::map<std::string, double> values;
    std::int64_t depth_pixels = 0;
    std::int64_t pose_pairs = 0;
    std::int64_t skipped_pairs = 0;
    std::int64_t pred_points = 0;
    std::int64_t gt_points = 0;
    bool sim3_found = false;
    double sim3_scale = 1.0;
    std::int64_t icp_iterations = 0;

    std::string to_json() const;  // flat object, deterministic key order
    static MetricsReport from_json(const std::string& text);
    std::string csv_header() const;
    std::string csv_row() const;
};

MetricsReport evaluate_scene(const ScenePredictionValues& pred, const synth::SceneSample& sample,
                             const EvalOptions& opts);

// Mean of per-scene reports (numeric fields averaged, counts summed).
MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports);

}  // namespace geolab::metrics
