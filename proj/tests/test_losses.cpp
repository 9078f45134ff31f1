#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geolab/finite_diff.hpp"
#include "geolab/losses.hpp"
#include "geolab/ops.hpp"

using namespace geolab;
using namespace geolab::geom;
namespace T = geolab::ops;
using losses::LossWeights;

namespace {

constexpr double kPi = 3.14159265358979323846;

PointMap plane_map(int h, int w, double z) {
    PointMap pm(h, w);
    double f = static_cast<double>(std::max(h, w));
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            pm.set_point(r, c, {(c - 0.5 * (w - 1)) / f * z, (r - 0.5 * (h - 1)) / f * z, z});
    return pm;
}

TensorPtr points_tensor(const std::vector<PointMap>& maps, double scale = 1.0) {
    int n = static_cast<int>(maps.size());
    int h = maps[0].height, w = maps[0].width;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(n) * h * w * 3);
    for (const auto& m : maps)
        for (double v : m.points) data.push_back(v * scale);
    return constant(std::move(data), {n, h, w, 3});
}

losses::VgGroundTruth toy_ground_truth(Rng& rng, int n, int h, int w) {
    losses::VgGroundTruth gt;
    for (int f = 0; f < n; ++f) {
        PointMap pm(h, w);
        double a = rng.uniform(0, 6.28);
        double foc = static_cast<double>(std::max(h, w));
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                double z = 2.0 + 0.3 * std::sin(a + 0.5 * r + 0.3 * c);
                pm.set_point(r, c, {(c - 0.5 * (w - 1)) / foc * z, (r - 0.5 * (h - 1)) / foc * z, z});
            }
        }
        gt.points.push_back(pm);
        gt.normals.push_back(geom::pointmap_normals(pm));
        Pose pose;
        pose.rotation = Rotation::from_axis_angle(
            {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1) + 1.5}, rng.uniform(0.2, 2.0));
        pose.translation = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        gt.poses.push_back(pose);
    }
    return gt;
}

losses::VgPredictions perfect_predictions(const losses::VgGroundTruth& gt) {
    losses::VgPredictions pred;
    pred.points = points_tensor(gt.points);
    for (const auto& pose : gt.poses) {
        std::vector<double> m(pose.rotation.matrix().m.begin(), pose.rotation.matrix().m.end());
        pred.rotations.push_back(constant(std::move(m), {3, 3}));
        pred.translations.push_back(
            constant({pose.translation[0], pose.translation[1], pose.translation[2]}, {3}));
    }
    return pred;
}

// Golden-section search over the convex piecewise-linear scale objective.
double golden_section_scale(const std::vector<double>& pred, const std::vector<double>& gt,
                            const std::vector<std::uint8_t>& valid,
                            const std::vector<double>& weights, double lo, double hi) {
    auto objective = [&](double s) {
        double total = 0.0;
        for (std::size_t i = 0; i < valid.size(); ++i) {
            if (!valid[i]) continue;
            for (int k = 0; k < 3; ++k)
                total += weights[i] * std::fabs(s * pred[i * 3 + k] - gt[i * 3 + k]);
        }
        return total;
    };
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = objective(c), fd = objective(d);
    for (int it = 0; it < 200; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = objective(d);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

TEST_CASE("optimal scale recovers an exact rescale") {
    std::vector<PointMap> gt = {plane_map(4, 4, 2.0)};
    auto pred = points_tensor(gt, 0.5);
    Rng rng(1);
    double s = losses::optimal_scale(pred, gt, 4096, rng);
    CHECK(s == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(losses::point_loss(pred, gt, s)->value() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("optimal scale is the weighted median of ratios") {
    // pred (1,1,1), gt (1,2,6), unit weights: median of {1,2,6} with weights
    // {1,1,1} is 2.
    std::vector<double> pred = {1, 1, 1};
    std::vector<double> gt = {1, 2, 6};
    std::vector<std::uint8_t> valid = {1};
    std::vector<double> weights = {1.0};
    Rng rng(2);
    double s = losses::optimal_scale(pred, gt, valid, weights, 4096, rng);
    CHECK(s == doctest::Approx(2.0));
    double gold = golden_section_scale(pred, gt, valid, weights, -10, 10);
    CHECK(std::fabs(s - gold) < 1e-6);
}

TEST_CASE("optimal scale equals golden-section search on random problems") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        std::size_t p = 5 + rng.uniform_index(8);
        std::vector<double> pred(p * 3), gt(p * 3), weights(p);
        std::vector<std::uint8_t> valid(p, 1);
        for (auto& v : pred) v = rng.uniform(0.2, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
        for (auto& v : gt) v = rng.uniform(-2.0, 2.0);
        for (auto& v : weights) v = rng.uniform(0.2, 2.0);
        Rng r2(trial);
        double s = losses::optimal_scale(pred, gt, valid, weights, 4096, r2);
        double gold = golden_section_scale(pred, gt, valid, weights, -20, 20);
        CHECK(std::fabs(s - gold) < 1e-8);
    }
}

TEST_CASE("optimal scale error cases") {
    std::vector<double> pred = {1, 1, 1};
    std::vector<double> gt = {1, 2, 3};
    std::vector<double> weights = {1.0};
    Rng rng(3);
    std::vector<std::uint8_t> none = {0};
    CHECK_THROWS_AS(losses::optimal_scale(pred, gt, none, weights, 64, rng), Error);
    std::vector<double> tiny = {1e-14, -1e-15, 0.0};
    std::vector<std::uint8_t> valid = {1};
    CHECK_THROWS_AS(losses::optimal_scale(tiny, gt, valid, weights, 64, rng), Error);
}

TEST_CASE("point loss is scale invariant") {
    Rng rng(5);
    auto gt = toy_ground_truth(rng, 2, 5, 5);
    auto base = points_tensor(gt.points);
    std::vector<double> noisy = base->data;
    for (auto& v : noisy) v += rng.uniform(-0.2, 0.2);
    for (double c : {0.1, 1.0, 7.3}) {
        std::vector<double> scaled = noisy;
        for (auto& v : scaled) v *= c;
        auto pred = constant(scaled, base->shape);
        Rng r1(9), r2(9);
        auto ref = constant(noisy, base->shape);
        double s_ref = losses::optimal_scale(ref, gt.points, 4096, r1);
        double s_c = losses::optimal_scale(pred, gt.points, 4096, r2);
        double l_ref = losses::point_loss(ref, gt.points, s_ref)->value();
        double l_c = losses::point_loss(pred, gt.points, s_c)->value();
        CHECK(std::fabs(l_ref - l_c) < 1e-9);
    }
}

TEST_CASE("two-pixel point loss matches the hand-solved pipeline") {
    PointMap gt(1, 2);
    gt.set_point(0, 0, {0, 0, 1});
    gt.set_point(0, 1, {0, 0, 2});
    PointMap predm(1, 2);
    predm.set_point(0, 0, {0, 0, 1});
    predm.set_point(0, 1, {0, 0, 1});
    auto pred = points_tensor({predm});
    Rng rng(4);
    double s = losses::optimal_scale(pred, {gt}, 4096, rng);
    // Ratios over nonzero coords: 1 (w=1) and 2 (w=0.5); weighted median = 1.
    CHECK(s == doctest::Approx(1.0));
    // Loss = (1/(3*1*1*2)) * [w=1*|1-1| + w=0.5*|1-2|] = 0.5/6.
    double loss = losses::point_loss(pred, {gt}, s)->value();
    CHECK(loss == doctest::Approx(0.5 / 6.0));
    // Brute-force 1D scan confirms s = 1 is optimal.
    double best = 1e300, best_s = 0;
    for (double sc = 0.0; sc <= 3.0; sc += 1e-4) {
        double v = 1.0 * std::fabs(sc - 1.0) + 0.5 * std::fabs(sc - 2.0);
        if (v < best) {
            best = v;
            best_s = sc;
        }
    }
    CHECK(std::fabs(best_s - s) < 1e-3);
}

TEST_CASE("rotation loss basics") {
    Rotation r = Rotation::rot_y(0.8);
    CHECK(losses::rotation_loss(r, r)->value() < 5e-4);  // clamp tolerance
    CHECK(losses::rotation_loss(Rotation::rot_x(kPi / 2), Rotation::identity())->value() ==
          doctest::Approx(kPi / 2).epsilon(1e-6));
    Rng rng(6);
    for (int i = 0; i < 10; ++i) {
        Rotation a = Rotation::from_axis_angle({rng.uniform(-1, 1), rng.uniform(-1, 1), 1},
                                               rng.uniform(0.1, 3.0));
        Rotation b = Rotation::from_axis_angle({1, rng.uniform(-1, 1), rng.uniform(-1, 1)},
                                               rng.uniform(0.1, 3.0));
        CHECK(losses::rotation_loss(a, b)->value() ==
              doctest::Approx(geom::geodesic_angle(b, a)).epsilon(1e-10));
    }
}

TEST_CASE("translation loss branches") {
    auto zero = losses::translation_loss(constant({1, 2, 3}, {3}), {1, 2, 3}, 1.0, 1.0);
    CHECK(zero->value() == doctest::Approx(0.0));
    auto quad = losses::translation_loss(constant({0.5, 0, 0}, {3}), {0, 0, 0}, 1.0, 1.0);
    CHECK(quad->value() == doctest::Approx(0.125));
    auto lin = losses::translation_loss(constant({3, 0, 0}, {3}), {0, 0, 0}, 1.0, 1.0);
    CHECK(lin->value() == doctest::Approx(2.5));
}

TEST_CASE("camera loss on perfect predictions is ~0 and N=2 rotation offset gives theta") {
    Rng rng(8);
    auto gt = toy_ground_truth(rng, 3, 3, 3);
    auto pred = perfect_predictions(gt);
    LossWeights w;
    auto cam = losses::camera_loss(pred.rotations, pred.translations, gt.poses, 1.0, w);
    CHECK(cam->value() < 2e-3);  // clamp tolerance on every pair

    // Two views with coincident centers; predictions differ from gt by a pure
    // relative rotation theta, so only the rotation term contributes.
    auto gt2 = toy_ground_truth(rng, 2, 3, 3);
    for (auto& pose : gt2.poses) pose.translation = {0, 0, 0};
    auto pred2 = perfect_predictions(gt2);
    double theta = 0.6;
    Pose p1 = gt2.poses[1];
    p1.rotation = p1.rotation * Rotation::rot_z(theta);
    std::vector<double> m(p1.rotation.matrix().m.begin(), p1.rotation.matrix().m.end());
    pred2.rotations[1] = constant(std::move(m), {3, 3});
    TensorPtr rot, trans;
    losses::camera_loss(pred2.rotations, pred2.translations, gt2.poses, 1.0, w, &rot, &trans);
    CHECK(rot->value() == doctest::Approx(theta).epsilon(1e-6));
    CHECK(trans->value() == doctest::Approx(0.0));
}

TEST_CASE("camera loss equals brute-force pair enumeration") {
    Rng rng(9);
    auto gt = toy_ground_truth(rng, 3, 3, 3);
    losses::VgPredictions pred;
    std::vector<Pose> noisy;
    for (const auto& pose : gt.poses) {
        Pose p = pose;
        p.rotation = p.rotation * Rotation::from_axis_angle({rng.uniform(-1, 1), 1, 0},
                                                            rng.uniform(0.05, 0.6));
        p.translation = p.translation + Vec3{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.1};
        noisy.push_back(p);
        std::vector<double> m(p.rotation.matrix().m.begin(), p.rotation.matrix().m.end());
        pred.rotations.push_back(constant(std::move(m), {3, 3}));
        pred.translations.push_back(
            constant({p.translation[0], p.translation[1], p.translation[2]}, {3}));
    }
    LossWeights w;
    double s_star = 1.17;
    double value =
        losses::camera_loss(pred.rotations, pred.translations, gt.poses, s_star, w)->value();

    double expect = 0.0;
    int n = 3;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            Pose pr = geom::relative_pose(noisy[i], noisy[j]);
            Pose gr = geom::relative_pose(gt.poses[i], gt.poses[j]);
            double rot = geom::geodesic_angle(gr.rotation, pr.rotation);
            double tl = 0.0;
            for (int k = 0; k < 3; ++k) {
                double r = s_star * pr.translation[k] - gr.translation[k];
                tl += std::fabs(r) <= w.huber_delta ? 0.5 * r * r
                                                    : w.huber_delta * (std::fabs(r) - 0.5 * w.huber_delta);
            }
            expect += rot + w.lambda_trans * tl;
        }
    }
    expect /= static_cast<double>(n * (n - 1));
    CHECK(value == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("camera loss is symmetric under view relabeling") {
    Rng rng(10);
    auto gt = toy_ground_truth(rng, 4, 3, 3);
    auto pred = perfect_predictions(gt);
    // Perturb predictions so the value is nonzero.
    for (auto& t : pred.translations) {
        std::vector<double> v = t->data;
        for (auto& x : v) x += rng.uniform(-0.2, 0.2);
        t = constant(v, {3});
    }
    LossWeights w;
    double base = losses::camera_loss(pred.rotations, pred.translations, gt.poses, 1.0, w)->value();
    std::vector<int> perm = {2, 0, 3, 1};
    std::vector<TensorPtr> rp, tp;
    std::vector<Pose> gp;
    for (int i : perm) {
        rp.push_back(pred.rotations[static_cast<std::size_t>(i)]);
        tp.push_back(pred.translations[static_cast<std::size_t>(i)]);
        gp.push_back(gt.poses[static_cast<std::size_t>(i)]);
    }
    double permuted = losses::camera_loss(rp, tp, gp, 1.0, w)->value();
    CHECK(std::fabs(base - permuted) < 1e-12);
}

TEST_CASE("normal loss on identical, antiparallel and orthogonal normals") {
    geom::NormalMap a(1, 1), b(1, 1);
    a.set_normal(0, 0, {0, 0, -1});
    b.set_normal(0, 0, {0, 0, -1});
    CHECK(losses::normal_loss(a, b)->value() < 5e-4);
    b.set_normal(0, 0, {0, 0, 1});
    CHECK(losses::normal_loss(a, b)->value() == doctest::Approx(kPi).epsilon(1e-3));
    b.set_normal(0, 0, {1, 0, 0});
    CHECK(losses::normal_loss(a, b)->value() == doctest::Approx(kPi / 2).epsilon(1e-9));
}

TEST_CASE("vg loss composes its parts and is zero for perfect predictions") {
    Rng rng(11);
    auto gt = toy_ground_truth(rng, 2, 6, 6);
    auto pred = perfect_predictions(gt);
    LossWeights w;
    auto report = losses::vg_loss(pred, gt, w);
    CHECK(report.s_star == doctest::Approx(1.0));
    CHECK(report.points->value() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(report.total->value() < 5e-3);  // arccos clamp residue only

    // Random perturbation: total must equal the recombination of its parts.
    std::vector<double> noisy = pred.points->data;
    for (auto& v : noisy) v += rng.uniform(-0.3, 0.3);
    pred.points = constant(noisy, pred.points->shape);
    auto r2 = losses::vg_loss(pred, gt, w);
    double recombined = r2.points->value() + w.lambda_cam * r2.cam->value() +
                        w.lambda_normal * r2.normal->value();
    CHECK(std::fabs(r2.total->value() - recombined) < 1e-12);
    CHECK(r2.rot->value() >= 0.0);
    CHECK(r2.rot->value() <= kPi);
    CHECK(r2.trans->value() >= 0.0);
}

TEST_CASE("clip loss zeroes large totals and their gradients") {
    auto x = make_leaf({2.0}, {1}, true);
    Graph g(0);
    GraphScope scope(g);
    losses::LossReport report;
    report.total = T::mul(T::mul(x, x), scalar(3.0));  // 12 > 10
    auto clipped = losses::clip_loss(report, 10.0);
    CHECK(clipped.clipped);
    CHECK(clipped.total->value() == 0.0);
    backward(clipped.total);
    CHECK(x->grad[0] == 0.0);

    losses::LossReport small;
    small.total = scalar(9.99);
    auto kept = losses::clip_loss(small, 10.0);
    CHECK_FALSE(kept.clipped);
    CHECK(kept.total->value() == doctest::Approx(9.99));

    losses::LossReport inf_thresh;
    inf_thresh.total = scalar(1e12);
    auto never = losses::clip_loss(inf_thresh, std::numeric_limits<double>::infinity());
    CHECK_FALSE(never.clipped);
}

TEST_CASE("loss gradients pass finite differences via the suite") {
    auto table = run_gradcheck_suite(12345, 3,
                                     "point_loss,rotation_loss,translation_loss,camera_loss,"
                                     "normal_loss,vg_loss");
    REQUIRE(table.size() == 6);
    for (const auto& e : table) {
        INFO(e.name, " err=", e.max_rel_error);
        CHECK(e.passed);
    }
}
