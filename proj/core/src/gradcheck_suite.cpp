#include <algorithm>
#include <cmath>
#include <sstream>

#include "geolab/finite_diff.hpp"
#include "geolab/geometry.hpp"
#include "geolab/losses.hpp"
#include "geolab/ops.hpp"

namespace geolab {
namespace {

namespace T = geolab::ops;
using geom::PointMap;
using geom::Pose;
using geom::Rotation;
using geom::Vec3;

std::vector<double> rand_vec(Rng& rng, std::int64_t n, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

TensorPtr rand_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    return constant(rand_vec(rng, numel(shape), lo, hi), shape);
}

// Random values kept at least `margin` from every point in `kinks`.
TensorPtr rand_tensor_away(Rng& rng, const Shape& shape, double lo, double hi,
                           const std::vector<double>& kinks, double margin = 1e-3) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
        for (int tries = 0; tries < 256; ++tries) {
            x = rng.uniform(lo, hi);
            bool ok = true;
            for (double k : kinks) ok = ok && std::fabs(x - k) > margin;
            if (ok) break;
        }
    }
    return constant(std::move(v), shape);
}

// Weighted scalarization keeps the check sensitive to every output element.
TensorFn weighted(Rng& rng, const Shape& out_shape,
                  std::function<TensorPtr(const TensorPtr&)> op) {
    auto w = rand_tensor(rng, out_shape, 0.25, 1.0);
    return [w, op](const TensorPtr& x) { return T::sum_all(T::mul(op(x), w)); };
}

Rotation random_rotation(Rng& rng, double min_angle = 0.2, double max_angle = 2.8) {
    Vec3 axis{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (geom::norm(axis) < 1e-3) axis = {1, 0, 0};
    return Rotation::from_axis_angle(axis, rng.uniform(min_angle, max_angle));
}

Pose random_pose(Rng& rng) {
    Pose p;
    p.rotation = random_rotation(rng);
    p.translation = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    return p;
}

// Smooth pinhole-consistent surface with a few pixels masked out.
PointMap random_surface(Rng& rng, int h, int w, bool holes = true) {
    PointMap pm(h, w);
    double a = rng.uniform(0, 6.28), b = rng.uniform(0, 6.28);
    double f = 0.9 * static_cast<double>(std::max(h, w));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double z = 2.0 + 0.4 * std::sin(a + 0.45 * r) * std::cos(b + 0.35 * c) + 0.05 * r;
            double x = (c - 0.5 * (w - 1)) / f * z;
            double y = (r - 0.5 * (h - 1)) / f * z;
            pm.set_point(r, c, {x, y, z});
        }
    }
    if (holes) {
        int knocked = static_cast<int>(rng.uniform_index(3));
        for (int i = 0; i < knocked; ++i) {
            int r = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(h)));
            int c = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(w)));
            pm.valid[pm.index(r, c)] = 0;
        }
    }
    return pm;
}

losses::VgGroundTruth random_ground_truth(Rng& rng, int n, int h, int w) {
    losses::VgGroundTruth gt;
    for (int f = 0; f < n; ++f) {
        gt.points.push_back(random_surface(rng, h, w));
        gt.normals.push_back(geom::pointmap_normals(gt.points.back()));
        gt.poses.push_back(random_pose(rng));
    }
    return gt;
}

// A perturbed copy of the ground-truth point maps flattened to (N,H,W,3),
// guarded so point-loss residuals sit away from the L1 kinks.
TensorPtr perturbed_points(Rng& rng, const losses::VgGroundTruth& gt, double s_star) {
    int n = gt.frames(), h = gt.height(), w = gt.width();
    std::vector<double> data(static_cast<std::size_t>(n) * h * w * 3);
    std::size_t i = 0;
    for (int f = 0; f < n; ++f) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                Vec3 p = gt.points[static_cast<std::size_t>(f)].point(r, c);
                for (int k = 0; k < 3; ++k, ++i) {
                    double target = p[static_cast<std::size_t>(k)];
                    double v = 0.0;
                    for (int tries = 0; tries < 256; ++tries) {
                        v = target / s_star + rng.uniform(-0.35, 0.35);
                        if (std::fabs(s_star * v - target) > 5e-3) break;
                    }
                    data[i] = v;
                }
            }
        }
    }
    return constant(std::move(data), {n, h, w, 3});
}

// Flattened per-frame 9D rotation parameters plus translations, used as the
// single FD variable for pose-dependent losses.
TensorPtr pose_params(Rng& rng, int n) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(n) * 12);
    for (int f = 0; f < n; ++f) {
        Rotation r = random_rotation(rng);
        for (double x : r.matrix().m) v.push_back(x + rng.uniform(-0.15, 0.15));
        for (int k = 0; k < 3; ++k) v.push_back(rng.uniform(-1.0, 1.0));
    }
    return constant(std::move(v), {n * 12});
}

std::pair<std::vector<TensorPtr>, std::vector<TensorPtr>> split_pose_params(const TensorPtr& x,
                                                                            int n) {
    std::vector<TensorPtr> rots, trans;
    for (int f = 0; f < n; ++f) {
        auto raw9 = T::slice(x, {f * 12}, {9});
        rots.push_back(T::svd_orthogonalize3(T::reshape(raw9, {3, 3})));
        trans.push_back(T::slice(x, {f * 12 + 9}, {3}));
    }
    return {rots, trans};
}

struct CheckSpec {
    std::string name;
    std::function<std::pair<TensorFn, TensorPtr>(Rng&)> make;
};

std::vector<CheckSpec> build_specs() {
    std::vector<CheckSpec> specs;
    auto push = [&](std::string name, std::function<std::pair<TensorFn, TensorPtr>(Rng&)> make) {
        specs.push_back({std::move(name), std::move(make)});
    };

    push("add", [](Rng& rng) {
        auto b = rand_tensor(rng, {3, 4});
        return std::pair{weighted(rng, {3, 4}, [b](const TensorPtr& x) { return T::add(x, b); }),
                         rand_tensor(rng, {3, 4})};
    });
    push("sub", [](Rng& rng) {
        auto b = rand_tensor(rng, {3, 4});
        return std::pair{weighted(rng, {3, 4}, [b](const TensorPtr& x) { return T::sub(b, x); }),
                         rand_tensor(rng, {3, 4})};
    });
    push("mul", [](Rng& rng) {
        auto b = rand_tensor(rng, {3, 4}, 0.3, 1.5);
        return std::pair{weighted(rng, {3, 4}, [b](const TensorPtr& x) { return T::mul(x, b); }),
                         rand_tensor(rng, {3, 4})};
    });
    push("mul_scalar", [](Rng& rng) {
        auto s = scalar(rng.uniform(0.5, 2.0));
        return std::pair{weighted(rng, {2, 3}, [s](const TensorPtr& x) { return T::mul(x, s); }),
                         rand_tensor(rng, {2, 3})};
    });
    push("matmul", [](Rng& rng) {
        auto b = rand_tensor(rng, {4, 3});
        return std::pair{weighted(rng, {2, 3}, [b](const TensorPtr& x) { return T::matmul(x, b); }),
                         rand_tensor(rng, {2, 4})};
    });
    push("matmul_rhs", [](Rng& rng) {
        auto a = rand_tensor(rng, {3, 4});
        return std::pair{weighted(rng, {3, 2}, [a](const TensorPtr& x) { return T::matmul(a, x); }),
                         rand_tensor(rng, {4, 2})};
    });
    push("reshape", [](Rng& rng) {
        return std::pair{
            weighted(rng, {6, 2}, [](const TensorPtr& x) { return T::reshape(x, {6, 2}); }),
            rand_tensor(rng, {3, 4})};
    });
    push("transpose", [](Rng& rng) {
        return std::pair{
            weighted(rng, {4, 2, 3}, [](const TensorPtr& x) { return T::transpose(x, {2, 0, 1}); }),
            rand_tensor(rng, {2, 3, 4})};
    });
    push("concat", [](Rng& rng) {
        auto b = rand_tensor(rng, {2, 3});
        return std::pair{weighted(rng, {6, 3},
                                  [b](const TensorPtr& x) { return T::concat({x, b, x}, 0); }),
                         rand_tensor(rng, {2, 3})};
    });
    push("slice", [](Rng& rng) {
        return std::pair{weighted(rng, {2, 2},
                                  [](const TensorPtr& x) { return T::slice(x, {1, 1}, {2, 2}); }),
                         rand_tensor(rng, {4, 4})};
    });
    push("sum", [](Rng& rng) {
        return std::pair{TensorFn([](const TensorPtr& x) { return T::sum_all(x); }),
                         rand_tensor(rng, {3, 4})};
    });
    push("sum_axis", [](Rng& rng) {
        return std::pair{
            weighted(rng, {2, 4}, [](const TensorPtr& x) { return T::sum_axis(x, 1); }),
            rand_tensor(rng, {2, 3, 4})};
    });
    push("mean", [](Rng& rng) {
        return std::pair{TensorFn([](const TensorPtr& x) { return T::mean_all(x); }),
                         rand_tensor(rng, {3, 4})};
    });
    push("mean_axis", [](Rng& rng) {
        return std::pair{
            weighted(rng, {3, 4}, [](const TensorPtr& x) { return T::mean_axis(x, 0); }),
            rand_tensor(rng, {2, 3, 4})};
    });
    push("softmax", [](Rng& rng) {
        return std::pair{weighted(rng, {3, 5}, [](const TensorPtr& x) { return T::softmax(x); }),
                         rand_tensor(rng, {3, 5}, -2, 2)};
    });
    push("layernorm", [](Rng& rng) {
        return std::pair{weighted(rng, {3, 6}, [](const TensorPtr& x) { return T::layernorm(x); }),
                         rand_tensor(rng, {3, 6}, -2, 2)};
    });
    push("relu", [](Rng& rng) {
        return std::pair{weighted(rng, {4, 4}, [](const TensorPtr& x) { return T::relu(x); }),
                         rand_tensor_away(rng, {4, 4}, -1, 1, {0.0})};
    });
    push("gelu", [](Rng& rng) {
        return std::pair{weighted(rng, {4, 4}, [](const TensorPtr& x) { return T::gelu(x); }),
                         rand_tensor(rng, {4, 4}, -2, 2)};
    });
    push("exp", [](Rng& rng) {
        return std::pair{weighted(rng, {3, 3}, [](const TensorPtr& x) { return T::exp(x); }),
                         rand_tensor(rng, {3, 3}, -1.5, 1.5)};
    });
    push("log", [](Rng& rng) {
        return std::pair{weighted(rng, {3, 3}, [](const TensorPtr& x) { return T::log(x); }),
                         rand_tensor(rng, {3, 3}, 0.2, 3.0)};
    });
    push("sqrt", [](Rng& rng) {
        return std::pair{weighted(rng, {3, 3}, [](const TensorPtr& x) { return T::sqrt(x); }),
                         rand_tensor(rng, {3, 3}, 0.2, 3.0)};
    });
    push("abs", [](Rng& rng) {
        return std::pair{weighted(rng, {4, 4}, [](const TensorPtr& x) { return T::abs(x); }),
                         rand_tensor_away(rng, {4, 4}, -1, 1, {0.0})};
    });
    push("clamp", [](Rng& rng) {
        return std::pair{
            weighted(rng, {4, 4}, [](const TensorPtr& x) { return T::clamp(x, -0.5, 0.5); }),
            rand_tensor_away(rng, {4, 4}, -1, 1, {-0.5, 0.5})};
    });
    push("arccos", [](Rng& rng) {
        return std::pair{weighted(rng, {3, 3}, [](const TensorPtr& x) { return T::arccos(x); }),
                         rand_tensor(rng, {3, 3}, -0.9, 0.9)};
    });
    push("huber", [](Rng& rng) {
        return std::pair{weighted(rng, {4, 4}, [](const TensorPtr& x) { return T::huber(x, 1.0); }),
                         rand_tensor_away(rng, {4, 4}, -2.5, 2.5, {-1.0, 1.0})};
    });
    push("cross3", [](Rng& rng) {
        auto b = rand_tensor(rng, {4, 3});
        return std::pair{weighted(rng, {4, 3}, [b](const TensorPtr& x) { return T::cross3(x, b); }),
                         rand_tensor(rng, {4, 3})};
    });
    push("l2normalize", [](Rng& rng) {
        return std::pair{weighted(rng, {4, 3}, [](const TensorPtr& x) { return T::l2_normalize(x); }),
                         rand_tensor(rng, {4, 3}, 0.3, 1.5)};
    });
    push("svd_orthogonalize3", [](Rng& rng) {
        Rotation r = random_rotation(rng);
        std::vector<double> m(r.matrix().m.begin(), r.matrix().m.end());
        for (auto& v : m) v += rng.uniform(-0.25, 0.25);
        return std::pair{weighted(rng, {3, 3},
                                  [](const TensorPtr& x) { return T::svd_orthogonalize3(x); }),
                         constant(m, {3, 3})};
    });
    push("attention", [](Rng& rng) {
        // FD over [q;k;v] stacked; one frame-blocked query masked out.
        std::vector<std::int64_t> blocks = {0, 3, 6};
        std::vector<std::uint8_t> allowed = {1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1};
        TensorFn f = [blocks, allowed](const TensorPtr& x) {
            auto q = T::slice(x, {0, 0}, {6, 4});
            auto k = T::slice(x, {6, 0}, {6, 4});
            auto v = T::slice(x, {12, 0}, {6, 4});
            auto out = T::attention(q, k, v, 2, 0.7071, blocks, allowed);
            return T::sum_all(T::mul(out, out));
        };
        return std::pair{f, rand_tensor(rng, {18, 4})};
    });

    // Geometry losses.
    push("point_loss", [](Rng& rng) {
        auto gt = random_ground_truth(rng, 2, 5, 5);
        double s_star = rng.uniform(0.7, 1.4);
        auto x = perturbed_points(rng, gt, s_star);
        TensorFn f = [gt, s_star](const TensorPtr& p) {
            return losses::point_loss(p, gt.points, s_star);
        };
        return std::pair{f, x};
    });
    push("rotation_loss", [](Rng& rng) {
        Rotation gt = random_rotation(rng);
        Rotation pred = gt * Rotation::from_axis_angle({rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0},
                                                       rng.uniform(0.3, 1.2));
        std::vector<double> raw(pred.matrix().m.begin(), pred.matrix().m.end());
        for (auto& v : raw) v += rng.uniform(-0.1, 0.1);
        TensorFn f = [gt](const TensorPtr& x) {
            return losses::rotation_loss(T::svd_orthogonalize3(x), gt);
        };
        return std::pair{f, constant(raw, {3, 3})};
    });
    push("translation_loss", [](Rng& rng) {
        Vec3 gt{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        double s_star = rng.uniform(0.8, 1.3);
        auto x = rand_tensor_away(rng, {3}, -2, 2, {-1.0 / s_star, 1.0 / s_star}, 5e-3);
        // Keep each residual away from the Huber knee.
        std::vector<double> v = x->data;
        for (int k = 0; k < 3; ++k) {
            for (int tries = 0; tries < 256; ++tries) {
                double r = s_star * v[static_cast<std::size_t>(k)] - gt[static_cast<std::size_t>(k)];
                if (std::fabs(std::fabs(r) - 1.0) > 5e-3) break;
                v[static_cast<std::size_t>(k)] = rng.uniform(-2, 2);
            }
        }
        TensorFn f = [gt, s_star](const TensorPtr& t) {
            return losses::translation_loss(t, gt, s_star, 1.0);
        };
        return std::pair{f, constant(v, {3})};
    });
    push("camera_loss", [](Rng& rng) {
        int n = 3;
        std::vector<Pose> gt;
        for (int i = 0; i < n; ++i) gt.push_back(random_pose(rng));
        losses::LossWeights w;
        w.lambda_trans = 2.0;  // keeps the FD scalarization balanced
        double s_star = rng.uniform(0.8, 1.2);
        TensorFn f = [gt, w, s_star, n](const TensorPtr& x) {
            auto [rots, trans] = split_pose_params(x, n);
            return losses::camera_loss(rots, trans, gt, s_star, w);
        };
        return std::pair{f, pose_params(rng, n)};
    });
    push("normal_loss", [](Rng& rng) {
        auto gt = random_ground_truth(rng, 2, 5, 5);
        auto x = perturbed_points(rng, gt, 1.0);
        TensorFn f = [gt](const TensorPtr& p) {
            auto [pn, pv] = losses::normals_from_points(p, gt.points);
            return losses::normal_loss(pn, pv, gt.normals);
        };
        return std::pair{f, x};
    });
    push("vg_loss", [](Rng& rng) {
        auto gt = random_ground_truth(rng, 2, 5, 5);
        losses::LossWeights w;
        w.lambda_trans = 2.0;
        double s_star = rng.uniform(0.8, 1.2);
        auto pts = perturbed_points(rng, gt, s_star);
        auto pp = pose_params(rng, 2);
        std::vector<double> flat = pts->data;
        flat.insert(flat.end(), pp->data.begin(), pp->data.end());
        std::int64_t npts = pts->numel();
        int n = gt.frames(), h = gt.height(), wdt = gt.width();
        TensorFn f = [gt, w, s_star, npts, n, h, wdt](const TensorPtr& x) {
            losses::VgPredictions pred;
            pred.points = T::reshape(T::slice(x, {0}, {npts}), {n, h, wdt, 3});
            auto pose_flat = T::slice(x, {npts}, {static_cast<std::int64_t>(n) * 12});
            auto [rots, trans] = split_pose_params(pose_flat, n);
            pred.rotations = rots;
            pred.translations = trans;
            return losses::vg_loss(pred, gt, w, s_star).total;
        };
        return std::pair{f, constant(flat, {npts + n * 12})};
    });
    return specs;
}

bool name_matches(const std::string& name, const std::string& filter) {
    if (filter.empty()) return true;
    std::stringstream ss(filter);
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (!token.empty() && name.find(token) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, int trials,
                                                const std::string& filter) {
    std::vector<GradCheckEntry> table;
    for (const auto& spec : build_specs()) {
        if (!name_matches(spec.name, filter)) continue;
        GradCheckEntry entry;
        entry.name = spec.name;
        Rng base(seed);
        Rng stream = base.fork(spec.name);
        for (int t = 0; t < trials; ++t) {
            Rng trial = stream.fork(static_cast<std::uint64_t>(t));
            auto [f, x] = spec.make(trial);
            entry.max_rel_error = std::max(entry.max_rel_error, finite_diff_check(f, x));
        }
        entry.passed = entry.max_rel_error < entry.tolerance;
        table.push_back(std::move(entry));
    }
    return table;
}

}  // namespace geolab
