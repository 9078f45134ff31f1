#include "geolab/synthscene.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "geolab/blob_io.hpp"
#include "geolab/parallel.hpp"

namespace geolab::synth {

using namespace geolab::geom;
using json = nlohmann::json;

const char* trajectory_name(Trajectory t) {
    switch (t) {
        case Trajectory::Orbit: return "orbit";
        case Trajectory::Line: return "line";
        case Trajectory::RandomWalk: return "random-walk";
    }
    return "?";
}

Trajectory trajectory_from_name(const std::string& name) {
    if (name == "orbit") return Trajectory::Orbit;
    if (name == "line") return Trajectory::Line;
    if (name == "random-walk" || name == "random_walk") return Trajectory::RandomWalk;
    throw ValidationError("unknown trajectory '" + name + "' (orbit|line|random-walk)");
}

void SceneSpec::validate() const {
    if (frames < 2 || frames > 24) {
        throw ValidationError("frames must be in [2,24], got " + std::to_string(frames));
    }
    if (room_extents[0] <= 0 || room_extents[1] <= 0 || room_extents[2] <= 0) {
        throw ValidationError("room extents must be positive");
    }
    if (object_count < 0 || object_count > 64) {
        throw ValidationError("object_count must be in [0,64]");
    }
    if (sphere_fraction < 0 || sphere_fraction > 1) {
        throw ValidationError("sphere_fraction must be in [0,1]");
    }
    if (height < 4 || width < 4 || height > 2048 || width > 2048) {
        throw ValidationError("image size must be in [4,2048]");
    }
}

void Intrinsics::validate() const {
    if (fx <= 0 || fy <= 0) throw ValidationError("intrinsics: focal lengths must be positive");
    if (cx <= 0 || cx >= width || cy <= 0 || cy >= height) {
        throw ValidationError("intrinsics: principal point must lie inside the image");
    }
}

namespace {

constexpr double kRayEps = 1e-9;

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal{0, 0, 0};  // world frame, outward from the surface
    Vec3 albedo{0, 0, 0};
    int prim = -1;
};

// Exit of a ray starting inside an AABB. Returns the exit parameter and the
// axis/sign of the exit face.
bool aabb_exit(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d, double* t_out,
               int* axis_out, int* sign_out) {
    double best = std::numeric_limits<double>::infinity();
    int axis = -1, sign = 0;
    for (int a = 0; a < 3; ++a) {
        if (d[a] > kRayEps) {
            double t = (hi[a] - o[a]) / d[a];
            if (t < best) {
                best = t;
                axis = a;
                sign = +1;
            }
        } else if (d[a] < -kRayEps) {
            double t = (lo[a] - o[a]) / d[a];
            if (t < best) {
                best = t;
                axis = a;
                sign = -1;
            }
        }
    }
    if (axis < 0 || best <= kRayEps) return false;
    *t_out = best;
    *axis_out = axis;
    *sign_out = sign;
    return true;
}

// Entry of a ray into an AABB from outside.
bool aabb_enter(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d, double* t_out,
                int* axis_out) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::fabs(d[a]) < kRayEps) {
            if (o[a] < lo[a] || o[a] > hi[a]) return false;
            continue;
        }
        double t0 = (lo[a] - o[a]) / d[a];
        double t1 = (hi[a] - o[a]) / d[a];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_near) {
            t_near = t0;
            axis = a;
        }
        t_far = std::min(t_far, t1);
        if (t_near > t_far) return false;
    }
    if (axis < 0 || t_near <= kRayEps) return false;  // starts inside: no entry hit
    *t_out = t_near;
    *axis_out = axis;
    return true;
}

bool sphere_enter(const Sphere& s, const Vec3& o, const Vec3& d, double* t_out) {
    Vec3 oc = o - s.center;
    double a = dot(d, d);
    double b = 2.0 * dot(d, oc);
    double c = dot(oc, oc) - s.radius * s.radius;
    if (c < 0) return false;  // origin inside
    double disc = b * b - 4 * a * c;
    if (disc < 0) return false;
    double t = (-b - std::sqrt(disc)) / (2 * a);
    if (t <= kRayEps) return false;
    *t_out = t;
    return true;
}

Hit trace(const SceneGeometry& g, const Vec3& origin, const Vec3& dir) {
    Hit best;
    // Room interior; the +y face is open sky.
    double t;
    int axis, sign;
    if (aabb_exit(g.room_lo, g.room_hi, origin, dir, &t, &axis, &sign)) {
        if (!(axis == 1 && sign == +1)) {
            best.t = t;
            best.normal = {0, 0, 0};
            best.normal[axis] = -static_cast<double>(sign);  // inward
            best.albedo = (axis == 1) ? g.floor_albedo : g.wall_albedo;
            best.prim = 0;
        }
    }
    int id = 1;
    for (const auto& b : g.boxes) {
        if (aabb_enter(b.lo, b.hi, origin, dir, &t, &axis) && t < best.t) {
            best.t = t;
            best.normal = {0, 0, 0};
            best.normal[axis] = dir[axis] > 0 ? -1.0 : 1.0;  // outward entry face
            best.albedo = b.albedo;
            best.prim = id;
        }
        ++id;
    }
    for (const auto& s : g.spheres) {
        if (sphere_enter(s, origin, dir, &t) && t < best.t) {
            best.t = t;
            Vec3 p = origin + t * dir;
            best.normal = (1.0 / s.radius) * (p - s.center);
            best.albedo = s.albedo;
            best.prim = id;
        }
        ++id;
    }
    return best;
}

SceneGeometry make_geometry(Rng rng, const SceneSpec& spec) {
    SceneGeometry g;
    double ex = spec.room_extents[0], ey = spec.room_extents[1], ez = spec.room_extents[2];
    g.room_lo = {-0.5 * ex, 0.0, -0.5 * ez};
    g.room_hi = {0.5 * ex, ey, 0.5 * ez};
    g.light_dir = geom::normalized({rng.uniform(-0.6, 0.6), -1.0, rng.uniform(-0.6, 0.6)});
    for (int i = 0; i < spec.object_count; ++i) {
        Vec3 albedo{rng.uniform(0.25, 0.95), rng.uniform(0.25, 0.95), rng.uniform(0.25, 0.95)};
        if (rng.uniform() < spec.sphere_fraction) {
            Sphere s;
            s.radius = rng.uniform(0.25, 0.55);
            double m = s.radius + 0.2;
            s.center = {rng.uniform(g.room_lo[0] + m, g.room_hi[0] - m),
                        s.radius + rng.uniform(0.0, 0.35),
                        rng.uniform(g.room_lo[2] + m, g.room_hi[2] - m)};
            s.albedo = albedo;
            g.spheres.push_back(s);
        } else {
            Vec3 half{rng.uniform(0.2, 0.45), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.45)};
            double mx = half[0] + 0.2, mz = half[2] + 0.2;
            Vec3 center{rng.uniform(g.room_lo[0] + mx, g.room_hi[0] - mx),
                        half[1] + rng.uniform(0.0, 0.2),
                        rng.uniform(g.room_lo[2] + mz, g.room_hi[2] - mz)};
            AxisBox b;
            b.lo = center - half;
            b.hi = center + half;
            b.albedo = albedo;
            g.boxes.push_back(b);
        }
    }
    return g;
}

Pose look_at(const Vec3& eye, const Vec3& target, Rng& rng) {
    Vec3 forward = geom::normalized(target - eye);
    Vec3 down{rng.uniform(-0.05, 0.05), -1.0, rng.uniform(-0.05, 0.05)};
    Vec3 xc = geom::normalized(cross(down, forward));
    Vec3 yc = cross(forward, xc);
    Mat3 m;
    for (int i = 0; i < 3; ++i) {
        m(i, 0) = xc[static_cast<std::size_t>(i)];
        m(i, 1) = yc[static_cast<std::size_t>(i)];
        m(i, 2) = forward[static_cast<std::size_t>(i)];
    }
    Pose p;
    p.rotation = Rotation(m);
    p.translation = eye;
    return p;
}

bool camera_clear_of_objects(const SceneGeometry& g, const Vec3& eye) {
    const double margin = 0.08;
    if (eye[0] < g.room_lo[0] + margin || eye[0] > g.room_hi[0] - margin) return false;
    if (eye[1] < g.room_lo[1] + margin || eye[1] > g.room_hi[1] - margin) return false;
    if (eye[2] < g.room_lo[2] + margin || eye[2] > g.room_hi[2] - margin) return false;
    for (const auto& s : g.spheres) {
        if (geom::norm(eye - s.center) < s.radius + margin) return false;
    }
    for (const auto& b : g.boxes) {
        bool inside = true;
        for (int a = 0; a < 3; ++a)
            inside = inside && eye[a] > b.lo[a] - margin && eye[a] < b.hi[a] + margin;
        if (inside) return false;
    }
    return true;
}

std::vector<Pose> make_trajectory(Rng rng, const SceneSpec& spec, const SceneGeometry& g) {
    int n = spec.frames;
    double ex = spec.room_extents[0], ey = spec.room_extents[1], ez = spec.room_extents[2];
    Vec3 target{rng.uniform(-0.2, 0.2), 0.3 * ey + rng.uniform(-0.1, 0.1),
                rng.uniform(-0.2, 0.2)};
    std::vector<Pose> poses;
    poses.reserve(static_cast<std::size_t>(n));
    switch (spec.trajectory) {
        case Trajectory::Orbit: {
            double radius = 0.32 * std::min(ex, ez) + rng.uniform(0.0, 0.08 * std::min(ex, ez));
            double phase = rng.uniform(0.0, 6.283185307179586);
            double height = ey * rng.uniform(0.45, 0.65);
            Vec3 center{rng.uniform(-0.1, 0.1), height, rng.uniform(-0.1, 0.1)};
            for (int i = 0; i < n; ++i) {
                double a = phase + 6.283185307179586 * i / n;
                Vec3 eye = center + radius * Vec3{std::cos(a), 0.0, std::sin(a)};
                poses.push_back(look_at(eye, target, rng));
            }
            break;
        }
        case Trajectory::Line: {
            auto sample_point = [&] {
                return Vec3{rng.uniform(-0.35 * ex, 0.35 * ex), ey * rng.uniform(0.4, 0.7),
                            rng.uniform(-0.35 * ez, 0.35 * ez)};
            };
            Vec3 p0 = sample_point(), p1 = sample_point();
            for (int i = 0; i < n; ++i) {
                double u = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
                Vec3 eye = p0 + u * (p1 - p0);
                poses.push_back(look_at(eye, target, rng));
            }
            break;
        }
        case Trajectory::RandomWalk: {
            Vec3 eye{rng.uniform(-0.2 * ex, 0.2 * ex), ey * rng.uniform(0.45, 0.6),
                     rng.uniform(-0.2 * ez, 0.2 * ez)};
            for (int i = 0; i < n; ++i) {
                poses.push_back(look_at(eye, target + Vec3{rng.uniform(-0.15, 0.15), 0.0,
                                                           rng.uniform(-0.15, 0.15)},
                                        rng));
                Vec3 step{rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1), rng.uniform(-0.3, 0.3)};
                eye = eye + step;
                eye[0] = std::min(std::max(eye[0], -0.4 * ex), 0.4 * ex);
                eye[1] = std::min(std::max(eye[1], 0.25 * ey), 0.8 * ey);
                eye[2] = std::min(std::max(eye[2], -0.4 * ez), 0.4 * ez);
            }
            break;
        }
    }
    return poses;
}

Intrinsics default_intrinsics(const SceneSpec& spec) {
    Intrinsics k;
    k.width = spec.width;
    k.height = spec.height;
    // 60-degree horizontal field of view.
    k.fx = 0.5 * spec.width / std::tan(0.5235987755982988);
    k.fy = k.fx;
    k.cx = 0.5 * spec.width;
    k.cy = 0.5 * spec.height;
    return k;
}

}  // namespace

RenderResult render(const SceneGeometry& scene, const Pose& pose, const Intrinsics& k) {
    k.validate();
    RenderResult out;
    int h = k.height, w = k.width;
    out.depth.height = h;
    out.depth.width = w;
    out.depth.depth.assign(static_cast<std::size_t>(h) * w,
                           std::numeric_limits<double>::quiet_NaN());
    out.depth.valid.assign(static_cast<std::size_t>(h) * w, 0);
    out.points = PointMap(h, w);
    out.normals = NormalMap(h, w);
    out.image.assign(static_cast<std::size_t>(h) * w * 3, 0.0);
    out.prim_id.assign(static_cast<std::size_t>(h) * w, -1);

    const Mat3& r = pose.rotation.matrix();
    Mat3 rt = r.transposed();
    const Vec3& origin = pose.translation;

    parallel_for(h, [&](std::int64_t row) {
        int rr = static_cast<int>(row);
        for (int c = 0; c < w; ++c) {
            Vec3 dir_cam{(c + 0.5 - k.cx) / k.fx, (rr + 0.5 - k.cy) / k.fy, 1.0};
            Vec3 dir_w = r * dir_cam;
            Hit hit = trace(scene, origin, dir_w);
            std::size_t i = static_cast<std::size_t>(rr) * w + c;
            if (hit.prim < 0) continue;
            double z = hit.t;  // dir_cam.z == 1, so the parameter is the depth
            out.depth.depth[i] = z;
            out.depth.valid[i] = 1;
            out.points.set_point(rr, c, z * dir_cam);
            Vec3 n_cam = rt * hit.normal;
            Vec3 p_cam = z * dir_cam;
            if (n_cam[2] > 0.0 || (n_cam[2] == 0.0 && dot(n_cam, p_cam) > 0.0)) {
                n_cam = -1.0 * n_cam;
            }
            out.normals.set_normal(rr, c, geom::normalized(n_cam));
            double shade = 0.3 + 0.7 * std::fabs(dot(hit.normal, scene.light_dir));
            for (int ch = 0; ch < 3; ++ch)
                out.image[i * 3 + static_cast<std::size_t>(ch)] =
                    hit.albedo[static_cast<std::size_t>(ch)] * shade;
            out.prim_id[i] = hit.prim;
        }
    });

    std::size_t hits = 0;
    for (auto v : out.depth.valid) hits += v;
    out.hit_ratio = static_cast<double>(hits) / static_cast<double>(h * w);
    return out;
}

GeneratedScene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng root(spec.seed);
    GeneratedScene scene;
    scene.geometry = make_geometry(root.fork("geometry"), spec);
    scene.intrinsics = default_intrinsics(spec);

    Rng traj_root = root.fork("trajectory");
    const int kRetryLimit = 100;
    for (int attempt = 0; attempt < kRetryLimit; ++attempt) {
        auto poses = make_trajectory(traj_root.fork(static_cast<std::uint64_t>(attempt)), spec,
                                     scene.geometry);
        bool ok = true;
        for (const auto& p : poses) {
            if (!camera_clear_of_objects(scene.geometry, p.translation)) {
                ok = false;
                break;
            }
            auto r = render(scene.geometry, p, scene.intrinsics);
            if (r.hit_ratio < 0.3) {
                ok = false;
                break;
            }
        }
        if (ok) {
            scene.poses = std::move(poses);
            return scene;
        }
    }
    throw Error("generate_scene: retry limit exhausted for seed " + std::to_string(spec.seed));
}

SceneSample make_scene_sample(const SceneSpec& spec) {
    GeneratedScene scene = generate_scene(spec);
    SceneSample s;
    s.spec = spec;
    s.intrinsics = scene.intrinsics;
    s.poses = scene.poses;
    for (const auto& pose : scene.poses) {
        RenderResult r = render(scene.geometry, pose, scene.intrinsics);
        s.images.push_back(std::move(r.image));
        s.points.push_back(std::move(r.points));
        s.depths.push_back(std::move(r.depth));
        s.normals.push_back(std::move(r.normals));
    }
    return s;
}

losses::VgGroundTruth SceneSample::ground_truth() const {
    losses::VgGroundTruth gt;
    gt.points = points;
    gt.normals = normals;
    gt.poses = poses;
    return gt;
}

std::vector<int> pseudo_caption(const SceneSpec& spec, int count, int vocab) {
    if (vocab < 2) throw ValidationError("pseudo_caption: vocab must be >= 2");
    std::uint64_t mix = static_cast<std::uint64_t>(spec.object_count) |
                        (static_cast<std::uint64_t>(spec.trajectory) << 8) |
                        (static_cast<std::uint64_t>(spec.frames) << 16);
    Rng stream = Rng(spec.seed).fork("caption").fork(mix);
    std::vector<int> tokens(static_cast<std::size_t>(count));
    for (auto& t : tokens)
        t = static_cast<int>(stream.uniform_index(static_cast<std::uint64_t>(vocab)));
    return tokens;
}

// ---------------------------------------------------------------------------
// Dataset persistence.
// ---------------------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;

json spec_to_json(const SceneSpec& s) {
    json j;
    j["seed"] = s.seed;
    j["room_extents"] = {s.room_extents[0], s.room_extents[1], s.room_extents[2]};
    j["object_count"] = s.object_count;
    j["sphere_fraction"] = s.sphere_fraction;
    j["trajectory"] = trajectory_name(s.trajectory);
    j["frames"] = s.frames;
    j["height"] = s.height;
    j["width"] = s.width;
    return j;
}

SceneSpec spec_from_json(const json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    auto e = j.at("room_extents");
    s.room_extents = {e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()};
    s.object_count = j.at("object_count").get<int>();
    s.sphere_fraction = j.at("sphere_fraction").get<double>();
    s.trajectory = trajectory_from_name(j.at("trajectory").get<std::string>());
    s.frames = j.at("frames").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    return s;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

TensorPtr mask_tensor(const std::vector<std::uint8_t>& mask, Shape shape) {
    std::vector<double> d(mask.begin(), mask.end());
    return constant(std::move(d), std::move(shape));
}

std::vector<std::uint8_t> mask_from_tensor(const TensorPtr& t) {
    std::vector<std::uint8_t> m(t->data.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = t->data[i] != 0.0 ? 1 : 0;
    return m;
}

std::string serialize_scene(const SceneSample& s) {
    int n = s.spec.frames, h = s.spec.height, w = s.spec.width;
    std::ostringstream os(std::ios::binary);

    std::vector<double> buf;
    auto cat = [&buf](const auto& src) { buf.insert(buf.end(), src.begin(), src.end()); };

    buf.clear();
    for (const auto& img : s.images) cat(img);
    save_tensor(os, *constant(buf, {n, h, w, 3}));

    buf.clear();
    for (const auto& d : s.depths) cat(d.depth);
    save_tensor(os, *constant(buf, {n, h, w}));
    std::vector<std::uint8_t> m;
    for (const auto& d : s.depths) m.insert(m.end(), d.valid.begin(), d.valid.end());
    save_tensor(os, *mask_tensor(m, {n, h, w}));

    buf.clear();
    for (const auto& p : s.points) cat(p.points);
    save_tensor(os, *constant(buf, {n, h, w, 3}));
    m.clear();
    for (const auto& p : s.points) m.insert(m.end(), p.valid.begin(), p.valid.end());
    save_tensor(os, *mask_tensor(m, {n, h, w}));

    buf.clear();
    for (const auto& nm : s.normals) cat(nm.normals);
    save_tensor(os, *constant(buf, {n, h, w, 3}));
    m.clear();
    for (const auto& nm : s.normals) m.insert(m.end(), nm.valid.begin(), nm.valid.end());
    save_tensor(os, *mask_tensor(m, {n, h, w}));

    buf.clear();
    for (const auto& pose : s.poses) {
        auto hm = pose.as_homogeneous();
        buf.insert(buf.end(), hm.begin(), hm.end());
    }
    save_tensor(os, *constant(buf, {n, 4, 4}));

    save_tensor(os, *constant({s.intrinsics.fx, s.intrinsics.fy, s.intrinsics.cx, s.intrinsics.cy,
                               static_cast<double>(s.intrinsics.width),
                               static_cast<double>(s.intrinsics.height)},
                              {6}));
    return os.str();
}

SceneSample deserialize_scene(const std::string& bytes, const SceneSpec& spec) {
    std::istringstream is(bytes, std::ios::binary);
    SceneSample s;
    s.spec = spec;
    int n = spec.frames, h = spec.height, w = spec.width;
    std::int64_t pix = static_cast<std::int64_t>(h) * w;

    auto images = load_tensor(is);
    auto depths = load_tensor(is);
    auto depth_valid = load_tensor(is);
    auto points = load_tensor(is);
    auto point_valid = load_tensor(is);
    auto normals = load_tensor(is);
    auto normal_valid = load_tensor(is);
    auto poses = load_tensor(is);
    auto intr = load_tensor(is);

    if (images->shape != Shape{n, h, w, 3} || poses->shape != Shape{n, 4, 4}) {
        throw Error("dataset: scene payload shapes do not match the manifest spec");
    }
    auto pv = mask_from_tensor(point_valid);
    auto dv = mask_from_tensor(depth_valid);
    auto nv = mask_from_tensor(normal_valid);
    for (int f = 0; f < n; ++f) {
        std::size_t base = static_cast<std::size_t>(f) * pix;
        s.images.emplace_back(images->data.begin() + static_cast<std::ptrdiff_t>(base * 3),
                              images->data.begin() + static_cast<std::ptrdiff_t>((base + pix) * 3));
        PointMap pm(h, w);
        std::copy(points->data.begin() + static_cast<std::ptrdiff_t>(base * 3),
                  points->data.begin() + static_cast<std::ptrdiff_t>((base + pix) * 3),
                  pm.points.begin());
        std::copy(pv.begin() + static_cast<std::ptrdiff_t>(base),
                  pv.begin() + static_cast<std::ptrdiff_t>(base + pix), pm.valid.begin());
        s.points.push_back(std::move(pm));

        geom::DepthMap dm;
        dm.height = h;
        dm.width = w;
        dm.depth.assign(depths->data.begin() + static_cast<std::ptrdiff_t>(base),
                        depths->data.begin() + static_cast<std::ptrdiff_t>(base + pix));
        dm.valid.assign(dv.begin() + static_cast<std::ptrdiff_t>(base),
                        dv.begin() + static_cast<std::ptrdiff_t>(base + pix));
        s.depths.push_back(std::move(dm));

        NormalMap nm(h, w);
        std::copy(normals->data.begin() + static_cast<std::ptrdiff_t>(base * 3),
                  normals->data.begin() + static_cast<std::ptrdiff_t>((base + pix) * 3),
                  nm.normals.begin());
        std::copy(nv.begin() + static_cast<std::ptrdiff_t>(base),
                  nv.begin() + static_cast<std::ptrdiff_t>(base + pix), nm.valid.begin());
        s.normals.push_back(std::move(nm));

        Mat3 rm;
        Vec3 t;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j)
                rm(i, j) = poses->data[static_cast<std::size_t>(f * 16 + i * 4 + j)];
            t[static_cast<std::size_t>(i)] = poses->data[static_cast<std::size_t>(f * 16 + i * 4 + 3)];
        }
        s.poses.push_back(Pose{Rotation(rm), t});
    }
    s.intrinsics.fx = intr->data[0];
    s.intrinsics.fy = intr->data[1];
    s.intrinsics.cx = intr->data[2];
    s.intrinsics.cy = intr->data[3];
    s.intrinsics.width = static_cast<int>(intr->data[4]);
    s.intrinsics.height = static_cast<int>(intr->data[5]);
    return s;
}

}  // namespace

DatasetManifest save_dataset(const std::vector<SceneSample>& scenes, const std::string& dir,
                             std::uint64_t global_seed) {
    DatasetManifest manifest;
    manifest.format_version = kFormatVersion;
    manifest.global_seed = global_seed;

    std::ofstream bin(dir + "/scenes.bin", std::ios::binary);
    if (!bin) throw Error("dataset: cannot open " + dir + "/scenes.bin for writing");
    std::uint64_t offset = 0;
    for (const auto& s : scenes) {
        std::string bytes = serialize_scene(s);
        SceneEntry e;
        e.spec = s.spec;
        e.offset = offset;
        e.length = bytes.size();
        e.checksum = to_hex(fnv1a64(bytes.data(), bytes.size()));
        bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        offset += bytes.size();
        manifest.scenes.push_back(std::move(e));
    }
    bin.close();

    json j;
    j["format_version"] = manifest.format_version;
    j["global_seed"] = manifest.global_seed;
    j["checksum_algorithm"] = "fnv1a64";
    j["scenes"] = json::array();
    for (std::size_t i = 0; i < manifest.scenes.size(); ++i) {
        const auto& e = manifest.scenes[i];
        json je;
        je["index"] = i;
        je["offset"] = e.offset;
        je["length"] = e.length;
        je["checksum"] = e.checksum;
        je["spec"] = spec_to_json(e.spec);
        j["scenes"].push_back(je);
    }
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw Error("dataset: cannot open " + dir + "/manifest.json for writing");
    mf << j.dump(2) << '\n';
    return manifest;
}

DatasetManifest read_manifest(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw Error("dataset: cannot open " + dir + "/manifest.json");
    json j = json::parse(mf);
    DatasetManifest manifest;
    manifest.format_version = j.at("format_version").get<int>();
    if (manifest.format_version != kFormatVersion) {
        throw Error("dataset: format version mismatch, expected " +
                    std::to_string(kFormatVersion) + " got " +
                    std::to_string(manifest.format_version));
    }
    manifest.global_seed = j.at("global_seed").get<std::uint64_t>();
    for (const auto& je : j.at("scenes")) {
        SceneEntry e;
        e.offset = je.at("offset").get<std::uint64_t>();
        e.length = je.at("length").get<std::uint64_t>();
        e.checksum = je.at("checksum").get<std::string>();
        e.spec = spec_from_json(je.at("spec"));
        manifest.scenes.push_back(std::move(e));
    }
    return manifest;
}

SceneSample load_scene(const std::string& dir, const DatasetManifest& manifest, int index) {
    if (index < 0 || index >= static_cast<int>(manifest.scenes.size())) {
        throw Error("dataset: scene index " + std::to_string(index) + " out of range");
    }
    const auto& e = manifest.scenes[static_cast<std::size_t>(index)];
    std::ifstream bin(dir + "/scenes.bin", std::ios::binary);
    if (!bin) throw Error("dataset: cannot open " + dir + "/scenes.bin");
    bin.seekg(static_cast<std::streamoff>(e.offset));
    std::string bytes(e.length, '\0');
    bin.read(bytes.data(), static_cast<std::streamsize>(e.length));
    if (!bin) {
        throw Error("dataset: truncated payload for scene " + std::to_string(index));
    }
    std::string sum = to_hex(fnv1a64(bytes.data(), bytes.size()));
    if (sum != e.checksum) {
        throw Error("dataset: checksum mismatch for scene " + std::to_string(index) + " (stored " +
                    e.checksum + ", computed " + sum + ")");
    }
    return deserialize_scene(bytes, e.spec);
}

std::vector<SceneSample> load_dataset(const std::string& dir) {
    DatasetManifest manifest = read_manifest(dir);
    std::vector<SceneSample> scenes;
    scenes.reserve(manifest.scenes.size());
    for (int i = 0; i < static_cast<int>(manifest.scenes.size()); ++i) {
        scenes.push_back(load_scene(dir, manifest, i));
    }
    return scenes;
}

}  // namespace geolab::synth
