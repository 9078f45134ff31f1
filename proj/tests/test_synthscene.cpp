#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "geolab/synthscene.hpp"

using namespace geolab;
using namespace geolab::geom;
using namespace geolab::synth;

namespace {

constexpr double kPi = 3.14159265358979323846;

SceneSpec small_spec(std::uint64_t seed) {
    SceneSpec s;
    s.seed = seed;
    s.frames = 3;
    s.height = 24;
    s.width = 24;
    s.object_count = 3;
    return s;
}

std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("geolab_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("same seed produces bit-identical scenes") {
    auto a = make_scene_sample(small_spec(7));
    auto b = make_scene_sample(small_spec(7));
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t f = 0; f < a.points.size(); ++f) {
        CHECK(a.points[f].points == b.points[f].points);
        CHECK(a.points[f].valid == b.points[f].valid);
        CHECK(a.images[f] == b.images[f]);
        CHECK(a.poses[f].translation == b.poses[f].translation);
    }
}

TEST_CASE("orbit cameras are equidistant from the orbit center") {
    SceneSpec s = small_spec(11);
    s.trajectory = Trajectory::Orbit;
    s.frames = 6;
    auto scene = generate_scene(s);
    // The orbit center is the mean of the camera centers.
    Vec3 center{0, 0, 0};
    for (const auto& p : scene.poses) center = center + p.translation;
    center = (1.0 / static_cast<double>(scene.poses.size())) * center;
    double r0 = norm(scene.poses[0].translation - center);
    for (const auto& p : scene.poses) {
        CHECK(std::fabs(norm(p.translation - center) - r0) < 1e-9);
    }
}

TEST_CASE("every generated frame hits at least 30% of its pixels") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
        SceneSpec s = small_spec(seed);
        auto scene = generate_scene(s);
        for (const auto& p : scene.poses) {
            auto r = render(scene.geometry, p, scene.intrinsics);
            CHECK(r.hit_ratio >= 0.3);
        }
    }
}

TEST_CASE("camera facing a wall sees constant depth and -z normals") {
    SceneGeometry g;
    g.room_lo = {-2, 0, -2};
    g.room_hi = {2, 2, 2};
    Intrinsics k;
    k.width = 16;
    k.height = 16;
    k.fx = k.fy = 200.0;  // narrow fov so every ray hits the front wall
    k.cx = 8;
    k.cy = 8;
    Pose pose;  // identity: at origin-ish looking along +z
    pose.translation = {0, 1, 0};
    auto r = render(g, pose, k);
    for (int row = 0; row < 16; ++row) {
        for (int c = 0; c < 16; ++c) {
            REQUIRE(r.depth.valid[r.points.index(row, c)]);
            CHECK(r.depth.depth[r.points.index(row, c)] == doctest::Approx(2.0).epsilon(1e-12));
            Vec3 n = r.normals.normal(row, c);
            CHECK(n[0] == doctest::Approx(0.0));
            CHECK(n[1] == doctest::Approx(0.0));
            CHECK(n[2] == doctest::Approx(-1.0));
        }
    }
}

TEST_CASE("unprojecting the depth reproduces the point map") {
    auto s = make_scene_sample(small_spec(13));
    const auto& k = s.intrinsics;
    for (std::size_t f = 0; f < s.points.size(); ++f) {
        for (int r = 0; r < s.spec.height; ++r) {
            for (int c = 0; c < s.spec.width; ++c) {
                if (!s.points[f].is_valid(r, c)) continue;
                double z = s.depths[f].depth[s.points[f].index(r, c)];
                Vec3 expect{(c + 0.5 - k.cx) / k.fx * z, (r + 0.5 - k.cy) / k.fy * z, z};
                Vec3 got = s.points[f].point(r, c);
                for (int a = 0; a < 3; ++a) CHECK(std::fabs(got[a] - expect[a]) < 1e-12);
            }
        }
    }
}

TEST_CASE("ground-truth point maps satisfy the type invariants") {
    auto s = make_scene_sample(small_spec(17));
    for (const auto& pm : s.points) CHECK_NOTHROW(pm.validate_ground_truth());
}

TEST_CASE("sphere silhouette area matches the analytic projected disk") {
    SceneGeometry g;
    g.room_lo = {-50, -50, -50};
    g.room_hi = {50, 50, 50};  // walls far behind the sphere
    Sphere s;
    s.center = {0, 0, 3.0};
    s.radius = 1.1;
    s.albedo = {0.5, 0.5, 0.5};
    g.spheres.push_back(s);
    Intrinsics k;
    k.width = 192;
    k.height = 192;
    k.fx = k.fy = 110.0;
    k.cx = 96;
    k.cy = 96;
    Pose pose;
    pose.translation = {0, 0, 0};
    auto r = render(g, pose, k);
    std::int64_t sphere_pixels = 0;
    for (int id : r.prim_id) sphere_pixels += id == 1 ? 1 : 0;
    double d = norm(s.center);
    double proj_radius = k.fx * s.radius / std::sqrt(d * d - s.radius * s.radius);
    double analytic = kPi * proj_radius * proj_radius;
    CHECK(std::fabs(static_cast<double>(sphere_pixels) - analytic) / analytic < 0.02);
}

TEST_CASE("four-quadrant normals agree with analytic normals on plane interiors") {
    auto s = make_scene_sample(small_spec(23));
    for (std::size_t f = 0; f < s.points.size(); ++f) {
        auto est = pointmap_normals(s.points[f]);
        for (int r = 1; r + 1 < s.spec.height; ++r) {
            for (int c = 1; c + 1 < s.spec.width; ++c) {
                // Interior of a planar face: the pixel and its 8-neighborhood
                // hit the same wall/box primitive.
                int id = s.depths[f].valid[est.index(r, c)]
                             ? 0
                             : -2;  // placeholder; prim ids not stored in samples
                (void)id;
                if (!est.is_valid(r, c) || !s.normals[f].is_valid(r, c)) continue;
                Vec3 a = est.normal(r, c);
                Vec3 b = s.normals[f].normal(r, c);
                double cosang = std::min(1.0, std::max(-1.0, dot(a, b)));
                double deg = std::acos(cosang) * 180.0 / kPi;
                // Curved sphere pixels and depth-discontinuity pixels may
                // disagree; planar interiors must agree within 2 degrees. We
                // check the 90th percentile style bound by skipping pixels
                // where the neighborhood depth is discontinuous.
                bool smooth = true;
                double z0 = s.depths[f].depth[est.index(r, c)];
                for (int dr = -1; dr <= 1 && smooth; ++dr) {
                    for (int dc = -1; dc <= 1 && smooth; ++dc) {
                        std::size_t i = est.index(r + dr, c + dc);
                        smooth = s.depths[f].valid[i] != 0 &&
                                 std::fabs(s.depths[f].depth[i] - z0) < 0.25;
                    }
                }
                bool curved = false;
                // Sphere surfaces curve; allow a looser bound there by
                // detecting non-planar neighborhoods via the normal spread.
                Vec3 n0 = s.normals[f].normal(r, c);
                for (int dr = -1; dr <= 1 && !curved; ++dr) {
                    for (int dc = -1; dc <= 1 && !curved; ++dc) {
                        if (!s.normals[f].is_valid(r + dr, c + dc)) continue;
                        Vec3 nn = s.normals[f].normal(r + dr, c + dc);
                        if (dot(n0, nn) < 1.0 - 1e-9) curved = true;
                    }
                }
                if (smooth && !curved) CHECK(deg < 2.0);
            }
        }
    }
}

TEST_CASE("cross-view consistency on plane-only scenes") {
    SceneSpec spec = small_spec(29);
    spec.object_count = 0;  // room planes only
    auto s = make_scene_sample(spec);
    const auto& k = s.intrinsics;
    int checked = 0;
    for (int f = 0; f < spec.frames; ++f) {
      for (int gidx = 0; gidx < spec.frames; ++gidx) {
        if (f == gidx) continue;
        Pose rel = relative_pose(s.poses[static_cast<std::size_t>(gidx)],
                                 s.poses[static_cast<std::size_t>(f)]);
        for (int r = 0; r < spec.height; r += 2) {
            for (int c = 0; c < spec.width; c += 2) {
                if (!s.points[static_cast<std::size_t>(f)].is_valid(r, c)) continue;
                Vec3 p = s.points[static_cast<std::size_t>(f)].point(r, c);
                Vec3 q = rel.apply(p);  // into camera gidx's frame
                if (q[2] <= 1e-6) continue;
                double u = k.fx * q[0] / q[2] + k.cx - 0.5;
                double v = k.fy * q[1] / q[2] + k.cy - 0.5;
                int cc = static_cast<int>(std::lround(u));
                int rr = static_cast<int>(std::lround(v));
                if (rr < 0 || rr >= spec.height || cc < 0 || cc >= spec.width) continue;
                const auto& other = s.points[static_cast<std::size_t>(gidx)];
                if (!other.is_valid(rr, cc)) continue;
                double zbuf = other.point(rr, cc)[2];
                if (q[2] > zbuf + 0.05) continue;  // occluded in the other view
                // The looked-up point must be within a pixel's footprint of q.
                Vec3 found = other.point(rr, cc);
                double pix_size = q[2] / k.fx;
                CHECK(norm(found - q) < 2.0 * pix_size + 1e-9);
                ++checked;
            }
        }
      }
    }
    CHECK(checked > 50);
}

TEST_CASE("dataset round-trip is byte-exact with random access and checksums") {
    auto dir = temp_dir("dataset");
    std::vector<SceneSample> scenes;
    for (std::uint64_t i = 0; i < 3; ++i) {
        SceneSpec s = small_spec(100 + i);
        s.frames = 2 + static_cast<int>(i);
        scenes.push_back(make_scene_sample(s));
    }
    auto manifest = save_dataset(scenes, dir.string(), 42);
    CHECK(manifest.scenes.size() == 3);

    // save -> load -> save produces identical bytes.
    auto loaded = load_dataset(dir.string());
    auto dir2 = temp_dir("dataset2");
    save_dataset(loaded, dir2.string(), 42);
    auto read_file = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    CHECK(read_file(dir / "scenes.bin") == read_file(dir2 / "scenes.bin"));
    CHECK(read_file(dir / "manifest.json") == read_file(dir2 / "manifest.json"));

    // Random access by offset.
    auto one = load_scene(dir.string(), manifest, 2);
    CHECK(one.spec.frames == 4);
    CHECK(one.points.size() == 4);

    // Truncation is caught by the checksum and names the scene.
    auto bytes = read_file(dir / "scenes.bin");
    std::ofstream out(dir / "scenes.bin", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    out.close();
    try {
        load_scene(dir.string(), manifest, 2);
        FAIL("expected checksum or truncation error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("scene 2") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("pseudo captions are deterministic and spec-dependent") {
    SceneSpec a = small_spec(5);
    auto t1 = pseudo_caption(a, 32, 64);
    auto t2 = pseudo_caption(a, 32, 64);
    CHECK(t1 == t2);
    SceneSpec b = a;
    b.seed = 6;
    CHECK(pseudo_caption(b, 32, 64) != t1);
    for (int tok : t1) {
        CHECK(tok >= 0);
        CHECK(tok < 64);
    }
}

TEST_CASE("invalid specs are rejected") {
    SceneSpec s = small_spec(1);
    s.frames = 30;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.frames = 1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s = small_spec(1);
    s.room_extents = {0, 1, 1};
    CHECK_THROWS_AS(s.validate(), ValidationError);
}
