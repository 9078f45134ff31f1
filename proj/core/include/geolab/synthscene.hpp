#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geolab/geometry.hpp"
#include "geolab/losses.hpp"
#include "geolab/rng.hpp"

namespace geolab::synth {

enum class Trajectory { Orbit, Line, RandomWalk };

const char* trajectory_name(Trajectory t);
Trajectory trajectory_from_name(const std::string& name);

struct SceneSpec {
    std::uint64_t seed = 0;
    geom::Vec3 room_extents = {4.0, 2.8, 4.0};  // x, y (up), z in scene units
    int object_count = 4;
    double sphere_fraction = 0.5;
    Trajectory trajectory = Trajectory::Orbit;
    int frames = 4;   // 2..24
    int height = 32;
    int width = 32;

    void validate() const;
};

struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
};

struct Sphere {
    geom::Vec3 center;
    double radius;
    geom::Vec3 albedo;
};

struct AxisBox {
    geom::Vec3 lo, hi;
    geom::Vec3 albedo;
};

// The room is an axis-aligned box seen from inside; the ceiling face is open,
// so upward rays escape and produce invalid pixels.
struct SceneGeometry {
    geom::Vec3 room_lo, room_hi;
    std::vector<AxisBox> boxes;
    std::vector<Sphere> spheres;
    geom::Vec3 wall_albedo{0.78, 0.78, 0.82};
    geom::Vec3 floor_albedo{0.55, 0.6, 0.55};
    geom::Vec3 light_dir{0, -1, 0};  // world frame, unit
};

struct GeneratedScene {
    SceneGeometry geometry;
    std::vector<geom::Pose> poses;  // camera-to-world
    Intrinsics intrinsics;
};

struct RenderResult {
    geom::DepthMap depth;
    geom::PointMap points;    // camera frame
    geom::NormalMap normals;  // camera frame, negative-z oriented
    std::vector<double> image;  // h*w*3 in [0,1]
    std::vector<int> prim_id;   // -1 miss, 0 room, 1.. objects
    double hit_ratio = 0.0;
};

// Deterministic scene construction; cameras are re-sampled (up to a retry
// limit) until every frame sees geometry on at least 30% of its pixels.
GeneratedScene generate_scene(const SceneSpec& spec);

// Exact ray-primitive intersection per pixel. Point map is the depth-scaled
// pixel ray; normals are analytic; the image is Lambertian-shaded albedo.
RenderResult render(const SceneGeometry& scene, const geom::Pose& pose, const Intrinsics& k);

struct SceneSample {
    SceneSpec spec;
    Intrinsics intrinsics;
    std::vector<std::vector<double>> images;  // per frame, h*w*3
    std::vector<geom::PointMap> points;
    std::vector<geom::DepthMap> depths;
    std::vector<geom::NormalMap> normals;
    std::vector<geom::Pose> poses;

    losses::VgGroundTruth ground_truth() const;
};

SceneSample make_scene_sample(const SceneSpec& spec);

// Deterministic pseudo-caption: `count` tokens in [0, vocab) derived from the
// scene parameters. Stands in for language supervision in the joint stage.
std::vector<int> pseudo_caption(const SceneSpec& spec, int count, int vocab);

struct SceneEntry {
    SceneSpec spec;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    std::string checksum;  // fnv1a64, hex
};

struct DatasetManifest {
    int format_version = 1;
    std::uint64_t global_seed = 0;
    std::vector<SceneEntry> scenes;
};

// Layout: <dir>/manifest.json + <dir>/scenes.bin (concatenated tensor blobs,
// random access by manifest offset). Round-trips are byte-exact; checksums are
// verified on load.
DatasetManifest save_dataset(const std::vector<SceneSample>& scenes, const std::string& dir,
                             std::uint64_t global_seed);
DatasetManifest read_manifest(const std::string& dir);
SceneSample load_scene(const std::string& dir, const DatasetManifest& manifest, int index);
std::vector<SceneSample> load_dataset(const std::string& dir);

}  // namespace geolab::synth
