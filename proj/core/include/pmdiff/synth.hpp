#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pmdiff/geometry.hpp"
#include "pmdiff/image.hpp"
#include "pmdiff/pair.hpp"

namespace pmdiff {

// World frame follows the camera convention: x right, y down, z forward.
// The ground is the plane y = 0, so objects above it have negative y.

enum class PrimitiveKind { Plane, Sphere, Box };

struct Material {
    Vec3 color_a{0.5, 0.5, 0.5};
    Vec3 color_b{0.5, 0.5, 0.5};
    double checker = 0.0;  // cell size in metres; 0 means solid color_a
};

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Sphere;
    Vec3 a = Vec3::Zero();  // plane: point on plane; sphere: centre; box: min corner
    Vec3 b = Vec3::Zero();  // plane: unit normal; box: max corner
    double radius = 1.0;    // sphere only
    Material material;
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    Vec3 sky{0.55, 0.7, 0.9};
    std::uint64_t seed = 0;

    void validate() const;
};

struct Hit {
    double t = 0.0;  // ray parameter along the (unnormalized) direction
    int primitive = -1;
    Vec3 point = Vec3::Zero();
};

std::optional<Hit> raycast(const SceneSpec& scene, const Vec3& origin, const Vec3& direction, double t_min = 1e-9);
Vec3 albedo(const Primitive& prim, const Vec3& point);

struct RenderResult {
    Image rgb;
    DepthMap depth;
    std::vector<int> primitive_id;  // -1 for background
};

/// Unshaded raycast: per pixel the nearest hit's albedo, metric depth (camera
/// z) and primitive index; background pixels get the sky color and no depth.
RenderResult render(const SceneSpec& scene, const CameraView& view);

// ---------------------------------------------------------------------------
// Trajectories

enum class AugmentKind { None, Rotate, Lateral, Elevate };

struct Augmentation {
    AugmentKind kind = AugmentKind::None;
    double magnitude = 0.0;     // rotate: yaw degrees (+ = right); lateral: metres (+ = right); elevate: metres up
    double pitch_degrees = 10;  // elevate only: downward pitch

    static Augmentation parse(const std::string& kind, double magnitude);
};

/// The extrapolation offsets used for evaluation: yaw +-45 deg, lateral
/// +-2 / +-4 m, and 1 m up with 10 deg downward pitch.
std::vector<Augmentation> evaluation_augmentations();

struct TrajectorySpec {
    Intrinsics intrinsics;
    Vec3 start{0.0, -1.5, 0.0};
    double heading = 0.0;  // yaw in radians about +y
    double step = 1.0;     // metres between frames along the heading
    std::size_t frames = 1;
    Augmentation augmentation;
};

/// Applies a camera-local offset to a pose.
Pose augment_pose(const Pose& pose, const Augmentation& aug);

std::vector<CameraView> make_trajectory(const TrajectorySpec& spec);

// ---------------------------------------------------------------------------
// LiDAR

struct LidarPattern {
    std::size_t azimuth_count = 64;
    std::size_t elevation_count = 16;
    double azimuth_min = -3.141592653589793;  // radians; 0 = sensor forward, + = right
    double azimuth_max = 3.141592653589793;
    double elevation_min = -0.4363323129985824;  // -25 deg
    double elevation_max = 0.08726646259971647;  // +5 deg
    double max_range = 80.0;

    void validate() const;
    Vec3 direction(std::size_t az, std::size_t el) const;  // unit, sensor frame
};

/// One ray per grid cell from the sensor origin; hits become world points.
LidarScan simulate_lidar(const SceneSpec& scene, const Pose& sensor_pose, const LidarPattern& pattern = {});

// ---------------------------------------------------------------------------
// Crop augmentation

struct CropWindow {
    std::size_t x0 = 0;
    std::size_t y0 = 0;
    std::size_t width = 0;
    std::size_t height = 0;
};

/// Two crops of one image treated as a reference/target pair: intrinsics are
/// shifted by each crop offset and the relative pose is the identity.
ScenePair crop_pair(const Image& rgb, const DepthMap& depth, const CameraView& view, const CropWindow& reference,
                    const CropWindow& target);

ScenePair random_crop_pair(const Image& rgb, const DepthMap& depth, const CameraView& view, std::size_t crop_width,
                           std::size_t crop_height, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Procedural street scenes

struct SceneGenConfig {
    std::size_t min_objects = 3;
    std::size_t max_objects = 6;
    double road_half_width = 4.0;
    double depth_min = 4.0;
    double depth_max = 24.0;
    bool buildings = true;
    double checker_probability = 0.35;
};

SceneSpec random_scene(std::uint64_t seed, const SceneGenConfig& cfg = {});

}  // namespace pmdiff
