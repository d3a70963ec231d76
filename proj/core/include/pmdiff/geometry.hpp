#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmdiff/image.hpp"

namespace pmdiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

class GeometryError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Camera frame: x right, y down, z forward. Pixel (i, j) = (column, row) and
// rays pass through integer pixel coordinates (no half-pixel offset).

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::size_t width = 1;
    std::size_t height = 1;

    /// Crop windows can leave the principal point outside the image; pass
    /// require_centered = false to accept those.
    void validate(bool require_centered = true) const;
    Mat3 matrix() const;
};

/// Homogeneous rigid transform. As a camera pose it maps camera coordinates
/// to world coordinates.
class Rigid {
   public:
    Rigid() : m_(Mat4::Identity()) {}
    explicit Rigid(const Mat4& m);  // validates

    static Rigid identity() { return Rigid(); }
    static Rigid from_rt(const Mat3& r, const Vec3& t);
    static Rigid from_row_major(std::span<const double, 16> values);
    static Rigid translation(const Vec3& t) { return from_rt(Mat3::Identity(), t); }
    static Rigid rotation_x(double radians);
    static Rigid rotation_y(double radians);
    static Rigid rotation_z(double radians);

    const Mat4& matrix() const { return m_; }
    Mat3 rotation() const { return m_.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return m_.topRightCorner<3, 1>(); }
    std::array<double, 16> row_major() const;

    Rigid inverse() const;
    Rigid operator*(const Rigid& rhs) const;
    Vec3 apply(const Vec3& p) const { return rotation() * p + translation(); }

    static constexpr double kTolerance = 1e-9;

   private:
    Mat4 m_;
};

using Pose = Rigid;

struct CameraView {
    Intrinsics intrinsics;
    Pose pose;  // camera-to-world
};

struct DepthMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> depth;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(std::size_t w, std::size_t h) : width(w), height(h), depth(w * h, 0.0), valid(w * h, 0) {}
    bool is_valid(std::size_t i, std::size_t j) const { return valid[j * width + i] != 0; }
    double at(std::size_t i, std::size_t j) const { return depth[j * width + i]; }
    void set(std::size_t i, std::size_t j, double d);
    std::size_t valid_count() const;
};

/// Per-pixel 3-D coordinates in the camera frame named by `frame`.
/// Invalid pixels hold exactly (0,0,0).
struct PointMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> xyz;  // interleaved, 3 per pixel
    std::vector<std::uint8_t> valid;
    int frame = 0;

    PointMap() = default;
    PointMap(std::size_t w, std::size_t h, int frame_tag)
        : width(w), height(h), xyz(3 * w * h, 0.0), valid(w * h, 0), frame(frame_tag) {}

    std::size_t size() const { return width * height; }
    bool is_valid(std::size_t idx) const { return valid[idx] != 0; }
    Vec3 point(std::size_t idx) const { return {xyz[3 * idx], xyz[3 * idx + 1], xyz[3 * idx + 2]}; }
    void set(std::size_t idx, const Vec3& p);
    void clear(std::size_t idx);
    std::size_t valid_count() const;
    Mask mask() const;
};

struct LidarScan {
    std::vector<Vec3> points;        // world frame
    std::vector<double> intensity;   // empty or one per point
};

struct Bbox3 {
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Ones();
    double yaw = 0.0;  // about the world y axis

    void validate() const;
    bool contains(const Vec3& world) const;
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    bool in_front = false;
    bool in_bounds = false;  // in front and the nearest pixel lies inside the image
    std::size_t px = 0;      // nearest pixel, valid when in_bounds
    std::size_t py = 0;
};

inline constexpr double kDefaultZNear = 1e-3;

/// X = K^-1 [i, j, 1]^T * D(i, j) for every valid pixel.
PointMap pointmap_from_depth(const Intrinsics& k, const DepthMap& depth, int frame = 0);

/// Maps every valid point through `transform`. Throws GeometryError if the
/// map is not expressed in `from_frame`.
PointMap transform_pointmap(const PointMap& map, const Rigid& transform, int from_frame, int to_frame);

/// P_{n->m} = pose_m^-1 * pose_n : camera-n coordinates to camera-m coordinates.
Rigid relative_pose(const Pose& pose_n, const Pose& pose_m);

/// Projects camera-frame points with the pinhole model.
Projection project_camera_point(const Vec3& cam, const Intrinsics& k, double z_near = kDefaultZNear);

std::vector<Projection> project_points(std::span<const Vec3> world, const CameraView& view,
                                       double z_near = kDefaultZNear);

/// Z-buffered splat of a scan into the view; nearest point per pixel wins and
/// the pixel stores that point's camera-frame coordinates.
PointMap lidar_to_sparse_pointmap(const LidarScan& scan, const CameraView& view, int frame = 0,
                                  double z_near = kDefaultZNear);

enum class EditMode { Translate, Duplicate };

struct EditResult {
    PointMap map;
    std::size_t selected = 0;
    std::vector<std::string> warnings;
};

/// Moves (or copies) the points whose world position lies in `box` by the
/// world-frame `transform`, re-rasterizing them in `view` while keeping their
/// original stored coordinates. `map` must be expressed in `view`'s camera frame.
EditResult edit_pointmap(const PointMap& map, const CameraView& view, const Bbox3& box, const Rigid& transform,
                         EditMode mode, double z_near = kDefaultZNear);

}  // namespace pmdiff
