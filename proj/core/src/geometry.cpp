#include "pmdiff/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace pmdiff {

void Intrinsics::validate(bool require_centered) const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw GeometryError("intrinsics: focal lengths must be positive");
    if (width == 0 || height == 0) throw GeometryError("intrinsics: empty image size");
    if (!std::isfinite(cx) || !std::isfinite(cy)) throw GeometryError("intrinsics: non-finite principal point");
    if (require_centered &&
        (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))))
        throw GeometryError("intrinsics: principal point outside the image");
}

Mat3 Intrinsics::matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

// ---------------------------------------------------------------------------

Rigid::Rigid(const Mat4& m) : m_(m) {
    const Mat3 r = rotation();
    if (!m_.allFinite()) throw GeometryError("rigid transform: non-finite entries");
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > kTolerance ||
        std::abs(r.determinant() - 1.0) > kTolerance)
        throw GeometryError("rigid transform: rotation block is not orthonormal with det +1");
    if (std::abs(m_(3, 0)) > kTolerance || std::abs(m_(3, 1)) > kTolerance || std::abs(m_(3, 2)) > kTolerance ||
        std::abs(m_(3, 3) - 1.0) > kTolerance)
        throw GeometryError("rigid transform: last row must be (0,0,0,1)");
}

Rigid Rigid::from_rt(const Mat3& r, const Vec3& t) {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return Rigid(m);
}

Rigid Rigid::from_row_major(std::span<const double, 16> values) {
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) m(r, c) = values[static_cast<std::size_t>(r * 4 + c)];
    }
    return Rigid(m);
}

Rigid Rigid::rotation_x(double a) {
    Mat3 r;
    r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return from_rt(r, Vec3::Zero());
}

Rigid Rigid::rotation_y(double a) {
    Mat3 r;
    r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return from_rt(r, Vec3::Zero());
}

Rigid Rigid::rotation_z(double a) {
    Mat3 r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return from_rt(r, Vec3::Zero());
}

std::array<double, 16> Rigid::row_major() const {
    std::array<double, 16> out{};
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) out[static_cast<std::size_t>(r * 4 + c)] = m_(r, c);
    }
    return out;
}

Rigid Rigid::inverse() const {
    const Mat3 rt = rotation().transpose();
    return from_rt(rt, -rt * translation());
}

Rigid Rigid::operator*(const Rigid& rhs) const {
    Rigid out;
    out.m_ = m_ * rhs.m_;
    out.m_.row(3) << 0.0, 0.0, 0.0, 1.0;
    return out;
}

// ---------------------------------------------------------------------------

void DepthMap::set(std::size_t i, std::size_t j, double d) {
    const std::size_t idx = j * width + i;
    if (std::isfinite(d) && d > 0.0) {
        depth[idx] = d;
        valid[idx] = 1;
    } else {
        depth[idx] = 0.0;
        valid[idx] = 0;
    }
}

std::size_t DepthMap::valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
}

void PointMap::set(std::size_t idx, const Vec3& p) {
    xyz[3 * idx] = p.x();
    xyz[3 * idx + 1] = p.y();
    xyz[3 * idx + 2] = p.z();
    valid[idx] = 1;
}

void PointMap::clear(std::size_t idx) {
    xyz[3 * idx] = xyz[3 * idx + 1] = xyz[3 * idx + 2] = 0.0;
    valid[idx] = 0;
}

std::size_t PointMap::valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
}

Mask PointMap::mask() const {
    Mask m(width, height);
    m.data = valid;
    return m;
}

void Bbox3::validate() const {
    if (!(half_extents.array() > 0.0).all()) throw GeometryError("bbox: half extents must be positive");
}

bool Bbox3::contains(const Vec3& world) const {
    const Vec3 d = world - center;
    // undo the box yaw about +y
    const double c = std::cos(yaw), s = std::sin(yaw);
    const Vec3 local(c * d.x() - s * d.z(), d.y(), s * d.x() + c * d.z());
    return std::abs(local.x()) <= half_extents.x() && std::abs(local.y()) <= half_extents.y() &&
           std::abs(local.z()) <= half_extents.z();
}

// ---------------------------------------------------------------------------

PointMap pointmap_from_depth(const Intrinsics& k, const DepthMap& depth, int frame) {
    k.validate(false);
    if (depth.width != k.width || depth.height != k.height)
        throw SizeMismatchError("pointmap_from_depth: depth " + std::to_string(depth.width) + "x" +
                                std::to_string(depth.height) + " vs intrinsics " + std::to_string(k.width) + "x" +
                                std::to_string(k.height));
    PointMap out(k.width, k.height, frame);
    for (std::size_t j = 0; j < k.height; ++j) {
        for (std::size_t i = 0; i < k.width; ++i) {
            if (!depth.is_valid(i, j)) continue;
            const double d = depth.at(i, j);
            const double x = (static_cast<double>(i) - k.cx) / k.fx;
            const double y = (static_cast<double>(j) - k.cy) / k.fy;
            out.set(j * k.width + i, Vec3(x * d, y * d, d));
        }
    }
    return out;
}

PointMap transform_pointmap(const PointMap& map, const Rigid& transform, int from_frame, int to_frame) {
    if (map.frame != from_frame)
        throw GeometryError("transform_pointmap: map is in frame " + std::to_string(map.frame) + ", expected " +
                            std::to_string(from_frame));
    PointMap out = map;
    out.frame = to_frame;
    const Mat3 r = transform.rotation();
    const Vec3 t = transform.translation();
    for (std::size_t idx = 0; idx < map.size(); ++idx) {
        if (map.is_valid(idx)) out.set(idx, r * map.point(idx) + t);
    }
    return out;
}

Rigid relative_pose(const Pose& pose_n, const Pose& pose_m) {
    // Re-validate: both inputs may have been built from raw matrices upstream.
    Rigid(pose_n.matrix());
    Rigid(pose_m.matrix());
    return pose_m.inverse() * pose_n;
}

Projection project_camera_point(const Vec3& cam, const Intrinsics& k, double z_near) {
    Projection p;
    p.depth = cam.z();
    if (!(cam.z() > z_near) || !cam.allFinite()) return p;
    p.in_front = true;
    p.u = k.fx * cam.x() / cam.z() + k.cx;
    p.v = k.fy * cam.y() / cam.z() + k.cy;
    const double ru = std::floor(p.u + 0.5), rv = std::floor(p.v + 0.5);
    if (ru >= 0.0 && rv >= 0.0 && ru < static_cast<double>(k.width) && rv < static_cast<double>(k.height)) {
        p.in_bounds = true;
        p.px = static_cast<std::size_t>(ru);
        p.py = static_cast<std::size_t>(rv);
    }
    return p;
}

std::vector<Projection> project_points(std::span<const Vec3> world, const CameraView& view, double z_near) {
    const Rigid to_cam = view.pose.inverse();
    std::vector<Projection> out;
    out.reserve(world.size());
    for (const auto& w : world) out.push_back(project_camera_point(to_cam.apply(w), view.intrinsics, z_near));
    return out;
}

PointMap lidar_to_sparse_pointmap(const LidarScan& scan, const CameraView& view, int frame, double z_near) {
    const auto& k = view.intrinsics;
    PointMap out(k.width, k.height, frame);
    std::vector<double> zbuf(out.size(), std::numeric_limits<double>::infinity());
    const Rigid to_cam = view.pose.inverse();
    for (const auto& w : scan.points) {
        const Vec3 cam = to_cam.apply(w);
        const Projection p = project_camera_point(cam, k, z_near);
        if (!p.in_bounds) continue;
        const std::size_t idx = p.py * k.width + p.px;
        if (cam.z() < zbuf[idx]) {
            zbuf[idx] = cam.z();
            out.set(idx, cam);
        }
    }
    return out;
}

EditResult edit_pointmap(const PointMap& map, const CameraView& view, const Bbox3& box, const Rigid& transform,
                         EditMode mode, double z_near) {
    box.validate();
    const auto& k = view.intrinsics;
    if (map.width != k.width || map.height != k.height) throw SizeMismatchError("edit_pointmap: map/view size");
    EditResult res;
    res.map = map;
    std::vector<std::size_t> selected;
    for (std::size_t idx = 0; idx < map.size(); ++idx) {
        if (map.is_valid(idx) && box.contains(view.pose.apply(map.point(idx)))) selected.push_back(idx);
    }
    res.selected = selected.size();
    if (selected.empty()) {
        res.warnings.push_back("edit_pointmap: box selects no points; map returned unchanged");
        return res;
    }
    if (mode == EditMode::Translate) {
        for (auto idx : selected) res.map.clear(idx);
    }
    // Depth currently occupying each pixel; stored values are camera-frame
    // positions for untouched pixels.
    std::vector<double> zbuf(map.size(), std::numeric_limits<double>::infinity());
    for (std::size_t idx = 0; idx < map.size(); ++idx) {
        if (res.map.is_valid(idx)) zbuf[idx] = res.map.point(idx).z();
    }
    const Rigid cam_to_cam = view.pose.inverse() * transform * view.pose;
    for (auto idx : selected) {
        const Vec3 original = map.point(idx);
        const Vec3 moved = cam_to_cam.apply(original);
        const Projection p = project_camera_point(moved, k, z_near);
        if (!p.in_bounds) continue;
        const std::size_t dst = p.py * k.width + p.px;
        if (moved.z() < zbuf[dst]) {
            zbuf[dst] = moved.z();
            res.map.set(dst, original);
        }
    }
    return res;
}

}  // namespace pmdiff
