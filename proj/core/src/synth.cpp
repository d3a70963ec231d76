#include "pmdiff/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace pmdiff {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool color_ok(const Vec3& c) { return c.allFinite() && (c.array() >= 0.0).all() && (c.array() <= 1.0).all(); }

std::optional<double> intersect_plane(const Primitive& p, const Vec3& o, const Vec3& d, double t_min) {
    const double denom = p.b.dot(d);
    if (std::abs(denom) < 1e-15) return std::nullopt;
    const double t = p.b.dot(p.a - o) / denom;
    if (!(t > t_min)) return std::nullopt;
    return t;
}

std::optional<double> intersect_sphere(const Primitive& p, const Vec3& o, const Vec3& d, double t_min) {
    const Vec3 oc = o - p.a;
    const double a = d.squaredNorm();
    const double half_b = oc.dot(d);
    const double c = oc.squaredNorm() - p.radius * p.radius;
    const double disc = half_b * half_b - a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double t0 = (-half_b - sq) / a;
    if (t0 > t_min) return t0;
    const double t1 = (-half_b + sq) / a;
    if (t1 > t_min) return t1;
    return std::nullopt;
}

std::optional<double> intersect_box(const Primitive& p, const Vec3& o, const Vec3& d, double t_min) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-15) {
            if (o[k] < p.a[k] || o[k] > p.b[k]) return std::nullopt;
            continue;
        }
        double t0 = (p.a[k] - o[k]) / d[k];
        double t1 = (p.b[k] - o[k]) / d[k];
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
        if (t_near > t_far) return std::nullopt;
    }
    if (t_near > t_min) return t_near;
    if (t_far > t_min) return t_far;
    return std::nullopt;
}

int checker_parity(double u, double v, double cell) {
    const auto iu = static_cast<long long>(std::floor(u / cell));
    const auto iv = static_cast<long long>(std::floor(v / cell));
    return static_cast<int>(((iu + iv) % 2 + 2) % 2);
}

}  // namespace

void SceneSpec::validate() const {
    if (primitives.empty()) throw std::invalid_argument("scene: at least one primitive required");
    if (!color_ok(sky)) throw std::invalid_argument("scene: sky color outside [0,1]");
    for (std::size_t k = 0; k < primitives.size(); ++k) {
        const auto& p = primitives[k];
        const std::string where = "scene: primitive " + std::to_string(k);
        if (!color_ok(p.material.color_a) || !color_ok(p.material.color_b))
            throw std::invalid_argument(where + " color outside [0,1]");
        if (p.material.checker < 0.0) throw std::invalid_argument(where + " negative checker size");
        switch (p.kind) {
            case PrimitiveKind::Plane:
                if (std::abs(p.b.norm() - 1.0) > 1e-9) throw std::invalid_argument(where + " plane normal not unit");
                break;
            case PrimitiveKind::Sphere:
                if (!(p.radius > 0.0)) throw std::invalid_argument(where + " sphere radius must be positive");
                break;
            case PrimitiveKind::Box:
                if (!(p.a.array() < p.b.array()).all()) throw std::invalid_argument(where + " box min must be < max");
                break;
        }
    }
}

std::optional<Hit> raycast(const SceneSpec& scene, const Vec3& origin, const Vec3& direction, double t_min) {
    std::optional<Hit> best;
    for (std::size_t k = 0; k < scene.primitives.size(); ++k) {
        const auto& p = scene.primitives[k];
        std::optional<double> t;
        switch (p.kind) {
            case PrimitiveKind::Plane: t = intersect_plane(p, origin, direction, t_min); break;
            case PrimitiveKind::Sphere: t = intersect_sphere(p, origin, direction, t_min); break;
            case PrimitiveKind::Box: t = intersect_box(p, origin, direction, t_min); break;
        }
        if (t && (!best || *t < best->t)) best = Hit{*t, static_cast<int>(k), origin + *t * direction};
    }
    return best;
}

Vec3 albedo(const Primitive& prim, const Vec3& point) {
    const auto& m = prim.material;
    if (m.checker <= 0.0) return m.color_a;
    int parity = 0;
    switch (prim.kind) {
        case PrimitiveKind::Plane: {
            // in-plane coordinates so points exactly on the plane never straddle a cell
            const Vec3 helper = std::abs(prim.b.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
            const Vec3 u = prim.b.cross(helper).normalized();
            const Vec3 v = prim.b.cross(u);
            const Vec3 rel = point - prim.a;
            parity = checker_parity(rel.dot(u), rel.dot(v), m.checker);
            break;
        }
        case PrimitiveKind::Sphere: {
            const Vec3 n = (point - prim.a).normalized();
            const double lon = std::atan2(n.x(), n.z()) * prim.radius;
            const double lat = std::asin(std::clamp(n.y(), -1.0, 1.0)) * prim.radius;
            parity = checker_parity(lon, lat, m.checker);
            break;
        }
        case PrimitiveKind::Box: {
            // drop the axis of the face the point sits on
            int axis = 0;
            double gap = std::numeric_limits<double>::infinity();
            for (int k = 0; k < 3; ++k) {
                const double g = std::min(std::abs(point[k] - prim.a[k]), std::abs(point[k] - prim.b[k]));
                if (g < gap) {
                    gap = g;
                    axis = k;
                }
            }
            const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
            parity = checker_parity(point[ua] - prim.a[ua], point[va] - prim.a[va], m.checker);
            break;
        }
    }
    return parity == 0 ? m.color_a : m.color_b;
}

RenderResult render(const SceneSpec& scene, const CameraView& view) {
    scene.validate();
    const auto& k = view.intrinsics;
    k.validate(false);
    RenderResult out;
    out.rgb = Image(k.width, k.height, 3);
    out.depth = DepthMap(k.width, k.height);
    out.primitive_id.assign(k.width * k.height, -1);
    const Mat3 r = view.pose.rotation();
    const Vec3 origin = view.pose.translation();
    for (std::size_t j = 0; j < k.height; ++j) {
        for (std::size_t i = 0; i < k.width; ++i) {
            // camera-frame direction has unit z, so the hit parameter is the depth
            const Vec3 local((static_cast<double>(i) - k.cx) / k.fx, (static_cast<double>(j) - k.cy) / k.fy, 1.0);
            const auto hit = raycast(scene, origin, r * local);
            Vec3 color = scene.sky;
            if (hit) {
                color = albedo(scene.primitives[static_cast<std::size_t>(hit->primitive)], hit->point);
                out.depth.set(i, j, hit->t);
                out.primitive_id[j * k.width + i] = hit->primitive;
            }
            for (int c = 0; c < 3; ++c) out.rgb.at(i, j, static_cast<std::size_t>(c)) = color[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

Augmentation Augmentation::parse(const std::string& kind, double magnitude) {
    Augmentation a;
    a.magnitude = magnitude;
    if (kind == "none") a.kind = AugmentKind::None;
    else if (kind == "rotate") a.kind = AugmentKind::Rotate;
    else if (kind == "lateral") a.kind = AugmentKind::Lateral;
    else if (kind == "elevate") a.kind = AugmentKind::Elevate;
    else throw std::invalid_argument("unsupported augmentation kind '" + kind + "' (none|rotate|lateral|elevate)");
    return a;
}

std::vector<Augmentation> evaluation_augmentations() {
    return {
        {AugmentKind::Rotate, 45.0, 10.0},   {AugmentKind::Rotate, -45.0, 10.0}, {AugmentKind::Lateral, 2.0, 10.0},
        {AugmentKind::Lateral, -2.0, 10.0},  {AugmentKind::Lateral, 4.0, 10.0},  {AugmentKind::Lateral, -4.0, 10.0},
        {AugmentKind::Elevate, 1.0, 10.0},
    };
}

Pose augment_pose(const Pose& pose, const Augmentation& aug) {
    if (!std::isfinite(aug.magnitude) || !std::isfinite(aug.pitch_degrees))
        throw std::invalid_argument("augment_pose: non-finite magnitude");
    switch (aug.kind) {
        case AugmentKind::None: return pose;
        case AugmentKind::Rotate: return pose * Rigid::rotation_y(aug.magnitude * kDegToRad);
        case AugmentKind::Lateral: return pose * Rigid::translation(Vec3(aug.magnitude, 0.0, 0.0));
        case AugmentKind::Elevate:
            // y is down, so "up" is -y; a downward pitch tilts +z towards +y
            return pose * Rigid::translation(Vec3(0.0, -aug.magnitude, 0.0)) *
                   Rigid::rotation_x(-aug.pitch_degrees * kDegToRad);
    }
    throw std::invalid_argument("augment_pose: unsupported augmentation kind");
}

std::vector<CameraView> make_trajectory(const TrajectorySpec& spec) {
    spec.intrinsics.validate();
    if (spec.frames == 0) throw std::invalid_argument("make_trajectory: frames must be >= 1");
    const Rigid heading = Rigid::rotation_y(spec.heading);
    const Vec3 forward = heading.rotation() * Vec3::UnitZ();
    std::vector<CameraView> views;
    views.reserve(spec.frames);
    for (std::size_t f = 0; f < spec.frames; ++f) {
        const Vec3 pos = spec.start + static_cast<double>(f) * spec.step * forward;
        const Pose base = Rigid::from_rt(heading.rotation(), pos);
        views.push_back({spec.intrinsics, augment_pose(base, spec.augmentation)});
    }
    return views;
}

// ---------------------------------------------------------------------------

void LidarPattern::validate() const {
    if (azimuth_count == 0 || elevation_count == 0) throw std::invalid_argument("lidar pattern: resolution must be >= 1x1");
    if (!(azimuth_max >= azimuth_min) || !(elevation_max >= elevation_min))
        throw std::invalid_argument("lidar pattern: inverted angle range");
    if (!(max_range > 0.0)) throw std::invalid_argument("lidar pattern: max_range must be positive");
}

Vec3 LidarPattern::direction(std::size_t az, std::size_t el) const {
    // cell centres; a 1-cell axis points at the middle of its range
    const double a = azimuth_min + (azimuth_max - azimuth_min) * (static_cast<double>(az) + 0.5) /
                                       static_cast<double>(azimuth_count);
    const double e = elevation_min + (elevation_max - elevation_min) * (static_cast<double>(el) + 0.5) /
                                         static_cast<double>(elevation_count);
    return {std::cos(e) * std::sin(a), -std::sin(e), std::cos(e) * std::cos(a)};
}

LidarScan simulate_lidar(const SceneSpec& scene, const Pose& sensor_pose, const LidarPattern& pattern) {
    pattern.validate();
    LidarScan scan;
    const Mat3 r = sensor_pose.rotation();
    const Vec3 origin = sensor_pose.translation();
    for (std::size_t el = 0; el < pattern.elevation_count; ++el) {
        for (std::size_t az = 0; az < pattern.azimuth_count; ++az) {
            const auto hit = raycast(scene, origin, r * pattern.direction(az, el));
            if (!hit || hit->t > pattern.max_range) continue;
            scan.points.push_back(hit->point);
            const Vec3 c = albedo(scene.primitives[static_cast<std::size_t>(hit->primitive)], hit->point);
            scan.intensity.push_back((c.x() + c.y() + c.z()) / 3.0);
        }
    }
    return scan;
}

// ---------------------------------------------------------------------------

namespace {

void check_window(const CropWindow& w, std::size_t width, std::size_t height) {
    if (w.width == 0 || w.height == 0 || w.x0 + w.width > width || w.y0 + w.height > height)
        throw std::invalid_argument("crop window " + std::to_string(w.width) + "x" + std::to_string(w.height) + "+" +
                                    std::to_string(w.x0) + "+" + std::to_string(w.y0) + " exceeds image " +
                                    std::to_string(width) + "x" + std::to_string(height));
}

Image crop_image(const Image& img, const CropWindow& w) {
    Image out(w.width, w.height, img.channels);
    for (std::size_t y = 0; y < w.height; ++y) {
        for (std::size_t x = 0; x < w.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(w.x0 + x, w.y0 + y, c);
        }
    }
    return out;
}

DepthMap crop_depth(const DepthMap& d, const CropWindow& w) {
    DepthMap out(w.width, w.height);
    for (std::size_t y = 0; y < w.height; ++y) {
        for (std::size_t x = 0; x < w.width; ++x) {
            const std::size_t src = (w.y0 + y) * d.width + (w.x0 + x), dst = y * w.width + x;
            out.depth[dst] = d.depth[src];
            out.valid[dst] = d.valid[src];
        }
    }
    return out;
}

CameraView crop_view(const CameraView& view, const CropWindow& w) {
    CameraView out = view;
    out.intrinsics.cx -= static_cast<double>(w.x0);
    out.intrinsics.cy -= static_cast<double>(w.y0);
    out.intrinsics.width = w.width;
    out.intrinsics.height = w.height;
    return out;
}

}  // namespace

ScenePair crop_pair(const Image& rgb, const DepthMap& depth, const CameraView& view, const CropWindow& reference,
                    const CropWindow& target) {
    if (rgb.width != depth.width || rgb.height != depth.height)
        throw SizeMismatchError("crop_pair: image and depth sizes differ");
    check_window(reference, rgb.width, rgb.height);
    check_window(target, rgb.width, rgb.height);
    ScenePair pair;
    pair.reference_rgb = crop_image(rgb, reference);
    pair.target_rgb = crop_image(rgb, target);
    pair.reference_depth = crop_depth(depth, reference);
    pair.target_depth = crop_depth(depth, target);
    pair.reference_view = crop_view(view, reference);
    pair.target_view = crop_view(view, target);
    pair.tag = "crop";
    build_pair_geometry(pair, GeometrySource::Depth);
    return pair;
}

ScenePair random_crop_pair(const Image& rgb, const DepthMap& depth, const CameraView& view, std::size_t crop_width,
                           std::size_t crop_height, std::uint64_t seed) {
    if (crop_width == 0 || crop_height == 0 || crop_width > rgb.width || crop_height > rgb.height)
        throw std::invalid_argument("random_crop_pair: crop " + std::to_string(crop_width) + "x" +
                                    std::to_string(crop_height) + " larger than image " + std::to_string(rgb.width) +
                                    "x" + std::to_string(rgb.height));
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> xs(0, rgb.width - crop_width), ys(0, rgb.height - crop_height);
    const CropWindow a{xs(rng), ys(rng), crop_width, crop_height};
    const CropWindow b{xs(rng), ys(rng), crop_width, crop_height};
    return crop_pair(rgb, depth, view, a, b);
}

// ---------------------------------------------------------------------------

SceneSpec random_scene(std::uint64_t seed, const SceneGenConfig& cfg) {
    if (cfg.min_objects > cfg.max_objects) throw std::invalid_argument("random_scene: min_objects > max_objects");
    if (!(cfg.depth_max > cfg.depth_min)) throw std::invalid_argument("random_scene: empty depth range");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto color = [&] { return Vec3(uni(0.05, 0.95), uni(0.05, 0.95), uni(0.05, 0.95)); };
    auto material = [&] {
        Material m;
        m.color_a = color();
        m.color_b = color();
        if (unit(rng) < cfg.checker_probability) m.checker = uni(0.4, 1.2);
        return m;
    };

    SceneSpec scene;
    scene.seed = seed;
    scene.sky = Vec3(uni(0.45, 0.7), uni(0.6, 0.8), uni(0.75, 0.98));

    Primitive ground;
    ground.kind = PrimitiveKind::Plane;
    ground.a = Vec3::Zero();
    ground.b = Vec3(0.0, -1.0, 0.0);  // faces the cameras above it
    const double grey = uni(0.2, 0.5);
    ground.material.color_a = Vec3(grey, grey, grey) + Vec3(uni(0, 0.1), uni(0, 0.1), uni(0, 0.1));
    ground.material.color_b = ground.material.color_a * 0.6;
    ground.material.checker = uni(1.0, 2.5);
    scene.primitives.push_back(ground);

    if (cfg.buildings) {
        for (int side : {-1, 1}) {
            double z = cfg.depth_min * 0.5 - 2.0;
            while (z < cfg.depth_max + 20.0) {
                const double len = uni(4.0, 9.0);
                const double inner = cfg.road_half_width + uni(1.0, 3.0);
                const double height = uni(3.0, 9.0);
                Primitive b;
                b.kind = PrimitiveKind::Box;
                const double x0 = side < 0 ? -inner - uni(3.0, 6.0) : inner;
                const double x1 = side < 0 ? -inner : inner + uni(3.0, 6.0);
                b.a = Vec3(x0, -height, z);
                b.b = Vec3(x1, 0.0, z + len);
                b.material = material();
                scene.primitives.push_back(b);
                z += len + uni(0.0, 2.0);
            }
        }
    }

    std::uniform_int_distribution<std::size_t> count(cfg.min_objects, cfg.max_objects);
    const std::size_t n = count(rng);
    for (std::size_t k = 0; k < n; ++k) {
        Primitive p;
        p.material = material();
        const double x = uni(-cfg.road_half_width, cfg.road_half_width);
        const double z = uni(cfg.depth_min, cfg.depth_max);
        if (unit(rng) < 0.5) {
            p.kind = PrimitiveKind::Sphere;
            p.radius = uni(0.4, 1.2);
            p.a = Vec3(x, -p.radius, z);  // resting on the ground
        } else {
            p.kind = PrimitiveKind::Box;
            const Vec3 half(uni(0.4, 1.2), uni(0.4, 1.4), uni(0.4, 1.5));
            p.a = Vec3(x - half.x(), -2.0 * half.y(), z - half.z());
            p.b = Vec3(x + half.x(), 0.0, z + half.z());
        }
        scene.primitives.push_back(p);
    }
    return scene;
}

}  // namespace pmdiff
