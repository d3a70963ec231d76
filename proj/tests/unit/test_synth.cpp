#include <cmath>
#include <random>

#include "doctest.h"
#include "pmdiff/correspond.hpp"
#include "pmdiff/pipeline.hpp"
#include "pmdiff/synth.hpp"

using namespace pmdiff;

namespace {

Intrinsics k_of(std::size_t w, std::size_t h, double f) {
    Intrinsics k;
    k.fx = k.fy = f;
    k.cx = static_cast<double>(w / 2);
    k.cy = static_cast<double>(h / 2);
    k.width = w;
    k.height = h;
    return k;
}

SceneSpec sphere_scene() {
    SceneSpec s;
    Primitive p;
    p.kind = PrimitiveKind::Sphere;
    p.a = Vec3(0, 0, 5);
    p.radius = 1.0;
    s.primitives.push_back(p);
    return s;
}

constexpr double kPi = 3.141592653589793;

}  // namespace

TEST_CASE("rendering a sphere on the optical axis") {
    const SceneSpec scene = sphere_scene();
    const CameraView view{k_of(9, 9, 10.0), Rigid::identity()};
    const RenderResult r = render(scene, view);
    CHECK(r.depth.at(4, 4) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.primitive_id[4 * 9 + 4] == 0);
    CHECK_FALSE(r.depth.is_valid(0, 0));
    CHECK(r.primitive_id[0] == -1);
    CHECK(r.rgb.at(0, 0, 2) == scene.sky.z());
    const RenderResult again = render(scene, view);
    CHECK(again.rgb.data == r.rgb.data);
    CHECK(again.depth.depth == r.depth.depth);
}

TEST_CASE("re-projected depth lands on the same primitive") {
    const SceneSpec scene = random_scene(61);
    const Intrinsics k = k_of(40, 30, 30.0);
    const Pose a = Rigid::translation(Vec3(0, -1.5, 0));
    const Pose b = a * Rigid::translation(Vec3(0.5, 0, 1.0)) * Rigid::rotation_y(0.1);
    const auto ra = render(scene, {k, a}), rb = render(scene, {k, b});
    const PointMap xa = pointmap_from_depth(k, ra.depth);
    std::size_t tested = 0, agree = 0;
    for (std::size_t idx = 0; idx < xa.size(); ++idx) {
        if (!xa.is_valid(idx)) continue;
        const Vec3 in_b = relative_pose(a, b).apply(xa.point(idx));
        const Projection p = project_camera_point(in_b, k);
        if (!p.in_bounds) continue;
        // Rounding far from a pixel centre can hop across a primitive edge.
        if (std::abs(p.u - static_cast<double>(p.px)) > 0.2 || std::abs(p.v - static_cast<double>(p.py)) > 0.2) continue;
        const std::size_t j = p.py * k.width + p.px;
        if (!rb.depth.is_valid(p.px, p.py) || std::abs(rb.depth.depth[j] - in_b.z()) > 0.01 * in_b.z()) continue;
        ++tested;
        agree += rb.primitive_id[j] == ra.primitive_id[idx];
    }
    REQUIRE(tested > 30);
    CHECK(static_cast<double>(agree) >= 0.99 * static_cast<double>(tested));
}

TEST_CASE("trajectories and augmentations") {
    TrajectorySpec spec;
    spec.intrinsics = k_of(48, 32, 40.0);
    spec.heading = 0.3;
    spec.frames = 5;
    const auto base = make_trajectory(spec);
    REQUIRE(base.size() == 5);

    spec.augmentation = Augmentation::parse("lateral", 0.0);
    const auto zero = make_trajectory(spec);
    for (std::size_t i = 0; i < 5; ++i) CHECK(zero[i].pose.matrix() == base[i].pose.matrix());

    const Pose p = base[2].pose;
    const Pose back = augment_pose(augment_pose(p, Augmentation::parse("rotate", 45.0)), Augmentation::parse("rotate", -45.0));
    CHECK((back.matrix() - p.matrix()).cwiseAbs().maxCoeff() < 1e-12);

    const Pose shifted = augment_pose(p, Augmentation::parse("lateral", 2.0));
    const Vec3 delta = shifted.translation() - p.translation();
    const Vec3 heading = p.rotation() * Vec3::UnitZ();
    CHECK(std::abs(delta.norm() - 2.0) < 1e-9);
    CHECK(std::abs(delta.dot(heading)) < 1e-9);

    const Pose up = augment_pose(p, Augmentation::parse("elevate", 1.0));
    CHECK((up.translation() - p.translation() - Vec3(0, -1, 0)).norm() < 1e-9);  // heading is a yaw only
    const Vec3 fwd = up.rotation() * Vec3::UnitZ();
    CHECK(std::asin(fwd.y()) == doctest::Approx(10.0 * kPi / 180.0));  // looks 10 degrees down (+y)

    CHECK(evaluation_augmentations().size() == 7);
    CHECK_THROWS_AS(Augmentation::parse("zoom", 1.0), std::invalid_argument);
}

TEST_CASE("LiDAR simulation") {
    SceneSpec wall;
    Primitive plane;
    plane.kind = PrimitiveKind::Plane;
    plane.a = Vec3(0, 0, 7);
    plane.b = Vec3(0, 0, -1);
    wall.primitives.push_back(plane);
    LidarPattern one;
    one.azimuth_count = 1;
    one.elevation_count = 1;
    one.azimuth_min = one.azimuth_max = 0.0;
    one.elevation_min = one.elevation_max = 0.0;
    const LidarScan s = simulate_lidar(wall, Rigid::identity(), one);
    REQUIRE(s.points.size() == 1);
    CHECK((s.points[0] - Vec3(0, 0, 7)).norm() < 1e-12);

    SceneSpec ground_only;
    Primitive g;
    g.kind = PrimitiveKind::Plane;
    g.a = Vec3::Zero();
    g.b = Vec3(0, -1, 0);
    ground_only.primitives.push_back(g);
    LidarPattern upward;
    upward.elevation_min = 0.1;
    upward.elevation_max = 0.5;
    CHECK(simulate_lidar(ground_only, Rigid::translation(Vec3(0, -1.5, 0)), upward).points.empty());

    const SceneSpec scene = random_scene(62);
    const Pose sensor = Rigid::translation(Vec3(0.3, -1.5, 1.0));
    const LidarPattern pattern;
    const LidarScan scan = simulate_lidar(scene, sensor, pattern);
    CHECK(scan.points.size() <= pattern.azimuth_count * pattern.elevation_count);
    CHECK(scan.points.size() > 100);
    for (const Vec3& p : scan.points) {
        const Vec3 dir = p - sensor.translation();
        const auto hit = raycast(scene, sensor.translation(), dir.normalized());
        REQUIRE(hit.has_value());
        CHECK(std::abs(hit->t - dir.norm()) < 1e-6);
    }
}

TEST_CASE("crop pairs") {
    const SceneSpec scene = random_scene(63);
    const CameraView view{k_of(48, 40, 36.0), Rigid::translation(Vec3(0, -1.5, 0))};
    const auto full = render(scene, view);

    const CropWindow whole{0, 0, 48, 40};
    const ScenePair same = crop_pair(full.rgb, full.depth, view, whole, whole);
    CHECK(overlap_ratio(same) == 1.0);

    const ScenePair disjoint = crop_pair(full.rgb, full.depth, view, {0, 0, 20, 40}, {24, 0, 20, 40});
    CHECK(overlap_ratio(disjoint) == 0.0);
    CHECK(select_pairs({disjoint}).empty());

    const ScenePair half = crop_pair(full.rgb, full.depth, view, {0, 0, 32, 40}, {16, 0, 32, 40});
    CHECK(half.reference_to_target.matrix() == Mat4::Identity());
    CHECK(half.target_view.intrinsics.cx == view.intrinsics.cx - 16.0);
    for (std::size_t y = 0; y < 40; ++y) {
        for (std::size_t x = 16; x < 32; ++x) {
            const std::size_t r = y * 32 + x, t = y * 32 + (x - 16);
            CHECK(half.reference_in_target.is_valid(r) == half.target_in_target.is_valid(t));
            if (half.reference_in_target.is_valid(r))
                CHECK((half.reference_in_target.point(r) - half.target_in_target.point(t)).norm() < 1e-9);
        }
    }
    CHECK_THROWS_AS(crop_pair(full.rgb, full.depth, view, {40, 0, 20, 10}, whole), std::invalid_argument);
    const ScenePair a = random_crop_pair(full.rgb, full.depth, view, 32, 32, 5);
    const ScenePair b = random_crop_pair(full.rgb, full.depth, view, 32, 32, 5);
    CHECK(a.reference_rgb.data == b.reference_rgb.data);
    CHECK(a.target_view.intrinsics.cx == b.target_view.intrinsics.cx);
}

TEST_CASE("random scenes are seeded and valid") {
    const SceneSpec a = random_scene(64), b = random_scene(64), c = random_scene(65);
    CHECK(a.primitives.size() == b.primitives.size());
    CHECK(a.sky == b.sky);
    CHECK_FALSE(a.sky == c.sky);
    CHECK_NOTHROW(a.validate());
    SceneSpec empty;
    CHECK_THROWS(empty.validate());
}

TEST_CASE("toy pairs honour the geometry share and the overlap filter") {
    ToyDatasetConfig cfg;
    cfg.pairs = 12;
    cfg.seed = 21;
    cfg.lidar_probability = 1.0;
    const auto pairs = generate_toy_pairs(cfg);
    REQUIRE(pairs.size() == 12);
    for (const auto& p : pairs) {
        CHECK(p.geometry == GeometrySource::Lidar);
        CHECK(p.reference_lidar.has_value());
        ScenePair dense = p;
        build_pair_geometry(dense, GeometrySource::Depth);
        CHECK(overlap_ratio(dense, cfg.overlap_tolerance) > cfg.overlap_threshold);
    }

    cfg.lidar_probability = 0.0;
    cfg.crop_fraction = 0.0;
    const auto a = generate_toy_pairs(cfg);
    const auto b = generate_toy_pairs(cfg);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].geometry == GeometrySource::Depth);
        CHECK(a[i].tag == b[i].tag);
        CHECK(a[i].target_rgb.data == b[i].target_rgb.data);
    }
}
