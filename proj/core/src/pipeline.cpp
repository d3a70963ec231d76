#include "pmdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pmdiff/correspond.hpp"

namespace pmdiff {

Tensor image_to_tensor(const Image& rgb) {
    if (rgb.channels != 3) throw SizeMismatchError("image_to_tensor: expected an RGB image");
    const std::size_t w = rgb.width, h = rgb.height;
    std::vector<double> v(3 * w * h);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) v[(c * h + y) * w + x] = 2.0 * rgb.at(x, y, c) - 1.0;
        }
    }
    return Tensor::from({1, 3, h, w}, std::move(v));
}

Image tensor_to_image(const Tensor& t, std::size_t index) {
    if (t.rank() != 4 || t.dim(1) != 3 || index >= t.dim(0))
        throw ShapeError("tensor_to_image: expected [N,3,H,W], got " + shape_str(t.shape()));
    const std::size_t h = t.dim(2), w = t.dim(3);
    Image img(w, h, 3);
    const std::size_t base = index * 3 * h * w;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x)
                img.at(x, y, c) = std::clamp((t[base + (c * h + y) * w + x] + 1.0) / 2.0, 0.0, 1.0);
        }
    }
    return img;
}

Tensor encoding_to_tensor(const EncodedMap& enc) {
    return Tensor::from({1, enc.channels, enc.height, enc.width}, enc.data);
}

TrainSample make_train_sample(const ScenePair& pair, const EncodingConfig& enc) {
    if (pair.reference_in_target.valid_count() == 0 || pair.target_in_target.valid_count() == 0)
        throw GeometryUnavailableError("pair '" + pair.tag + "' has an empty point map");
    NormalizedPair norm;
    try {
        norm = normalize_pair(pair.reference_in_target, pair.target_in_target);
    } catch (const DegenerateError& e) {
        throw GeometryUnavailableError(e.what());
    }
    TrainSample s;
    s.z_target = image_to_tensor(pair.target_rgb);
    s.z_reference = image_to_tensor(pair.reference_rgb);
    s.enc_reference = encoding_to_tensor(fourier_encode(norm.reference, enc));
    s.enc_target = encoding_to_tensor(fourier_encode(norm.target, enc));
    s.reference_to_target = pair.reference_to_target.row_major();
    const auto& k = pair.target_view.intrinsics;
    s.target_intrinsics = {k.fx, k.fy, k.cx, k.cy};
    return s;
}

Intrinsics toy_intrinsics(std::size_t width, std::size_t height, double focal) {
    Intrinsics k;
    k.fx = k.fy = focal;
    k.cx = static_cast<double>(width) / 2.0;
    k.cy = static_cast<double>(height) / 2.0;
    k.width = width;
    k.height = height;
    return k;
}

ScenePair render_pair(const SceneSpec& scene, const CameraView& reference, const CameraView& target,
                      GeometrySource source, const LidarPattern& lidar) {
    ScenePair pair;
    auto r = render(scene, reference);
    auto t = render(scene, target);
    pair.reference_rgb = std::move(r.rgb);
    pair.reference_depth = std::move(r.depth);
    pair.target_rgb = std::move(t.rgb);
    pair.target_depth = std::move(t.depth);
    pair.reference_view = reference;
    pair.target_view = target;
    if (source == GeometrySource::Lidar) {
        pair.reference_lidar = simulate_lidar(scene, reference.pose, lidar);
        pair.target_lidar = simulate_lidar(scene, target.pose, lidar);
    }
    build_pair_geometry(pair, source);
    return pair;
}

std::vector<ScenePair> generate_toy_pairs(const ToyDatasetConfig& cfg) {
    if (cfg.width % 4 != 0 || cfg.height % 4 != 0) throw std::invalid_argument("toy pairs: size must be a multiple of 4");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const Intrinsics k = toy_intrinsics(cfg.width, cfg.height, cfg.focal);
    std::vector<ScenePair> out;
    std::size_t attempt = 0;
    while (out.size() < cfg.pairs) {
        if (++attempt > cfg.pairs * 20) throw std::runtime_error("toy pairs: too many rejected candidates");
        const std::uint64_t scene_seed = rng();
        const SceneSpec scene = random_scene(scene_seed, cfg.scene);
        const GeometrySource source = unit(rng) < cfg.lidar_probability ? GeometrySource::Lidar : GeometrySource::Depth;
        const bool crop = unit(rng) < cfg.crop_fraction;
        const double heading = uni(-0.15, 0.15);
        const Vec3 start(uni(-1.5, 1.5), -1.5, uni(-2.0, 0.0));
        const Pose base = Rigid::from_rt(Rigid::rotation_y(heading).rotation(), start);
        ScenePair pair;
        if (crop && source == GeometrySource::Depth) {
            // a wider render with the same focal length, cut twice
            const std::size_t big_w = cfg.width + cfg.width / 3, big_h = cfg.height + cfg.height / 4;
            const CameraView big{toy_intrinsics(big_w, big_h, cfg.focal), base};
            const auto full = render(scene, big);
            pair = random_crop_pair(full.rgb, full.depth, big, cfg.width, cfg.height, rng());
        } else {
            const CameraView ref{k, base};
            const Pose offset = Rigid::translation(Vec3(uni(-1.0, 1.0), 0.0, uni(0.5, 3.0))) *
                                Rigid::rotation_y(uni(-0.25, 0.25));
            const CameraView tgt{k, base * offset};
            pair = render_pair(scene, ref, tgt, source, cfg.lidar);
        }
        pair.tag = "pair" + std::to_string(out.size()) + "_scene" + std::to_string(scene_seed);
        if (pair.reference_in_target.valid_count() < 4 || pair.target_in_target.valid_count() < 4) continue;
        // LiDAR pairs are screened with the dense geometry of the same views
        double ratio = 0.0;
        if (source == GeometrySource::Lidar) {
            ScenePair dense = pair;
            build_pair_geometry(dense, GeometrySource::Depth);
            ratio = overlap_ratio(dense, cfg.overlap_tolerance);
        } else {
            ratio = overlap_ratio(pair, cfg.overlap_tolerance);
        }
        if (ratio > cfg.overlap_threshold) out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace pmdiff
