#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmdiff/encode.hpp"
#include "pmdiff/microdiff.hpp"
#include "pmdiff/pair.hpp"
#include "pmdiff/synth.hpp"

namespace pmdiff {

/// [1,3,H,W] tensor with values 2 rgb - 1.
Tensor image_to_tensor(const Image& rgb);
/// Element `index` of a [N,3,H,W] tensor mapped back to [0,1] (clamped).
Image tensor_to_image(const Tensor& t, std::size_t index = 0);
/// [1,C,H,W] view of a planar encoded map.
Tensor encoding_to_tensor(const EncodedMap& enc);

class GeometryUnavailableError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Normalizes X^{r,t} and X^{t,t} jointly and encodes both. Throws
/// GeometryUnavailableError when either map has no valid pixel or the pair is
/// degenerate.
TrainSample make_train_sample(const ScenePair& pair, const EncodingConfig& enc = {});

struct ToyDatasetConfig {
    std::size_t pairs = 200;
    std::size_t width = 48;
    std::size_t height = 32;
    double focal = 40.0;
    std::uint64_t seed = 1;
    double crop_fraction = 0.25;      // share of pairs built from two crops of one render
    double lidar_probability = 0.0;   // share of pairs using the sparse LiDAR geometry
    double overlap_threshold = 0.2;
    // Visibility tolerance of the overlap test. Roughly one pixel footprint at
    // 10 m for the default focal length; a finer value rejects most pose pairs
    // because neighbouring samples of one surface are further apart than that.
    double overlap_tolerance = 0.25;
    SceneGenConfig scene;
    LidarPattern lidar;
};

Intrinsics toy_intrinsics(std::size_t width, std::size_t height, double focal);

/// Seeded reference/target pairs of random street scenes. Pairs at or below
/// the overlap threshold are discarded and regenerated.
std::vector<ScenePair> generate_toy_pairs(const ToyDatasetConfig& cfg);

/// Renders one camera view of a scene together with its LiDAR scan from the
/// same pose.
ScenePair render_pair(const SceneSpec& scene, const CameraView& reference, const CameraView& target,
                      GeometrySource source, const LidarPattern& lidar = {});

}  // namespace pmdiff
