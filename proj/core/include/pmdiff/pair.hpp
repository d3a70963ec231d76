#pragma once

#include <optional>
#include <string>

#include "pmdiff/geometry.hpp"
#include "pmdiff/image.hpp"

namespace pmdiff {

enum class GeometrySource { Depth, Lidar };

inline const char* to_string(GeometrySource s) { return s == GeometrySource::Depth ? "depth" : "lidar"; }

/// One training/evaluation sample: a reference and a target view of the same
/// scene. Both point maps are expressed in the target camera frame.
struct ScenePair {
    Image reference_rgb;
    Image target_rgb;
    DepthMap reference_depth;
    DepthMap target_depth;
    CameraView reference_view;
    CameraView target_view;
    std::optional<LidarScan> reference_lidar;
    std::optional<LidarScan> target_lidar;
    PointMap reference_in_target;  // X^{r,t}
    PointMap target_in_target;     // X^{t,t}
    Rigid reference_to_target;     // P_{r->t}
    GeometrySource geometry = GeometrySource::Depth;
    std::string tag;
};

/// Frame tags used for pair point maps.
inline constexpr int kReferenceFrame = 0;
inline constexpr int kTargetFrame = 1;

/// Builds X^{r,t} and X^{t,t} from depth (or LiDAR when both scans are
/// present and `source` asks for it) and fills the relative pose.
void build_pair_geometry(ScenePair& pair, GeometrySource source);

}  // namespace pmdiff
