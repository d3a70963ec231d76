#pragma once

#include <vector>

#include "pmdiff/geometry.hpp"
#include "pmdiff/image.hpp"

namespace pmdiff {

struct WarpResult {
    Image image;                 // target-sized RGB, zero where uncovered
    Mask coverage;
    std::vector<double> zbuffer;  // +inf where uncovered
};

/// Nearest-pixel forward splat of a reference image through its point map
/// X^{r,t} into the target camera. Nearest depth wins; equal depths resolve
/// to the smaller source index, so the result does not depend on splat order.
WarpResult forward_warp(const Image& reference, const PointMap& reference_in_target, const Intrinsics& target_k);

/// Same splat with an explicit source visiting order (used to check order
/// independence).
WarpResult forward_warp_ordered(const Image& reference, const PointMap& reference_in_target,
                                const Intrinsics& target_k, const std::vector<std::size_t>& order);

/// Binary dilation with a kernel x kernel square element; kernel must be odd.
Mask dilate_mask(const Mask& mask, std::size_t kernel = 9);

}  // namespace pmdiff
