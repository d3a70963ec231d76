#include "pmdiff/warp.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace pmdiff {

WarpResult forward_warp_ordered(const Image& reference, const PointMap& reference_in_target,
                                const Intrinsics& target_k, const std::vector<std::size_t>& order) {
    if (reference.width != reference_in_target.width || reference.height != reference_in_target.height)
        throw SizeMismatchError("forward_warp: image and point map sizes differ");
    if (reference.channels != 3) throw SizeMismatchError("forward_warp: reference must be RGB");
    target_k.validate(false);
    WarpResult out;
    out.image = Image(target_k.width, target_k.height, 3);
    out.coverage = Mask(target_k.width, target_k.height);
    out.zbuffer.assign(target_k.width * target_k.height, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> owner(out.zbuffer.size(), std::numeric_limits<std::size_t>::max());
    for (std::size_t src : order) {
        if (!reference_in_target.is_valid(src)) continue;
        const Vec3 p = reference_in_target.point(src);
        const Projection proj = project_camera_point(p, target_k);
        if (!proj.in_bounds) continue;
        const std::size_t dst = proj.py * target_k.width + proj.px;
        if (p.z() < out.zbuffer[dst] || (p.z() == out.zbuffer[dst] && src < owner[dst])) {
            out.zbuffer[dst] = p.z();
            owner[dst] = src;
        }
    }
    for (std::size_t dst = 0; dst < owner.size(); ++dst) {
        if (owner[dst] == std::numeric_limits<std::size_t>::max()) continue;
        out.coverage.data[dst] = 1;
        const std::size_t sx = owner[dst] % reference.width, sy = owner[dst] / reference.width;
        for (std::size_t c = 0; c < 3; ++c) out.image.data[dst * 3 + c] = reference.at(sx, sy, c);
    }
    return out;
}

WarpResult forward_warp(const Image& reference, const PointMap& reference_in_target, const Intrinsics& target_k) {
    std::vector<std::size_t> order(reference_in_target.size());
    std::iota(order.begin(), order.end(), 0);
    return forward_warp_ordered(reference, reference_in_target, target_k, order);
}

Mask dilate_mask(const Mask& mask, std::size_t kernel) {
    if (kernel == 0 || kernel % 2 == 0)
        throw std::invalid_argument("dilate_mask: kernel size must be odd and >= 1, got " + std::to_string(kernel));
    const long r = static_cast<long>(kernel / 2);
    const long w = static_cast<long>(mask.width), h = static_cast<long>(mask.height);
    // separable: horizontal then vertical max
    Mask horiz(mask.width, mask.height);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            bool on = false;
            for (long dx = std::max(0L, x - r); dx <= std::min(w - 1, x + r) && !on; ++dx)
                on = mask.at(static_cast<std::size_t>(dx), static_cast<std::size_t>(y));
            horiz.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), on);
        }
    }
    Mask out(mask.width, mask.height);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            bool on = false;
            for (long dy = std::max(0L, y - r); dy <= std::min(h - 1, y + r) && !on; ++dy)
                on = horiz.at(static_cast<std::size_t>(x), static_cast<std::size_t>(dy));
            out.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), on);
        }
    }
    return out;
}

}  // namespace pmdiff
