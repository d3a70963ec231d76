#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "pmdiff/geometry.hpp"
#include "pmdiff/image.hpp"

namespace pmdiff {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE), capped at 99 dB when MSE < 1e-12.
double psnr(const Image& a, const Image& b, double peak = 1.0);

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean local SSIM over every fully-contained window position, averaged over
/// channels. Throws std::invalid_argument when the image is smaller than the window.
double ssim(const Image& a, const Image& b, const SsimOptions& opt = {});

struct DepthMetrics {
    double absrel = 0.0;
    double rmse = 0.0;
    double delta1 = 0.0;  // fraction with max(p/r, r/p) < 1.25 (strict)
    std::size_t n_pixels = 0;
};

/// Evaluated over pixels set in `mask` (and valid in both maps).
DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& ref, const Mask& mask);

struct EvalReport {
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<DepthMetrics> depth;
    std::size_t n_pixels = 0;

    /// {psnr, ssim, absrel, rmse, delta1, n_pixels, fid: null, kid: null}
    std::string to_json() const;
};

EvalReport evaluate_images(const Image& pred, const Image& gt, const DepthMap* pred_depth = nullptr,
                           const DepthMap* gt_depth = nullptr);

}  // namespace pmdiff
