#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmdiff/geometry.hpp"
#include "pmdiff/image.hpp"

namespace pmdiff {

struct LossWeights {
    double rgb = 0.8;
    double ssim = 0.2;
    double aug = 0.5;
    double lpips = 0.1;
    double depth = 0.01;

    void validate() const;
    LossWeights scaled(double c) const { return {rgb * c, ssim * c, aug * c, lpips * c, depth * c}; }
};

struct ScheduleConfig {
    double s_start = 0.6;
    double s_end = 0.2;
    std::int64_t total_steps = 20000;
    std::int64_t refresh_every = 200;

    void validate() const;
};

/// Linear decay from s_start at step 0 to s_end at total_steps.
double noise_scale_at(std::int64_t step, const ScheduleConfig& cfg);

/// True iff step > 0 and step is a multiple of refresh_every.
bool should_refresh(std::int64_t step, const ScheduleConfig& cfg);

/// Perceptual distance stand-in; the learned metric itself is not provided.
using PerceptualHook = std::function<double(const Image&, const Image&)>;

struct LossTerms {
    double total = 0.0;
    double rgb = 0.0;     // mean absolute error
    double ssim = 0.0;    // 1 - SSIM (loss_train only)
    double lpips = 0.0;   // hook value (loss_aug only)
    double depth = 0.0;   // masked mean absolute depth error; 0 when the mask is empty
    std::vector<std::string> warnings;
};

double l1_image(const Image& a, const Image& b);

/// Mean |render - lidar| over pixels valid in the LiDAR depth; 0 when none are.
double masked_depth_l1(const DepthMap& render, const DepthMap& lidar);

/// lambda_rgb L1 + lambda_ssim (1 - SSIM) + lambda_d L_d against captured views.
LossTerms loss_train(const Image& render, const Image& gt, const DepthMap& depth_render, const DepthMap& depth_lidar,
                     const LossWeights& w = {});

/// lambda_aug L1 + lambda_lpips hook + lambda_d L_d against generated views. With
/// no hook the perceptual term is 0 and a warning is recorded.
LossTerms loss_aug(const Image& render, const Image& gen, const DepthMap& depth_render, const DepthMap& depth_lidar,
                   const LossWeights& w = {}, const PerceptualHook& hook = {});

// ---------------------------------------------------------------------------
// Toy downstream consumer: a free per-pixel colour grid for one captured view
// and one extrapolated view, fitted by subgradient descent. The extrapolated
// view's pseudo ground truth is regenerated on the refresh schedule.

/// Produces a generated view from the current render at noise scale s.
using ViewGenerator = std::function<Image(const Image& current_render, double s)>;

struct GridDistillConfig {
    ScheduleConfig schedule;
    LossWeights weights;
    double learning_rate = 0.05;
};

struct GridDistillResult {
    Image captured;       // fitted grid for the captured view
    Image extrapolated;   // fitted grid for the extrapolated view
    std::vector<std::int64_t> refresh_steps;
    std::vector<double> noise_scales;  // s used at each refresh (index 0 = initial generation)
    std::vector<double> loss_history;  // L1 parts of L_train + L_aug per step
};

GridDistillResult distill_grid(const Image& captured_gt, const Image& extrapolated_init, const ViewGenerator& generate,
                               const GridDistillConfig& cfg);

}  // namespace pmdiff
