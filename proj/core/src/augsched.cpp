#include "pmdiff/augsched.hpp"

#include <cmath>
#include <stdexcept>

#include "pmdiff/metrics.hpp"

namespace pmdiff {

void LossWeights::validate() const {
    for (double v : {rgb, ssim, aug, lpips, depth}) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
    }
}

void ScheduleConfig::validate() const {
    if (!(s_end > 0.0 && s_end <= s_start && s_start <= 1.0))
        throw std::invalid_argument("schedule: need 0 < s_end <= s_start <= 1");
    if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be >= 1");
    if (refresh_every < 1) throw std::invalid_argument("schedule: refresh_every must be >= 1");
}

double noise_scale_at(std::int64_t step, const ScheduleConfig& cfg) {
    cfg.validate();
    if (step < 0 || step > cfg.total_steps)
        throw std::out_of_range("noise_scale_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
    if (step == cfg.total_steps) return cfg.s_end;
    return cfg.s_start +
           (cfg.s_end - cfg.s_start) * static_cast<double>(step) / static_cast<double>(cfg.total_steps);
}

bool should_refresh(std::int64_t step, const ScheduleConfig& cfg) {
    if (cfg.refresh_every < 1) throw std::invalid_argument("schedule: refresh_every must be >= 1");
    return step > 0 && step % cfg.refresh_every == 0;
}

double l1_image(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw SizeMismatchError("l1_image: image shapes differ");
    if (a.data.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t k = 0; k < a.data.size(); ++k) s += std::abs(a.data[k] - b.data[k]);
    return s / static_cast<double>(a.data.size());
}

double masked_depth_l1(const DepthMap& render, const DepthMap& lidar) {
    if (render.width != lidar.width || render.height != lidar.height)
        throw SizeMismatchError("masked_depth_l1: depth sizes differ");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < lidar.depth.size(); ++p) {
        if (!lidar.valid[p]) continue;
        s += std::abs(render.depth[p] - lidar.depth[p]);
        ++n;
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

LossTerms loss_train(const Image& render, const Image& gt, const DepthMap& depth_render, const DepthMap& depth_lidar,
                     const LossWeights& w) {
    w.validate();
    LossTerms t;
    t.rgb = l1_image(render, gt);
    t.ssim = 1.0 - ssim(render, gt);
    t.depth = masked_depth_l1(depth_render, depth_lidar);
    t.total = w.rgb * t.rgb + w.ssim * t.ssim + w.depth * t.depth;
    return t;
}

LossTerms loss_aug(const Image& render, const Image& gen, const DepthMap& depth_render, const DepthMap& depth_lidar,
                   const LossWeights& w, const PerceptualHook& hook) {
    w.validate();
    LossTerms t;
    t.rgb = l1_image(render, gen);
    t.depth = masked_depth_l1(depth_render, depth_lidar);
    if (hook) {
        t.lpips = hook(render, gen);
    } else {
        t.warnings.push_back("loss_aug: no perceptual hook supplied; lpips term set to 0");
    }
    t.total = w.aug * t.rgb + w.lpips * t.lpips + w.depth * t.depth;
    return t;
}

GridDistillResult distill_grid(const Image& captured_gt, const Image& extrapolated_init, const ViewGenerator& generate,
                               const GridDistillConfig& cfg) {
    cfg.schedule.validate();
    cfg.weights.validate();
    if (!generate) throw std::invalid_argument("distill_grid: generator required");
    GridDistillResult res;
    res.captured = Image(captured_gt.width, captured_gt.height, captured_gt.channels, 0.5);
    res.extrapolated = extrapolated_init;
    double s = noise_scale_at(0, cfg.schedule);
    Image pseudo = generate(res.extrapolated, s);
    if (!pseudo.same_shape(extrapolated_init)) throw SizeMismatchError("distill_grid: generator changed image shape");
    res.noise_scales.push_back(s);

    auto l1_step = [&](Image& grid, const Image& target, double weight) {
        // subgradient of weight * mean|grid - target|, scaled per pixel
        for (std::size_t k = 0; k < grid.data.size(); ++k) {
            const double d = grid.data[k] - target.data[k];
            const double g = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            double next = grid.data[k] - cfg.learning_rate * weight * g;
            // do not overshoot the target
            if ((d > 0 && next < target.data[k]) || (d < 0 && next > target.data[k])) next = target.data[k];
            grid.data[k] = next;
        }
    };

    for (std::int64_t step = 1; step <= cfg.schedule.total_steps; ++step) {
        if (should_refresh(step, cfg.schedule)) {
            s = noise_scale_at(step, cfg.schedule);
            pseudo = generate(res.extrapolated, s);
            res.refresh_steps.push_back(step);
            res.noise_scales.push_back(s);
        }
        l1_step(res.captured, captured_gt, cfg.weights.rgb);
        l1_step(res.extrapolated, pseudo, cfg.weights.aug);
        res.loss_history.push_back(cfg.weights.rgb * l1_image(res.captured, captured_gt) +
                                   cfg.weights.aug * l1_image(res.extrapolated, pseudo));
    }
    return res;
}

}  // namespace pmdiff
