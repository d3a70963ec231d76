#include <cmath>
#include <random>

#include "doctest.h"
#include "pmdiff/augsched.hpp"
#include "pmdiff/metrics.hpp"

using namespace pmdiff;

namespace {

Image random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, 3);
    for (auto& v : img.data) v = u(rng);
    return img;
}

DepthMap sparse_depth(std::size_t w, std::size_t h, std::size_t every, double value) {
    DepthMap d(w, h);
    for (std::size_t j = 0; j < h; ++j)
        for (std::size_t i = 0; i < w; ++i)
            if ((j * w + i) % every == 0) d.set(i, j, value + static_cast<double>(i));
    return d;
}

}  // namespace

TEST_CASE("default weights and schedule constants") {
    const LossWeights w;
    CHECK(w.rgb == 0.8);
    CHECK(w.ssim == 0.2);
    CHECK(w.aug == 0.5);
    CHECK(w.lpips == 0.1);
    CHECK(w.depth == 0.01);
    const ScheduleConfig s;
    CHECK(s.s_start == 0.6);
    CHECK(s.s_end == 0.2);
    CHECK(s.refresh_every == 200);
    CHECK(s.total_steps == 20000);
    LossWeights neg;
    neg.depth = -1.0;
    CHECK_THROWS(neg.validate());
    ScheduleConfig inverted;
    inverted.s_end = 0.7;
    CHECK_THROWS(inverted.validate());
}

TEST_CASE("noise scale schedule") {
    const ScheduleConfig s;
    CHECK(noise_scale_at(0, s) == 0.6);
    CHECK(noise_scale_at(s.total_steps, s) == 0.2);
    CHECK(noise_scale_at(s.total_steps / 2, s) == doctest::Approx(0.4).epsilon(1e-15));
    double last = 1.0;
    for (std::int64_t t = 0; t <= s.total_steps; t += 97) {
        const double v = noise_scale_at(t, s);
        CHECK(v <= last);
        last = v;
    }
    CHECK_THROWS_AS(noise_scale_at(-1, s), std::out_of_range);
    CHECK_THROWS_AS(noise_scale_at(s.total_steps + 1, s), std::out_of_range);
}

TEST_CASE("refresh schedule") {
    const ScheduleConfig s;
    CHECK(should_refresh(200, s));
    CHECK_FALSE(should_refresh(0, s));
    CHECK_FALSE(should_refresh(199, s));
    int count = 0;
    for (std::int64_t t = 1; t <= 1000; ++t) count += should_refresh(t, s);
    CHECK(count == 5);
}

TEST_CASE("loss_train") {
    std::mt19937_64 rng(81);
    const Image gt = random_image(16, 16, rng);
    const DepthMap d = sparse_depth(16, 16, 3, 2.0);
    CHECK(loss_train(gt, gt, d, d).total == 0.0);

    Image shifted = gt;
    for (auto& v : shifted.data) v = std::min(1.0, v + 0.1);
    double l1 = 0.0;
    for (std::size_t i = 0; i < gt.data.size(); ++i) l1 += std::abs(shifted.data[i] - gt.data[i]);
    l1 /= static_cast<double>(gt.data.size());
    const LossTerms t = loss_train(shifted, gt, d, d);
    CHECK(t.total == doctest::Approx(0.8 * l1 + 0.2 * (1.0 - ssim(shifted, gt))).epsilon(1e-12));
    CHECK(t.depth == 0.0);

    const DepthMap empty(16, 16);
    DepthMap render = d;
    for (auto& v : render.depth) v += 1.0;
    CHECK(loss_train(gt, gt, render, empty).total == 0.0);
    CHECK(loss_train(gt, gt, render, d).depth == doctest::Approx(1.0));
    CHECK_THROWS(loss_train(gt, Image(8, 8, 3), d, d));
}

TEST_CASE("loss_aug and the perceptual hook") {
    std::mt19937_64 rng(82);
    const Image a = random_image(12, 12, rng), b = random_image(12, 12, rng);
    const DepthMap d = sparse_depth(12, 12, 4, 3.0);
    DepthMap dr = d;
    for (auto& v : dr.depth) v *= 1.1;
    const LossTerms none = loss_aug(a, a, d, d);
    CHECK(none.total == 0.0);
    CHECK(none.warnings.size() == 1);

    const LossTerms no_hook = loss_aug(a, b, dr, d);
    CHECK(no_hook.total == 0.5 * l1_image(a, b) + 0.01 * masked_depth_l1(dr, d));

    const PerceptualHook l2 = [](const Image& x, const Image& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i) s += (x.data[i] - y.data[i]) * (x.data[i] - y.data[i]);
        return s / static_cast<double>(x.data.size());
    };
    const LossTerms hooked = loss_aug(a, b, dr, d, {}, l2);
    CHECK(hooked.total == doctest::Approx(0.5 * l1_image(a, b) + 0.1 * l2(a, b) + 0.01 * masked_depth_l1(dr, d)));
    CHECK(hooked.warnings.empty());
    CHECK(loss_aug(a, a, d, d, {}, l2).total == 0.0);

    const double c = 3.5;
    const LossTerms scaled = loss_aug(a, b, dr, d, LossWeights{}.scaled(c), l2);
    CHECK(scaled.total == doctest::Approx(c * hooked.total).epsilon(1e-12));
    const LossTerms tscaled = loss_train(a, b, dr, d, LossWeights{}.scaled(c));
    CHECK(tscaled.total == doctest::Approx(c * loss_train(a, b, dr, d).total).epsilon(1e-12));
}

TEST_CASE("grid distillation follows the refresh schedule") {
    std::mt19937_64 rng(83);
    const Image captured = random_image(8, 8, rng);
    const Image target = random_image(8, 8, rng);
    GridDistillConfig cfg;
    cfg.schedule.total_steps = 1000;
    std::vector<double> seen;
    const ViewGenerator gen = [&](const Image& current, double s) {
        seen.push_back(s);
        Image out = current;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (1 - s) * target.data[i] + s * current.data[i];
        return out;
    };
    const auto res = distill_grid(captured, Image(8, 8, 3, 0.5), gen, cfg);
    CHECK(res.refresh_steps == std::vector<std::int64_t>{200, 400, 600, 800, 1000});
    REQUIRE(res.noise_scales.size() == 6);
    CHECK(res.noise_scales.front() == 0.6);
    CHECK(res.noise_scales.back() == 0.2);
    CHECK(seen == res.noise_scales);
    CHECK(res.loss_history.back() < res.loss_history.front());
    CHECK(l1_image(res.captured, captured) < 1e-12);
}
