#include "pmdiff/metrics.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <vector>

namespace pmdiff {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw SizeMismatchError(std::string(what) + ": image shapes differ (" + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                                std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                                std::to_string(b.channels) + ")");
}

std::vector<double> gaussian_window(std::size_t n, double sigma) {
    std::vector<double> w(n);
    const double mid = static_cast<double>(n - 1) / 2.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = static_cast<double>(k) - mid;
        w[k] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[k];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Valid-mode separable filter of one channel.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t w, std::size_t h,
                                 const std::vector<double>& win) {
    const std::size_t n = win.size(), ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(ow * h), out(ow * oh);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += win[k] * img[y * w + x + k];
            tmp[y * ow + x] = s;
        }
    }
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += win[k] * tmp[(y + k) * ow + x];
            out[y * ow + x] = s;
        }
    }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
    require_same(a, b, "psnr");
    if (a.data.empty()) throw std::invalid_argument("psnr: empty images");
    double se = 0.0;
    for (std::size_t k = 0; k < a.data.size(); ++k) {
        const double d = a.data[k] - b.data[k];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data.size());
    if (mse < 1e-12) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Image& a, const Image& b, const SsimOptions& opt) {
    require_same(a, b, "ssim");
    if (opt.window == 0 || a.width < opt.window || a.height < opt.window)
        throw std::invalid_argument("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                    " smaller than window " + std::to_string(opt.window));
    const auto win = gaussian_window(opt.window, opt.sigma);
    const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
    const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
    const std::size_t n = a.pixels();
    double total = 0.0;
    for (std::size_t c = 0; c < a.channels; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t p = 0; p < n; ++p) {
            x[p] = a.data[p * a.channels + c];
            y[p] = b.data[p * b.channels + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = filter_valid(x, a.width, a.height, win);
        const auto my = filter_valid(y, a.width, a.height, win);
        const auto sxx = filter_valid(xx, a.width, a.height, win);
        const auto syy = filter_valid(yy, a.width, a.height, win);
        const auto sxy = filter_valid(xy, a.width, a.height, win);
        double sum = 0.0;
        for (std::size_t p = 0; p < mx.size(); ++p) {
            const double vx = sxx[p] - mx[p] * mx[p];
            const double vy = syy[p] - my[p] * my[p];
            const double cov = sxy[p] - mx[p] * my[p];
            sum += ((2.0 * mx[p] * my[p] + c1) * (2.0 * cov + c2)) /
                   ((mx[p] * mx[p] + my[p] * my[p] + c1) * (vx + vy + c2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / static_cast<double>(a.channels);
}

DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& ref, const Mask& mask) {
    if (pred.width != ref.width || pred.height != ref.height || mask.width != ref.width || mask.height != ref.height)
        throw SizeMismatchError("depth_metrics: size mismatch");
    DepthMetrics m;
    double abs_rel = 0.0, sq = 0.0;
    std::size_t good = 0;
    for (std::size_t p = 0; p < ref.depth.size(); ++p) {
        if (!mask.data[p] || !pred.valid[p] || !ref.valid[p]) continue;
        const double d = pred.depth[p], r = ref.depth[p];
        abs_rel += std::abs(d - r) / r;
        sq += (d - r) * (d - r);
        if (std::max(d / r, r / d) < 1.25) ++good;
        ++m.n_pixels;
    }
    if (m.n_pixels == 0) throw std::invalid_argument("depth_metrics: mask selects no valid pixels");
    const double n = static_cast<double>(m.n_pixels);
    m.absrel = abs_rel / n;
    m.rmse = std::sqrt(sq / n);
    m.delta1 = static_cast<double>(good) / n;
    return m;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["absrel"] = depth ? nlohmann::ordered_json(depth->absrel) : nlohmann::ordered_json(nullptr);
    j["rmse"] = depth ? nlohmann::ordered_json(depth->rmse) : nlohmann::ordered_json(nullptr);
    j["delta1"] = depth ? nlohmann::ordered_json(depth->delta1) : nlohmann::ordered_json(nullptr);
    j["n_pixels"] = n_pixels;
    j["fid"] = nullptr;
    j["kid"] = nullptr;
    return j.dump(2);
}

EvalReport evaluate_images(const Image& pred, const Image& gt, const DepthMap* pred_depth, const DepthMap* gt_depth) {
    EvalReport r;
    r.psnr = psnr(pred, gt);
    r.ssim = ssim(pred, gt);
    r.n_pixels = gt.pixels();
    if (pred_depth && gt_depth) {
        Mask all(gt_depth->width, gt_depth->height, true);
        r.depth = depth_metrics(*pred_depth, *gt_depth, all);
    }
    return r;
}

}  // namespace pmdiff
