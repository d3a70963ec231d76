#include "pmdiff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pmdiff {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

double AdamW::current_lr() const {
    if (cfg_.total_steps == 0) return cfg_.lr;
    const double progress = std::min(1.0, static_cast<double>(t_) / static_cast<double>(cfg_.total_steps));
    const double floor = cfg_.lr * cfg_.min_lr_ratio;
    return floor + (cfg_.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step() {
    const double lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor& param = params_[p];
        if (!param.has_grad()) continue;
        auto w = param.mutable_data();
        auto g = param.grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace pmdiff
