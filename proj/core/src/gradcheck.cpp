#include "pmdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pmdiff {

std::vector<std::string> GradCheckReport::failures() const {
    std::vector<std::string> out;
    for (const auto& e : entries) {
        if (!e.passed) out.push_back(e.name);
    }
    return out;
}

GradCheckReport gradient_check(const std::function<Tensor(Graph&)>& loss_fn, const std::vector<NamedTensor>& params,
                               const GradCheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    std::vector<std::vector<std::size_t>> probes;
    std::size_t total = 0;
    for (const auto& [name, t] : params) {
        std::vector<std::size_t> idx(t.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (opt.max_entries_per_param && idx.size() > opt.max_entries_per_param) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opt.max_entries_per_param);
            std::sort(idx.begin(), idx.end());
        }
        total += idx.size();
        probes.push_back(std::move(idx));
    }
    if (total > 10000) throw std::invalid_argument("gradient_check: " + std::to_string(total) + " entries > 1e4");

    std::vector<Tensor> live;
    std::vector<bool> was_trainable;
    for (const auto& [name, t] : params) {
        live.push_back(t);
        was_trainable.push_back(t.requires_grad());
        live.back().set_requires_grad(true);
        live.back().zero_grad();
    }
    {
        Graph g;
        Tensor loss = loss_fn(g);
        g.backward(loss);
    }

    GradCheckReport report;
    report.rel_tol = opt.rel_tol;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor t = live[p];
        GradCheckEntry e;
        e.name = params[p].first;
        std::vector<double> analytic(t.grad().begin(), t.grad().end());
        for (std::size_t i : probes[p]) {
            double& v = t.mutable_data()[i];
            const double orig = v;
            v = orig + opt.step;
            double up, down;
            {
                Graph g;
                up = loss_fn(g).item();
            }
            v = orig - opt.step;
            {
                Graph g;
                down = loss_fn(g).item();
            }
            v = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
            e.max_rel_error = std::max(e.max_rel_error, std::abs(a - numeric) / denom);
            e.max_abs_grad = std::max(e.max_abs_grad, std::abs(a));
            ++e.probed;
        }
        e.passed = e.max_rel_error <= opt.rel_tol;
        report.passed = report.passed && e.passed;
        report.entries.push_back(e);
    }
    for (std::size_t p = 0; p < live.size(); ++p) {
        live[p].zero_grad();
        live[p].set_requires_grad(was_trainable[p]);
    }
    return report;
}

}  // namespace pmdiff
