#include "pmdiff/trainer.hpp"

#include <cblas.h>

#include <chrono>
#include <numeric>
#include <random>
#include <stdexcept>

#include "pmdiff/metrics.hpp"
#include "pmdiff/pipeline.hpp"

namespace pmdiff {

void set_compute_threads(int threads) { openblas_set_num_threads(threads < 1 ? 1 : threads); }

void TrainerConfig::validate() const {
    if (batch == 0) throw std::invalid_argument("trainer: batch must be positive");
    if (!(pretrain_lr > 0.0) || !(conditional_lr > 0.0)) throw std::invalid_argument("trainer: learning rates must be positive");
    if (probe_size == 0) throw std::invalid_argument("trainer: probe_size must be positive");
    if (log_every == 0) throw std::invalid_argument("trainer: log_every must be positive");
    if (probe_every % log_every != 0) throw std::invalid_argument("trainer: probe_every must be a multiple of log_every");
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<Tensor> collect(const std::vector<NamedTensor>& named) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

// Cycles through shuffled epochs so every example is seen once per pass.
class BatchSampler {
   public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }
    std::vector<std::size_t> next(std::size_t k) {
        std::vector<std::size_t> out;
        while (out.size() < k) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

   private:
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
    std::size_t pos_ = 0;
};

std::vector<const TrainSample*> pick(const std::vector<TrainSample>& data, const std::vector<std::size_t>& idx) {
    std::vector<const TrainSample*> out;
    for (auto i : idx) out.push_back(&data[i]);
    return out;
}

std::vector<const TrainSample*> probe_batch(const std::vector<TrainSample>& data, std::size_t size) {
    std::vector<const TrainSample*> out;
    for (std::size_t i = 0; i < std::min(size, data.size()); ++i) out.push_back(&data[i]);
    return out;
}

// Stratified timesteps so the probe loss does not hinge on a few lucky draws.
NoiseDraw probe_noise(std::size_t n, const ModelConfig& mc, const DiffusionSchedule& schedule, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    NoiseDraw d = draw_noise(n, mc, schedule, rng);
    for (std::size_t i = 0; i < n; ++i)
        d.taus[i] = static_cast<double>(1 + (i * schedule.steps()) / n + (schedule.steps() / (2 * n)));
    for (auto& t : d.taus) t = std::min(t, static_cast<double>(schedule.steps()));
    return d;
}

void require_data(const std::vector<TrainSample>& data, const char* who) {
    if (data.empty()) throw std::invalid_argument(std::string(who) + ": no training data");
}

}  // namespace

PhaseResult pretrain_base(ModelParams& params, const std::vector<TrainSample>& data, const DiffusionSchedule& schedule,
                          const TrainerConfig& cfg, const StepCallback& on_log) {
    cfg.validate();
    require_data(data, "pretrain_base");
    params.set_requires_grad("", false);
    params.set_requires_grad("base.", true);
    AdamW opt(collect(params.base()), AdamWConfig{.lr = cfg.pretrain_lr, .weight_decay = 0.0,
                                                  .total_steps = cfg.pretrain_steps, .min_lr_ratio = 0.1});
    const auto probe = probe_batch(data, cfg.probe_size);
    const NoiseDraw probe_draw = probe_noise(probe.size(), params.config, schedule, cfg.seed ^ 0xb45e);
    PhaseResult res;
    res.probe_loss_initial = base_loss(params, probe, probe_draw, schedule);
    BatchSampler sampler(data.size(), cfg.seed);
    std::mt19937_64 rng(cfg.seed + 1);
    const auto start = Clock::now();
    for (std::size_t step = 0; step < cfg.pretrain_steps; ++step) {
        std::vector<Tensor> images;
        for (auto i : sampler.next(cfg.batch)) images.push_back(data[i].z_target);
        const NoiseDraw noise = draw_noise(cfg.batch, params.config, schedule, rng);
        const double loss = pretrain_step(params, stack_batch(images), noise, schedule, opt);
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.pretrain_steps) {
            TrainLogRecord r{step + 1, loss, opt.current_lr(),
                             std::chrono::duration<double, std::milli>(Clock::now() - start).count(), "pretrain", std::nullopt};
            if (cfg.probe_every && (step + 1) % cfg.probe_every == 0)
                r.probe_loss = base_loss(params, probe, probe_draw, schedule);
            res.history.push_back(r);
            if (on_log) on_log(r);
        }
    }
    params.set_requires_grad("base.", false);
    res.probe_loss_final = base_loss(params, probe, probe_draw, schedule);
    return res;
}

PhaseResult train_conditional(ModelParams& params, const std::vector<TrainSample>& data,
                              const DiffusionSchedule& schedule, const TrainerConfig& cfg,
                              const StepCallback& on_log) {
    cfg.validate();
    require_data(data, "train_conditional");
    reset_conditional(params);
    params.set_requires_grad("", false);
    for (const char* prefix : {"cn.", "zc.", "ref."}) params.set_requires_grad(prefix, true);
    AdamW opt(collect(params.trainable()), AdamWConfig{.lr = cfg.conditional_lr, .weight_decay = 0.0,
                                                       .total_steps = cfg.conditional_steps, .min_lr_ratio = 0.1});
    const auto probe = probe_batch(data, cfg.probe_size);
    const NoiseDraw probe_draw = probe_noise(probe.size(), params.config, schedule, cfg.seed ^ 0xc0de);
    PhaseResult res;
    res.probe_loss_initial = conditional_loss(params, probe, probe_draw, schedule);
    BatchSampler sampler(data.size(), cfg.seed + 2);
    std::mt19937_64 rng(cfg.seed + 3);
    const auto start = Clock::now();
    for (std::size_t step = 0; step < cfg.conditional_steps; ++step) {
        const auto batch = pick(data, sampler.next(cfg.batch));
        const NoiseDraw noise = draw_noise(cfg.batch, params.config, schedule, rng);
        const double loss = train_step(params, batch, noise, schedule, opt);
        if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.conditional_steps) {
            TrainLogRecord r{step + 1, loss, opt.current_lr(),
                             std::chrono::duration<double, std::milli>(Clock::now() - start).count(), "conditional", std::nullopt};
            if (cfg.probe_every && (step + 1) % cfg.probe_every == 0)
                r.probe_loss = conditional_loss(params, probe, probe_draw, schedule);
            res.history.push_back(r);
            if (on_log) on_log(r);
        }
    }
    params.set_requires_grad("", false);
    res.probe_loss_final = conditional_loss(params, probe, probe_draw, schedule);
    return res;
}

std::vector<Tensor> sample_targets(const ModelParams& params, const std::vector<TrainSample>& data,
                                   const std::vector<std::size_t>& reference_of, const DiffusionSchedule& schedule,
                                   std::size_t steps, std::uint64_t seed) {
    if (reference_of.size() != data.size()) throw std::invalid_argument("sample_targets: one reference per example");
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ref = data.at(reference_of[i]);
        const EpsFn fn = conditional_eps_fn(params, data[i].enc_target, {{ref.z_reference, ref.enc_reference}});
        out.push_back(ddim_sample(fn, data[i].z_target.shape(), schedule, steps, seed + i));
    }
    return out;
}

ConditioningReport conditioning_gap(const ModelParams& params, const std::vector<TrainSample>& data,
                                    const DiffusionSchedule& schedule, std::size_t steps, std::uint64_t seed) {
    if (data.size() < 2) throw std::invalid_argument("conditioning_gap: need at least two examples");
    std::vector<std::size_t> same(data.size()), shifted(data.size());
    std::iota(same.begin(), same.end(), std::size_t{0});
    // a cyclic shift is a derangement: no example keeps its own reference
    for (std::size_t i = 0; i < data.size(); ++i) shifted[i] = (i + 1) % data.size();
    const auto good = sample_targets(params, data, same, schedule, steps, seed);
    const auto bad = sample_targets(params, data, shifted, schedule, steps, seed);
    ConditioningReport rep;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Image gt = tensor_to_image(data[i].z_target);
        rep.psnr_correct += psnr(tensor_to_image(good[i]), gt);
        rep.psnr_shuffled += psnr(tensor_to_image(bad[i]), gt);
    }
    rep.psnr_correct /= static_cast<double>(data.size());
    rep.psnr_shuffled /= static_cast<double>(data.size());
    return rep;
}

}  // namespace pmdiff
