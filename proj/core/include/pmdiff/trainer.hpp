#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmdiff/microdiff.hpp"

namespace pmdiff {

/// Limits the BLAS worker pool. Oversubscribing a single core costs far more
/// than it gains, so callers pass the real core budget.
void set_compute_threads(int threads);

struct TrainerConfig {
    std::size_t pretrain_steps = 2000;
    std::size_t conditional_steps = 500;
    std::size_t batch = 8;
    double pretrain_lr = 2e-3;
    double conditional_lr = 1e-4;
    std::uint64_t seed = 7;
    std::size_t log_every = 50;
    std::size_t probe_size = 16;  // fixed batch used to measure the loss curve
    std::size_t probe_every = 0;  // 0 measures it only before and after a phase

    void validate() const;
};

struct PhaseResult {
    double probe_loss_initial = 0.0;
    double probe_loss_final = 0.0;
    std::vector<TrainLogRecord> history;
};

using StepCallback = std::function<void(const TrainLogRecord&)>;

/// Trains the base denoiser on the target images of `data`. Only "base."
/// parameters receive gradients.
PhaseResult pretrain_base(ModelParams& params, const std::vector<TrainSample>& data, const DiffusionSchedule& schedule,
                          const TrainerConfig& cfg, const StepCallback& on_log = {});

/// Re-derives the conditional branches from the base, freezes the base and
/// trains "cn.", "zc." and "ref." on the paired data. The probe loss is the
/// conditional eps error on a fixed batch with fixed noise.
PhaseResult train_conditional(ModelParams& params, const std::vector<TrainSample>& data,
                              const DiffusionSchedule& schedule, const TrainerConfig& cfg,
                              const StepCallback& on_log = {});

/// Samples the target view of each example with `reference_of[i]` as its
/// reference (image and geometry). Returns [1,3,H,W] tensors in [-1,1].
std::vector<Tensor> sample_targets(const ModelParams& params, const std::vector<TrainSample>& data,
                                   const std::vector<std::size_t>& reference_of, const DiffusionSchedule& schedule,
                                   std::size_t steps, std::uint64_t seed);

struct ConditioningReport {
    double psnr_correct = 0.0;   // mean over examples
    double psnr_shuffled = 0.0;  // reference swapped with another example's
    double gap() const { return psnr_correct - psnr_shuffled; }
};

/// Mean target-view PSNR with the matching reference versus a deranged one.
/// The swap moves the reference image together with its geometry encoding.
ConditioningReport conditioning_gap(const ModelParams& params, const std::vector<TrainSample>& data,
                                    const DiffusionSchedule& schedule, std::size_t steps, std::uint64_t seed);

}  // namespace pmdiff
