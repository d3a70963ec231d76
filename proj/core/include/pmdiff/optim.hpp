#pragma once

#include <cstddef>
#include <vector>

#include "pmdiff/tensor.hpp"

namespace pmdiff {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    // Cosine decay from lr to lr * min_lr_ratio over total_steps; 0 disables.
    std::size_t total_steps = 0;
    double min_lr_ratio = 0.0;
};

/// Adam with decoupled weight decay. Reads .grad from each parameter and
/// updates values in place.
class AdamW {
   public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg);

    void step();
    void zero_grad();
    double current_lr() const;
    std::size_t steps_taken() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

   private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamWConfig cfg_;
    std::size_t t_ = 0;
};

}  // namespace pmdiff
