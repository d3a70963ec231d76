#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pmdiff/tensor.hpp"

namespace pmdiff {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckOptions {
    double rel_tol = 1e-4;
    double step = 1e-5;
    // Entries with |analytic| and |numeric| both below this are compared
    // against it instead of their own magnitude.
    double abs_floor = 1e-6;
    // Per-parameter cap on probed entries (0 = every entry). Probed entries
    // are drawn without replacement from a seeded RNG.
    std::size_t max_entries_per_param = 0;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t probed = 0;
    double max_rel_error = 0.0;
    double max_abs_grad = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double rel_tol = 0.0;
    bool passed = true;

    /// Names of the parameters that exceeded the tolerance.
    std::vector<std::string> failures() const;
};

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences for every named parameter. `loss_fn` must rebuild the graph
/// from the current parameter values on each call and return a scalar.
/// Throws std::invalid_argument when more than 10^4 entries would be probed.
GradCheckReport gradient_check(const std::function<Tensor(Graph&)>& loss_fn, const std::vector<NamedTensor>& params,
                               const GradCheckOptions& opt = {});

}  // namespace pmdiff
