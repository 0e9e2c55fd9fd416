#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bionic/tensor.hpp"

namespace bionic {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t entries_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0.0;
    bool ok(double tol) const { return max_rel_err <= tol; }
    std::string summary() const;
};

// Central finite differences against the tape's analytic gradients, in
// 64-bit. `func` rebuilds a fresh graph from the captured tensors and returns
// a scalar; `wrt` lists (name, tensor) pairs to differentiate against. Large
// tensors are checked on a deterministic sample of entries.
GradCheckReport grad_check(const std::function<Tensor<double>()>& func,
                           const std::vector<std::pair<std::string, Tensor<double>>>& wrt,
                           double h = 1e-5, int max_entries_per_group = 24,
                           std::uint64_t sample_seed = 7);

}  // namespace bionic
