#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "micle/ops.hpp"
#include "micle/tensor.hpp"

namespace micle {

// Central finite-difference oracle for autodiff gradients. Evaluates the
// forward map from scratch at perturbed inputs, so it is independent of the
// backward rules it checks. float64 only.

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// f rebuilds the scalar loss from the given leaves on every call.
// rel err per element: |analytic - fd| / max(1, |analytic|, |fd|).
inline GradCheckReport finite_difference_check(
    const std::function<TensorD(const std::vector<TensorD>&)>& f, std::vector<TensorD> leaves,
    double h_scale = 1e-5) {
    TensorD loss = f(leaves);
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) {
        analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0));
    }
    GradCheckReport report;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        if (!leaf.requires_grad()) continue;
        for (std::size_t i = 0; i < leaf.size(); ++i) {
            const double theta = leaf.value()[i];
            const double h = h_scale * std::max(1.0, std::abs(theta));
            leaf.value()[i] = theta + h;
            const double fp = f(leaves).item();
            leaf.value()[i] = theta - h;
            const double fm = f(leaves).item();
            leaf.value()[i] = theta;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[li][i];
            const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.checked;
        }
    }
    return report;
}

}  // namespace micle
