#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mper::ad {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at worst_index
    double numeric = 0.0;   // at worst_index

    [[nodiscard]] bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

using ScalarFn = std::function<double(std::span<const double>)>;

/// Compares an analytic gradient against central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), coordinate by coordinate.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6). eps must lie in [1e-6, 1e-2].
GradCheckResult fd_check(const ScalarFn& f, std::span<const double> x,
                         std::span<const double> analytic, double eps = 1e-4);

}  // namespace mper::ad
