#include "mper/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mper::ad {

GradCheckResult fd_check(const ScalarFn& f, std::span<const double> x,
                         std::span<const double> analytic, double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-2)) throw std::invalid_argument("fd_check: eps outside [1e-6, 1e-2]");
    if (x.size() != analytic.size()) throw std::invalid_argument("fd_check: gradient length mismatch");
    GradCheckResult result;
    std::vector<double> probe(x.begin(), x.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + eps;
        const double up = f(probe);
        probe[i] = x[i] - eps;
        const double down = f(probe);
        probe[i] = x[i];
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        if (i == 0 || rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_index = i;
            result.analytic = a;
            result.numeric = numeric;
        }
    }
    return result;
}

}  // namespace mper::ad
