#include "mper/losses.hpp"

namespace mper {

double ramp_lambda(const RampSchedule& sched) {
    if (sched.length == 0) throw std::invalid_argument("ramp_lambda: ramp length must be >= 1");
    const double progress = double(std::min(sched.iteration, sched.length)) / double(sched.length);
    const double gap = 1.0 - progress;
    return std::exp(-5.0 * gap * gap);
}

LossBreakdown total_loss(double l_lin, double l_proto, double l_cont, double lambda, double gamma) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("total_loss: lambda must lie in [0, 1]");
    if (!(gamma >= 0.0)) throw std::invalid_argument("total_loss: gamma must be >= 0");
    LossBreakdown b{l_lin, l_proto, l_cont, lambda, gamma, 0.0};
    b.total = l_lin + lambda * (l_proto + gamma * l_cont);
    if (!std::isfinite(b.total)) throw NonFiniteError("total_loss: non-finite objective");
    return b;
}

}  // namespace mper
