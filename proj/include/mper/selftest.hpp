#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace mper {

struct SelfTestCheck {
    std::string name;
    double max_error = 0.0;  // worst relative (gradients) or absolute (oracles) error
    double tolerance = 0.0;
    bool passed = false;
};

struct SelfTestOptions {
    std::uint64_t seed = 0;
    std::size_t seeds_per_check = 5;
    // Debug hook: scales every analytic gradient by 2 before comparison.
    bool inject_gradient_fault = false;
};

/// Finite-difference checks of every differentiable op and loss, followed by
/// brute-force oracles for the classifier, losses, bank update and metrics.
std::vector<SelfTestCheck> run_selftest(const SelfTestOptions& options = {});

bool all_passed(const std::vector<SelfTestCheck>& checks);
void write_selftest_report(std::ostream& os, const std::vector<SelfTestCheck>& checks);

}  // namespace mper
