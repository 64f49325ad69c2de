#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trido/gradcheck.hpp"

namespace trido {

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kCompositeTolerance = 1e-3;

struct GradSuiteEntry {
    std::string name;
    double tolerance = kOpTolerance;
    GradCheckResult result;
    bool passed = false;
    double seconds = 0;
};

/// Names in run order. With `inject_fault` an extra "injected_fault" entry
/// (an op whose backward is deliberately wrong) is appended.
std::vector<std::string> grad_suite_names(bool inject_fault = false);

/// 64-bit central-difference check of every differentiable operation, the
/// encoder block, window attention, both networks and all losses.
std::vector<GradSuiteEntry> run_grad_suite(bool inject_fault = false,
                                           const std::function<void(const GradSuiteEntry&)>& on_result = {});

}  // namespace trido
