#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "trido/autograd.hpp"

namespace trido {

/// Outcome of comparing reverse-mode gradients with central differences.
/// `max_rel_error` is max|analytic - numeric| / max(max|analytic|, max|numeric|)
/// over the probed coordinates (0 when both gradients vanish).
struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    double grad_scale = 0.0;
    std::size_t coordinates = 0;
};

/// One probed coordinate: a leaf variable and a flat index into it.
struct GradProbe {
    Var<double> leaf;
    std::size_t index;
};

/// Checks d loss / d probe for every probe. `loss` must rebuild the graph on
/// each call. Throws std::runtime_error on non-finite loss values.
GradCheckResult grad_check(const std::function<Var<double>()>& loss, const std::vector<GradProbe>& probes,
                           double h = 1e-5);

/// Convenience form: scalar-valued f of one tensor, all coordinates probed.
GradCheckResult grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                           double h = 1e-5);

}  // namespace trido
