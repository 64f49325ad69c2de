#include "trido/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trido {

namespace {

double eval(const std::function<Var<double>()>& loss) {
    Var<double> out = loss();
    if (out.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    const double v = out.value()[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite function value");
    return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var<double>()>& loss, const std::vector<GradProbe>& probes,
                           double h) {
    for (const auto& p : probes) {
        if (!p.leaf.requires_grad()) throw std::invalid_argument("grad_check: probe leaf does not require grad");
        Var<double> leaf = p.leaf;
        leaf.zero_grad();
    }
    {
        Var<double> out = loss();
        if (!std::isfinite(out.value()[0])) throw std::runtime_error("grad_check: non-finite function value");
        backward(out);
    }
    std::vector<double> analytic, numeric;
    analytic.reserve(probes.size());
    numeric.reserve(probes.size());
    for (const auto& p : probes) {
        Var<double> leaf = p.leaf;
        analytic.push_back(leaf.grad().size() ? leaf.grad()[p.index] : 0.0);
        double& x = leaf.mutable_value()[p.index];
        const double saved = x;
        x = saved + h;
        const double fp = eval(loss);
        x = saved - h;
        const double fm = eval(loss);
        x = saved;
        numeric.push_back((fp - fm) / (2.0 * h));
    }
    GradCheckResult r;
    r.coordinates = probes.size();
    for (std::size_t i = 0; i < probes.size(); ++i) {
        r.grad_scale = std::max({r.grad_scale, std::abs(analytic[i]), std::abs(numeric[i])});
        r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric[i]));
    }
    r.max_rel_error = r.grad_scale > 0 ? r.max_abs_error / r.grad_scale : 0.0;
    return r;
}

GradCheckResult grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                           double h) {
    Var<double> leaf = Var<double>::leaf(x, true, "x");
    std::vector<GradProbe> probes;
    probes.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) probes.push_back({leaf, i});
    return grad_check([&] { return f(leaf); }, probes, h);
}

}  // namespace trido
