#include "trido/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trido {

template <typename T>
void adam_update(Parameter<T>& p, const Tensor<T>& grad, double lr, const AdamConfig& cfg) {
    Tensor<T>& value = p.var.mutable_value();
    if (grad.shape() != value.shape())
        throw ShapeError("adam: gradient " + shape_str(grad.shape()) + " does not match parameter " + p.name + " " +
                         shape_str(value.shape()));
    if (p.first_moment.shape() != value.shape()) p.first_moment = Tensor<T>(value.shape());
    if (p.second_moment.shape() != value.shape()) p.second_moment = Tensor<T>(value.shape());
    ++p.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg.eps);
    T* w = value.data();
    T* m = p.first_moment.data();
    T* v = p.second_moment.data();
    const T* g = grad.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
}

template <typename T>
void adam_step(ParamStore<T>& store, double lr, const AdamConfig& cfg) {
    for (auto& p : store.params()) {
        if (!p.trainable) continue;
        const Tensor<T>& g = p.var.grad();
        if (g.size() == 0) continue;  // never reached by any backward pass
        adam_update(p, g, lr, cfg);
    }
}

double LrSchedule::at(int epoch) const {
    if (epoch < 0) throw std::invalid_argument("negative epoch");
    if (epoch < warm_epochs) return base;
    const int decay = total_epochs - warm_epochs;
    if (decay <= 0) return 0.0;
    const int remaining = std::max(0, total_epochs - epoch);
    return base * static_cast<double>(remaining) / static_cast<double>(decay);
}

double lr_at(int epoch) { return LrSchedule{}.at(epoch); }

template void adam_update(Parameter<float>&, const Tensor<float>&, double, const AdamConfig&);
template void adam_update(Parameter<double>&, const Tensor<double>&, double, const AdamConfig&);
template void adam_step(ParamStore<float>&, double, const AdamConfig&);
template void adam_step(ParamStore<double>&, double, const AdamConfig&);

}  // namespace trido
