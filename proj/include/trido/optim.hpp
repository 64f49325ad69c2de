#pragma once

#include "trido/params.hpp"

namespace trido {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of a single parameter from its current grad.
/// Throws ShapeError when the gradient does not match the parameter.
template <typename T>
void adam_update(Parameter<T>& p, const Tensor<T>& grad, double lr, const AdamConfig& cfg = {});

/// Applies adam_update to every trainable parameter of the store.
template <typename T>
void adam_step(ParamStore<T>& store, double lr, const AdamConfig& cfg = {});

/// Flat-then-linear-decay learning rate: `base` for epochs below `warm_epochs`,
/// then linear to zero at `total_epochs`.
struct LrSchedule {
    double base = 4e-4;
    int warm_epochs = 50;
    int total_epochs = 150;

    double at(int epoch) const;
};

double lr_at(int epoch);

}  // namespace trido
