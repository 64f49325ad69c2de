#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "trido/autograd.hpp"

namespace trido {

/// A named learnable tensor plus its Adam state.
template <typename T>
struct Parameter {
    std::string name;
    Var<T> var;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
    std::int64_t step = 0;
    bool trainable = true;
};

/// Ordered collection of parameters addressed by slash-separated names.
template <typename T>
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    /// Registers a new parameter. Throws std::invalid_argument on a duplicate name.
    Var<T> add(const std::string& name, Tensor<T> init);
    Var<T> get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Parameter<T>>& params() noexcept { return params_; }
    const std::vector<Parameter<T>>& params() const noexcept { return params_; }
    Parameter<T>& param(const std::string& name);

    void zero_grad();
    std::size_t scalar_count() const;

    /// Marks every parameter whose name satisfies `pred` as (non-)trainable.
    /// Non-trainable parameters are graph constants and skipped by Adam.
    void set_trainable(const std::function<bool(const std::string&)>& pred, bool trainable);

    /// Deep copy of values (and optimizer state) into another precision.
    template <typename U>
    void copy_into(ParamStore<U>& dst) const {
        for (const auto& p : params_) {
            auto v = dst.add(p.name, p.var.value().template cast<U>());
            auto& q = dst.param(p.name);
            q.first_moment = p.first_moment.template cast<U>();
            q.second_moment = p.second_moment.template cast<U>();
            q.step = p.step;
            q.trainable = p.trainable;
            v.set_requires_grad(p.trainable);
        }
    }

private:
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Initialisers drawing from an explicit engine.
template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng);
template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, std::mt19937_64& rng);

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace trido
