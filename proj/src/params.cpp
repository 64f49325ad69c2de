#include "trido/params.hpp"

#include <stdexcept>

namespace trido {

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Parameter<T> p;
    p.name = name;
    p.first_moment = Tensor<T>(init.shape());
    p.second_moment = Tensor<T>(init.shape());
    p.var = Var<T>::leaf(std::move(init), true, name);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back().var;
}

template <typename T>
Var<T> ParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].var;
}

template <typename T>
Parameter<T>& ParamStore<T>::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second];
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.size();
    return n;
}

template <typename T>
void ParamStore<T>::set_trainable(const std::function<bool(const std::string&)>& pred, bool trainable) {
    for (auto& p : params_)
        if (pred(p.name)) {
            p.trainable = trainable;
            p.var.set_requires_grad(trainable);
        }
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
    return t;
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> normal_init(Shape, double, std::mt19937_64&);
template Tensor<double> normal_init(Shape, double, std::mt19937_64&);
template Tensor<float> uniform_init(Shape, double, std::mt19937_64&);
template Tensor<double> uniform_init(Shape, double, std::mt19937_64&);

}  // namespace trido
