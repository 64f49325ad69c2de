#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "trido/autograd.hpp"

namespace testing {

using trido::Shape;
using trido::Tensor;
using trido::Var;

template <typename T = double>
Tensor<T> randn(Shape s, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Tensor<T> t(std::move(s));
    for (auto& v : t.span()) v = static_cast<T>(n(rng));
    return t;
}

template <typename T = double>
Tensor<T> uniform(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(std::move(s));
    for (auto& v : t.span()) v = static_cast<T>(u(rng));
    return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <typename T>
double max_abs(const Tensor<T>& a) {
    double m = 0;
    for (auto v : a.span()) m = std::max(m, std::abs(double(v)));
    return m;
}

inline Var<double> cst(Tensor<double> t) { return Var<double>::constant(std::move(t)); }
inline Var<double> lf(Tensor<double> t) { return Var<double>::leaf(std::move(t), true); }

}  // namespace testing
