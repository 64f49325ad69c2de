#pragma once

#include <Eigen/Core>

#include "trido/autograd.hpp"

namespace trido::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
inline bool wants(const NodePtr<T>& p) {
    return p && p->requires_grad;
}

template <typename T>
inline void accumulate(Node<T>& dst, const Tensor<T>& g) {
    auto& buf = dst.grad_buffer();
    T* d = buf.data();
    const T* s = g.data();
    for (std::size_t i = 0; i < buf.size(); ++i) d[i] += s[i];
}

}  // namespace trido::detail
