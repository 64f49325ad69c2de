#include "trido/tensor.hpp"

#include <cmath>
#include <sstream>

namespace trido {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw ShapeError("negative extent in " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<std::int64_t>(data_.size()) != numel(shape_))
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
        if (i < 0 || i >= shape_[axis]) throw std::out_of_range("index out of range");
        off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::int64_t> idx) {
    return data_[offset(idx)];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::int64_t> idx) const {
    return data_[offset(idx)];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
    if (numel(shape) != static_cast<std::int64_t>(data_.size()))
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
    return std::move(*this);
}

template <typename T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
ComplexTensor<T>::ComplexTensor(Tensor<T> interleaved) : storage_(std::move(interleaved)) {
    if (storage_.rank() == 0 || storage_.shape().back() != 2)
        throw ShapeError("complex storage needs a trailing extent of 2, got " + shape_str(storage_.shape()));
}

template <typename T>
ComplexTensor<T>::ComplexTensor(const Shape& complex_shape) {
    Shape s = complex_shape;
    s.push_back(2);
    storage_ = Tensor<T>(std::move(s));
}

template <typename T>
Shape ComplexTensor<T>::shape() const {
    Shape s = storage_.shape();
    if (!s.empty()) s.pop_back();
    return s;
}

template class Tensor<float>;
template class Tensor<double>;
template class ComplexTensor<float>;
template class ComplexTensor<double>;

}  // namespace trido
