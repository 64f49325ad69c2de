#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trido {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown for extent/rank mismatches between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor with value semantics.
// Storage aligned to a full cache line. Vectorised kernels pick their loop
// peeling from the start address, so a fixed alignment keeps float sums
// independent of where the heap happened to place a buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tensor {
public:
    using value_type = T;
    using Storage = AlignedVector<T>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }

    const Shape& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    Storage& vec() noexcept { return data_; }
    const Storage& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::initializer_list<std::int64_t> idx);
    const T& at(std::initializer_list<std::int64_t> idx) const;

    /// Same data, new extents; element count must match.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(T v);
    bool all_finite() const;

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::initializer_list<std::int64_t> idx) const;

    Shape shape_;
    Storage data_;
};

/// Complex view over a real tensor whose trailing extent is 2 (re, im interleaved).
template <typename T>
class ComplexTensor {
public:
    ComplexTensor() = default;
    explicit ComplexTensor(Tensor<T> interleaved);
    explicit ComplexTensor(const Shape& complex_shape);

    /// Logical (complex) extents, i.e. without the trailing 2.
    Shape shape() const;
    std::size_t size() const noexcept { return storage_.size() / 2; }

    T& re(std::size_t i) { return storage_[2 * i]; }
    T& im(std::size_t i) { return storage_[2 * i + 1]; }
    T re(std::size_t i) const { return storage_[2 * i]; }
    T im(std::size_t i) const { return storage_[2 * i + 1]; }

    const Tensor<T>& interleaved() const noexcept { return storage_; }
    Tensor<T>& interleaved() noexcept { return storage_; }

private:
    Tensor<T> storage_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class ComplexTensor<float>;
extern template class ComplexTensor<double>;

}  // namespace trido
