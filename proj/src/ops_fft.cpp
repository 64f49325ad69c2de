#include <cmath>
#include <numbers>

#include "eigen_util.hpp"
#include "trido/ops.hpp"

// Half-spectrum 2D DFT done as dense matrix products against cos/sin tables.
// Extents here are small (<= 128), so the O(N^3) matrix route is competitive
// with an FFT and keeps the forward and adjoint paths symmetric.
namespace trido::fft {

using detail::ConstMatMap;
using detail::MatMap;
using detail::RowMat;

namespace {

template <typename T>
T angle(std::int64_t a, std::int64_t b, std::int64_t n) {
    return static_cast<T>(2.0 * std::numbers::pi * static_cast<double>((a * b) % n) / static_cast<double>(n));
}

// [n, n] tables cos(2 pi a b / n), sin(2 pi a b / n)
template <typename T>
void square_tables(std::int64_t n, RowMat<T>& c, RowMat<T>& s) {
    c.resize(n, n);
    s.resize(n, n);
    for (std::int64_t a = 0; a < n; ++a)
        for (std::int64_t b = 0; b < n; ++b) {
            const double t = angle<double>(a, b, n);
            c(a, b) = static_cast<T>(std::cos(t));
            s(a, b) = static_cast<T>(std::sin(t));
        }
}

struct Dims {
    std::int64_t channels, height, width, half;
};

// Forward analysis of real x [C,H,W] into planar half spectra re/im [C,H,Wr].
template <typename T>
void analysis(const T* x, const Dims& d, T* re, T* im) {
    const std::int64_t rows = d.channels * d.height;
    RowMat<T> cw(d.width, d.half), sw(d.width, d.half);
    for (std::int64_t n = 0; n < d.width; ++n)
        for (std::int64_t k = 0; k < d.half; ++k) {
            const double t = angle<double>(n, k, d.width);
            cw(n, k) = static_cast<T>(std::cos(t));
            sw(n, k) = static_cast<T>(-std::sin(t));
        }
    ConstMatMap<T> X(x, rows, d.width);
    RowMat<T> yr = X * cw;
    RowMat<T> yi = X * sw;
    RowMat<T> ch, sh;
    square_tables(d.height, ch, sh);
    const std::int64_t plane = d.height * d.half;
    for (std::int64_t c = 0; c < d.channels; ++c) {
        auto Yr = yr.middleRows(c * d.height, d.height);
        auto Yi = yi.middleRows(c * d.height, d.height);
        MatMap<T> Zr(re + c * plane, d.height, d.half);
        MatMap<T> Zi(im + c * plane, d.height, d.half);
        Zr.noalias() = ch * Yr;
        Zr.noalias() += sh * Yi;
        Zi.noalias() = ch * Yi;
        Zi.noalias() -= sh * Yr;
    }
}

// x[n1,n2] = Re sum_{k1,k2} w[k2] X[k1,k2] exp(+i 2 pi (k1 n1 / H + k2 n2 / W)).
template <typename T>
void synthesis(const T* re, const T* im, const Dims& d, const AlignedVector<T>& weight, T* x) {
    RowMat<T> ch, sh;
    square_tables(d.height, ch, sh);
    const std::int64_t rows = d.channels * d.height;
    const std::int64_t plane = d.height * d.half;
    RowMat<T> ur(rows, d.half), ui(rows, d.half);
    for (std::int64_t c = 0; c < d.channels; ++c) {
        ConstMatMap<T> Xr(re + c * plane, d.height, d.half);
        ConstMatMap<T> Xi(im + c * plane, d.height, d.half);
        auto Ur = ur.middleRows(c * d.height, d.height);
        auto Ui = ui.middleRows(c * d.height, d.height);
        Ur.noalias() = ch * Xr;
        Ur.noalias() -= sh * Xi;
        Ui.noalias() = ch * Xi;
        Ui.noalias() += sh * Xr;
    }
    RowMat<T> cw(d.half, d.width), sw(d.half, d.width);
    for (std::int64_t k = 0; k < d.half; ++k)
        for (std::int64_t n = 0; n < d.width; ++n) {
            const double t = angle<double>(k, n, d.width);
            cw(k, n) = static_cast<T>(weight[k] * std::cos(t));
            sw(k, n) = static_cast<T>(weight[k] * std::sin(t));
        }
    MatMap<T> X(x, rows, d.width);
    X.noalias() = ur * cw;
    X.noalias() -= ui * sw;
}

template <typename T>
Dims real_dims(const Shape& s) {
    if (s.size() != 3) throw ShapeError("rdft2 expects [C,H,W], got " + shape_str(s));
    return {s[0], s[1], s[2], s[2] / 2 + 1};
}

template <typename T>
void interleave(const AlignedVector<T>& re, const AlignedVector<T>& im, T* out) {
    for (std::size_t i = 0; i < re.size(); ++i) {
        out[2 * i] = re[i];
        out[2 * i + 1] = im[i];
    }
}

template <typename T>
void deinterleave(const T* in, std::size_t n, AlignedVector<T>& re, AlignedVector<T>& im) {
    re.resize(n);
    im.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        re[i] = in[2 * i];
        im[i] = in[2 * i + 1];
    }
}

template <typename T>
AlignedVector<T> inverse_weights(const Dims& d) {
    AlignedVector<T> w(static_cast<std::size_t>(d.half));
    const T inv = T(1) / static_cast<T>(d.height * d.width);
    for (std::int64_t k = 0; k < d.half; ++k) w[k] = static_cast<T>(half_spectrum_weight(k, d.width)) * inv;
    return w;
}

template <typename T>
Dims spectrum_dims(const Shape& s, std::int64_t height, std::int64_t width) {
    if (s.size() != 4 || s[3] != 2) throw ShapeError("irdft2 expects [C,H,W/2+1,2], got " + shape_str(s));
    if (height <= 0 || width <= 0 || s[1] != height || s[2] != width / 2 + 1)
        throw ShapeError("irdft2: spectrum " + shape_str(s) + " does not match declared " + std::to_string(height) +
                         "x" + std::to_string(width));
    return {s[0], height, width, width / 2 + 1};
}

}  // namespace

template <typename T>
ComplexTensor<T> rdft2(const Tensor<T>& x) {
    const Dims d = real_dims<T>(x.shape());
    const auto n = static_cast<std::size_t>(d.channels * d.height * d.half);
    AlignedVector<T> re(n), im(n);
    analysis(x.data(), d, re.data(), im.data());
    ComplexTensor<T> out(Shape{d.channels, d.height, d.half});
    interleave(re, im, out.interleaved().data());
    return out;
}

template <typename T>
Tensor<T> irdft2(const ComplexTensor<T>& spectrum, std::int64_t height, std::int64_t width) {
    const Dims d = spectrum_dims<T>(spectrum.interleaved().shape(), height, width);
    AlignedVector<T> re, im;
    deinterleave(spectrum.interleaved().data(), spectrum.size(), re, im);
    Tensor<T> out({d.channels, height, width});
    synthesis(re.data(), im.data(), d, inverse_weights<T>(d), out.data());
    return out;
}

template ComplexTensor<float> rdft2(const Tensor<float>&);
template ComplexTensor<double> rdft2(const Tensor<double>&);
template Tensor<float> irdft2(const ComplexTensor<float>&, std::int64_t, std::int64_t);
template Tensor<double> irdft2(const ComplexTensor<double>&, std::int64_t, std::int64_t);

}  // namespace trido::fft

namespace trido::ops {

using detail::wants;

template <typename T>
Var<T> rdft2(const Var<T>& x) {
    ComplexTensor<T> spec = fft::rdft2(x.value());
    return make_result<T>("rdft2", std::move(spec.interleaved()), {x.node()}, [](Node<T>& self) {
        // Adjoint of the half-spectrum analysis: synthesis with unit weights.
        const Shape& xs = self.parents[0]->value.shape();
        const fft::Dims d{xs[0], xs[1], xs[2], xs[2] / 2 + 1};
        AlignedVector<T> re, im;
        fft::deinterleave(self.grad.data(), self.grad.size() / 2, re, im);
        Tensor<T> gx(xs);
        fft::synthesis(re.data(), im.data(), d, AlignedVector<T>(static_cast<std::size_t>(d.half), T(1)), gx.data());
        detail::accumulate(*self.parents[0], gx);
    });
}

template <typename T>
Var<T> irdft2(const Var<T>& spectrum, std::int64_t height, std::int64_t width) {
    Tensor<T> out = fft::irdft2(ComplexTensor<T>(spectrum.value()), height, width);
    return make_result<T>("irdft2", std::move(out), {spectrum.node()}, [](Node<T>& self) {
        // Adjoint: weighted forward analysis of the incoming gradient.
        const Shape& s = self.value.shape();
        const fft::Dims d{s[0], s[1], s[2], s[2] / 2 + 1};
        const auto n = static_cast<std::size_t>(d.channels * d.height * d.half);
        AlignedVector<T> re(n), im(n);
        fft::analysis(self.grad.data(), d, re.data(), im.data());
        const auto w = fft::inverse_weights<T>(d);
        T* g = self.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < n; ++i) {
            const T wk = w[i % static_cast<std::size_t>(d.half)];
            g[2 * i] += wk * re[i];
            g[2 * i + 1] += wk * im[i];
        }
    });
}

template <typename T>
Var<T> spectral_filter(const Var<T>& spectrum, const Var<T>& filter) {
    Shape expect = filter.shape();
    expect.push_back(2);
    if (spectrum.shape() != expect)
        throw ShapeError("spectral_filter: filter " + shape_str(filter.shape()) + " does not match spectrum " +
                         shape_str(spectrum.shape()));
    Tensor<T> out = spectrum.value();
    const T* a = filter.value().data();
    for (std::size_t i = 0; i < filter.size(); ++i) {
        out[2 * i] *= a[i];
        out[2 * i + 1] *= a[i];
    }
    return make_result<T>("spectral_filter", std::move(out), {spectrum.node(), filter.node()}, [](Node<T>& self) {
        auto& ps = self.parents[0];
        auto& pf = self.parents[1];
        const std::size_t n = pf->value.size();
        const T* g = self.grad.data();
        if (wants(ps)) {
            T* gs = ps->grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) {
                gs[2 * i] += g[2 * i] * pf->value[i];
                gs[2 * i + 1] += g[2 * i + 1] * pf->value[i];
            }
        }
        if (wants(pf)) {
            T* gf = pf->grad_buffer().data();
            const T* s = ps->value.data();
            for (std::size_t i = 0; i < n; ++i) gf[i] += g[2 * i] * s[2 * i] + g[2 * i + 1] * s[2 * i + 1];
        }
    });
}

template Var<float> rdft2(const Var<float>&);
template Var<double> rdft2(const Var<double>&);
template Var<float> irdft2(const Var<float>&, std::int64_t, std::int64_t);
template Var<double> irdft2(const Var<double>&, std::int64_t, std::int64_t);
template Var<float> spectral_filter(const Var<float>&, const Var<float>&);
template Var<double> spectral_filter(const Var<double>&, const Var<double>&);

}  // namespace trido::ops
