#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "trido/autograd.hpp"

// Differentiable operations. Every op accepts float and double variables.
namespace trido::ops {

using Index = std::vector<std::int32_t>;
using IndexPtr = std::shared_ptr<const Index>;

// ---- elementwise -----------------------------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> square(const Var<T>& x);

// ---- linear algebra ---------------------------------------------------------

/// [.., m, k] x [.., k, n] -> [.., m, n]. Batch extents must agree, or `b`
/// may be a plain matrix shared across the batch of `a`.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// Row-wise affine map: x [n, in], w [out, in], bias [out] (may be empty).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

/// 2D cross-correlation with zero "same" padding: x [C_in, H, W],
/// w [C_out, C_in, k, k] (k odd), bias [C_out] (may be empty).
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

// ---- normalisation / activations -------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

/// Normalises over the last axis.
template <typename T> Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta);

/// Normalises the channel vector of every pixel of a [C, H, W] feature map.
template <typename T> Var<T> channel_layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta);

/// Last-axis softmax with max subtraction.
template <typename T> Var<T> softmax(const Var<T>& x);

/// Batched scaled dot-product attention. q, k, v: [G, L, dh]. `bias`
/// (optional) is [nb, L, L] and group g uses bias[g % nb].
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias);

/// Attention probabilities for inspection (no graph).
template <typename T>
Tensor<T> attention_probs(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>* bias);

// ---- layout -----------------------------------------------------------------
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

/// out[i] = x[index[i]]; gradient is scatter-added back.
template <typename T> Var<T> gather(const Var<T>& x, Shape out_shape, IndexPtr index);

/// Concatenate [C_a, H, W] and [C_b, H, W] along channels.
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

IndexPtr pixel_unshuffle_index(std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t r);
IndexPtr pixel_shuffle_index(std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t r);

/// [C, H, W] -> [C r^2, H/r, W/r]; out channel c r^2 + dy r + dx at (i, j)
/// holds input channel c at (i r + dy, j r + dx).
template <typename T> Var<T> pixel_unshuffle(const Var<T>& x, std::int64_t r);
/// Exact inverse of pixel_unshuffle.
template <typename T> Var<T> pixel_shuffle(const Var<T>& x, std::int64_t r);

// ---- spectral ---------------------------------------------------------------

/// Unnormalised forward 2D DFT of [C, H, W] in half-spectrum layout
/// [C, H, W/2+1, 2] (re, im interleaved).
template <typename T> Var<T> rdft2(const Var<T>& x);
/// Inverse of rdft2 for a declared (H, W); applies 1/(H W).
template <typename T> Var<T> irdft2(const Var<T>& spectrum, std::int64_t height, std::int64_t width);
/// Multiplies a half spectrum [C, H, Wr, 2] by a real filter [C, H, Wr].
template <typename T> Var<T> spectral_filter(const Var<T>& spectrum, const Var<T>& filter);

// ---- losses -----------------------------------------------------------------

/// sqrt(sum((a - b)^2)). Gradient at a == b is taken as zero.
template <typename T> Var<T> l2_distance(const Var<T>& a, const Var<T>& b);
/// mean(|a - b|). Gradient at ties is zero.
template <typename T> Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b);

}  // namespace trido::ops

namespace trido::fft {

/// Plain (graph-free) transforms shared by the differentiable ops.
template <typename T> ComplexTensor<T> rdft2(const Tensor<T>& x);
template <typename T> Tensor<T> irdft2(const ComplexTensor<T>& spectrum, std::int64_t height, std::int64_t width);

/// Column multiplicity of a half-spectrum bin when expanded to the full
/// spectrum: 1 for DC and Nyquist columns, 2 otherwise.
inline int half_spectrum_weight(std::int64_t k, std::int64_t width) {
    return (k == 0 || 2 * k == width) ? 1 : 2;
}

}  // namespace trido::fft
