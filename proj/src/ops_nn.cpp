#include <algorithm>
#include <cmath>
#include <limits>

#include "eigen_util.hpp"
#include "trido/ops.hpp"

namespace trido::ops {

using detail::accumulate;
using detail::ConstMatMap;
using detail::MatMap;
using detail::wants;
using detail::RowMat;

namespace {

// cols[(ci*k + ky)*k + kx, y*W + x] = x[ci, y + ky - pad, x + kx - pad]
template <typename T>
void im2col(const T* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k, T* cols) {
    const std::int64_t pad = k / 2;
    for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((c * k + ky) * k + kx) * h * w;
                for (std::int64_t y = 0; y < h; ++y) {
                    const std::int64_t sy = y + ky - pad;
                    T* dst = row + y * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* src = x + (c * h + sy) * w;
                    for (std::int64_t xx = 0; xx < w; ++xx) {
                        const std::int64_t sx = xx + kx - pad;
                        dst[xx] = (sx < 0 || sx >= w) ? T(0) : src[sx];
                    }
                }
            }
}

template <typename T>
void col2im(const T* cols, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k, T* gx) {
    const std::int64_t pad = k / 2;
    for (std::int64_t c = 0; c < cin; ++c)
        for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((c * k + ky) * k + kx) * h * w;
                for (std::int64_t y = 0; y < h; ++y) {
                    const std::int64_t sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    T* dst = gx + (c * h + sy) * w;
                    const T* src = row + y * w;
                    const std::int64_t x0 = std::max<std::int64_t>(0, pad - kx);
                    const std::int64_t x1 = std::min<std::int64_t>(w, w + pad - kx);
                    for (std::int64_t xx = x0; xx < x1; ++xx) dst[xx + kx - pad] += src[xx];
                }
            }
}

struct NormLayout {
    std::int64_t outer, d, inner;
};

template <typename T>
Var<T> normalize(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, NormLayout lay, const char* name) {
    if (lay.d == 0) throw ShapeError(std::string(name) + ": normalised extent is zero");
    if (gamma.size() != static_cast<std::size_t>(lay.d) || beta.size() != static_cast<std::size_t>(lay.d))
        throw ShapeError(std::string(name) + ": affine parameters must have " + std::to_string(lay.d) + " entries");
    const auto [outer, d, inner] = lay;
    const T eps = static_cast<T>(kLayerNormEps);
    Tensor<T> out(x.shape());
    Tensor<T> xhat(x.shape());
    AlignedVector<T> rstd(static_cast<std::size_t>(outer * inner));
    AlignedVector<T> mu(static_cast<std::size_t>(inner)), var(static_cast<std::size_t>(inner));
    const T* px = x.value().data();
    const T* g = gamma.value().data();
    const T* b = beta.value().data();
    const T inv_d = T(1) / static_cast<T>(d);
    for (std::int64_t o = 0; o < outer; ++o) {
        const T* xo = px + o * d * inner;
        std::fill(mu.begin(), mu.end(), T(0));
        std::fill(var.begin(), var.end(), T(0));
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t i = 0; i < inner; ++i) mu[i] += xo[c * inner + i];
        for (auto& m : mu) m *= inv_d;
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t i = 0; i < inner; ++i) {
                const T t = xo[c * inner + i] - mu[i];
                var[i] += t * t;
            }
        T* rs = rstd.data() + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) rs[i] = T(1) / std::sqrt(var[i] * inv_d + eps);
        T* xh = xhat.data() + o * d * inner;
        T* yo = out.data() + o * d * inner;
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t j = c * inner + i;
                xh[j] = (xo[j] - mu[i]) * rs[i];
                yo[j] = g[c] * xh[j] + b[c];
            }
    }
    return make_result<T>(
        name, std::move(out), {x.node(), gamma.node(), beta.node()},
        [lay, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
            const auto [outer, d, inner] = lay;
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            const T* gy = self.grad.data();
            const T* gam = pg->value.data();
            if (wants(pg) || wants(pb)) {
                T* gg = wants(pg) ? pg->grad_buffer().data() : nullptr;
                T* gb = wants(pb) ? pb->grad_buffer().data() : nullptr;
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t c = 0; c < d; ++c) {
                        T sg = 0, sb = 0;
                        const std::int64_t base = (o * d + c) * inner;
                        for (std::int64_t i = 0; i < inner; ++i) {
                            sg += gy[base + i] * xhat[base + i];
                            sb += gy[base + i];
                        }
                        if (gg) gg[c] += sg;
                        if (gb) gb[c] += sb;
                    }
            }
            if (!wants(px)) return;
            T* gx = px->grad_buffer().data();
            const T inv_d = T(1) / static_cast<T>(d);
            AlignedVector<T> a(static_cast<std::size_t>(inner)), bsum(static_cast<std::size_t>(inner));
            for (std::int64_t o = 0; o < outer; ++o) {
                std::fill(a.begin(), a.end(), T(0));
                std::fill(bsum.begin(), bsum.end(), T(0));
                for (std::int64_t c = 0; c < d; ++c)
                    for (std::int64_t i = 0; i < inner; ++i) {
                        const std::int64_t j = (o * d + c) * inner + i;
                        const T gh = gy[j] * gam[c];
                        a[i] += gh;
                        bsum[i] += gh * xhat[j];
                    }
                const T* rs = rstd.data() + o * inner;
                for (std::int64_t c = 0; c < d; ++c)
                    for (std::int64_t i = 0; i < inner; ++i) {
                        const std::int64_t j = (o * d + c) * inner + i;
                        const T gh = gy[j] * gam[c];
                        gx[j] += rs[i] * (gh - a[i] * inv_d - xhat[j] * bsum[i] * inv_d);
                    }
            }
        });
}

template <typename T>
void softmax_rows(T* data, std::int64_t rows, std::int64_t n) {
    for (std::int64_t r = 0; r < rows; ++r) {
        T* row = data + r * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, row[i]);
        T s = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            row[i] = std::exp(row[i] - mx);
            s += row[i];
        }
        const T inv = T(1) / s;
        for (std::int64_t i = 0; i < n; ++i) row[i] *= inv;
    }
}

struct AttnDims {
    std::int64_t groups, len, head_dim, bias_groups;
};

template <typename T>
AttnDims check_attention(const Shape& q, const Shape& k, const Shape& v, const Shape* bias) {
    if (q.size() != 3 || q != k || q != v)
        throw ShapeError("attention: q, k, v must share a [G,L,dh] shape; got " + shape_str(q) + ", " +
                         shape_str(k) + ", " + shape_str(v));
    AttnDims d{q[0], q[1], q[2], 0};
    if (bias) {
        if (bias->size() != 3 || (*bias)[1] != d.len || (*bias)[2] != d.len || (*bias)[0] <= 0 ||
            d.groups % (*bias)[0] != 0)
            throw ShapeError("attention: bias must be [nb,L,L] with nb dividing G; got " + shape_str(*bias));
        d.bias_groups = (*bias)[0];
    }
    return d;
}

// Writes softmax(scale q k^T + bias) for every group into probs [G, L, L].
template <typename T>
void attention_logits(const T* q, const T* k, const T* bias, const AttnDims& d, T* probs) {
    const T scale = T(1) / std::sqrt(static_cast<T>(d.head_dim));
    const std::int64_t L = d.len, dh = d.head_dim;
    for (std::int64_t g = 0; g < d.groups; ++g) {
        ConstMatMap<T> Q(q + g * L * dh, L, dh);
        ConstMatMap<T> K(k + g * L * dh, L, dh);
        MatMap<T> S(probs + g * L * L, L, L);
        S.noalias() = scale * (Q * K.transpose());
        if (bias) S += ConstMatMap<T>(bias + (g % d.bias_groups) * L * L, L, L);
    }
    softmax_rows(probs, d.groups * L, L);
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    if (x.shape().size() != 3 || w.shape().size() != 4)
        throw ShapeError("conv2d expects x [C,H,W] and w [Co,Ci,k,k]");
    const std::int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin)
        throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
    if (k % 2 == 0 || w.dim(3) != k) throw ShapeError("conv2d: kernel must be square with odd size");
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias && bias.size() != static_cast<std::size_t>(cout)) throw ShapeError("conv2d: bias extent");
    const std::int64_t hw = h * wd, kk = cin * k * k;

    AlignedVector<T> cols;
    if (k > 1) {
        cols.resize(static_cast<std::size_t>(kk * hw));
        im2col(x.value().data(), cin, h, wd, k, cols.data());
    }
    const T* colp = k > 1 ? cols.data() : x.value().data();
    Tensor<T> out({cout, h, wd});
    MatMap<T> Y(out.data(), cout, hw);
    Y.noalias() = ConstMatMap<T>(w.value().data(), cout, kk) * ConstMatMap<T>(colp, kk, hw);
    if (has_bias) Y.colwise() += detail::ConstVecMap<T>(bias.value().data(), cout);

    std::vector<NodePtr<T>> parents{x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    return make_result<T>(
        "conv2d", std::move(out), std::move(parents),
        [cin, h, wd, cout, k, hw, kk, cols = std::move(cols)](Node<T>& self) {
            auto& px = self.parents[0];
            auto& pw = self.parents[1];
            ConstMatMap<T> G(self.grad.data(), cout, hw);
            if (wants(pw)) {
                const T* cp = k > 1 ? cols.data() : px->value.data();
                MatMap<T>(pw->grad_buffer().data(), cout, kk).noalias() += G * ConstMatMap<T>(cp, kk, hw).transpose();
            }
            if (self.parents.size() > 2 && wants(self.parents[2]))
                detail::VecMap<T>(self.parents[2]->grad_buffer().data(), cout) += G.rowwise().sum();
            if (wants(px)) {
                ConstMatMap<T> Wm(pw->value.data(), cout, kk);
                if (k == 1) {
                    MatMap<T>(px->grad_buffer().data(), cin, hw).noalias() += Wm.transpose() * G;
                } else {
                    RowMat<T> gcols = Wm.transpose() * G;
                    col2im(gcols.data(), cin, h, wd, k, px->grad_buffer().data());
                }
            }
        });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
    if (x.shape().empty()) throw ShapeError("layer_norm of a scalar");
    const std::int64_t d = x.shape().back();
    const std::int64_t outer = d == 0 ? 0 : static_cast<std::int64_t>(x.size()) / d;
    return normalize(x, gamma, beta, {outer, d, 1}, "layer_norm");
}

template <typename T>
Var<T> channel_layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
    if (x.shape().size() != 3) throw ShapeError("channel_layer_norm expects [C,H,W]");
    return normalize(x, gamma, beta, {1, x.dim(0), x.dim(1) * x.dim(2)}, "channel_layer_norm");
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
    if (x.shape().empty()) throw ShapeError("softmax of a scalar");
    const std::int64_t n = x.shape().back();
    const std::int64_t rows = n == 0 ? 0 : static_cast<std::int64_t>(x.size()) / n;
    Tensor<T> out = x.value();
    softmax_rows(out.data(), rows, n);
    return make_result<T>("softmax", std::move(out), {x.node()}, [rows, n](Node<T>& self) {
        T* gx = self.parents[0]->grad_buffer().data();
        const T* y = self.value.data();
        const T* g = self.grad.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::int64_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
            for (std::int64_t i = 0; i < n; ++i) gx[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
        }
    });
}

template <typename T>
Tensor<T> attention_probs(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>* bias) {
    const AttnDims d = check_attention<T>(q.shape(), k.shape(), k.shape(), bias ? &bias->shape() : nullptr);
    Tensor<T> probs({d.groups, d.len, d.len});
    attention_logits(q.data(), k.data(), bias ? bias->data() : nullptr, d, probs.data());
    return probs;
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& bias) {
    const bool has_bias = static_cast<bool>(bias);
    const AttnDims d = check_attention<T>(q.shape(), k.shape(), v.shape(), has_bias ? &bias.shape() : nullptr);
    const std::int64_t L = d.len, dh = d.head_dim;
    Tensor<T> probs({d.groups, L, L});
    attention_logits(q.value().data(), k.value().data(), has_bias ? bias.value().data() : nullptr, d,
                     probs.data());
    Tensor<T> out({d.groups, L, dh});
    for (std::int64_t g = 0; g < d.groups; ++g) {
        MatMap<T>(out.data() + g * L * dh, L, dh).noalias() =
            ConstMatMap<T>(probs.data() + g * L * L, L, L) * ConstMatMap<T>(v.value().data() + g * L * dh, L, dh);
    }
    std::vector<NodePtr<T>> parents{q.node(), k.node(), v.node()};
    if (has_bias) parents.push_back(bias.node());
    return make_result<T>(
        "attention", std::move(out), std::move(parents), [d, probs = std::move(probs)](Node<T>& self) {
            const std::int64_t L = d.len, dh = d.head_dim;
            const T scale = T(1) / std::sqrt(static_cast<T>(dh));
            auto& pq = self.parents[0];
            auto& pk = self.parents[1];
            auto& pv = self.parents[2];
            const bool bias_grad = self.parents.size() > 3 && wants(self.parents[3]);
            T* gq = wants(pq) ? pq->grad_buffer().data() : nullptr;
            T* gk = wants(pk) ? pk->grad_buffer().data() : nullptr;
            T* gv = wants(pv) ? pv->grad_buffer().data() : nullptr;
            T* gb = bias_grad ? self.parents[3]->grad_buffer().data() : nullptr;
            RowMat<T> gp(L, L);
            for (std::int64_t g = 0; g < d.groups; ++g) {
                const std::int64_t off = g * L * dh;
                ConstMatMap<T> P(probs.data() + g * L * L, L, L);
                ConstMatMap<T> GO(self.grad.data() + off, L, dh);
                ConstMatMap<T> V(pv->value.data() + off, L, dh);
                if (gv) MatMap<T>(gv + off, L, dh).noalias() += P.transpose() * GO;
                if (!gq && !gk && !gb) continue;
                gp.noalias() = GO * V.transpose();
                // dS = P * (dP - rowsum(dP * P))
                for (std::int64_t r = 0; r < L; ++r) {
                    T dot = 0;
                    for (std::int64_t c = 0; c < L; ++c) dot += gp(r, c) * P(r, c);
                    for (std::int64_t c = 0; c < L; ++c) gp(r, c) = P(r, c) * (gp(r, c) - dot);
                }
                if (gb) MatMap<T>(gb + (g % d.bias_groups) * L * L, L, L) += gp;
                if (gq) MatMap<T>(gq + off, L, dh).noalias() += scale * (gp * ConstMatMap<T>(pk->value.data() + off, L, dh));
                if (gk)
                    MatMap<T>(gk + off, L, dh).noalias() +=
                        scale * (gp.transpose() * ConstMatMap<T>(pq->value.data() + off, L, dh));
            }
        });
}

#define TRIDO_INSTANTIATE_NN(T)                                                                   \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&);                          \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&);                      \
    template Var<T> channel_layer_norm(const Var<T>&, const Var<T>&, const Var<T>&);              \
    template Var<T> softmax(const Var<T>&);                                                       \
    template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);        \
    template Tensor<T> attention_probs(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);

TRIDO_INSTANTIATE_NN(float)
TRIDO_INSTANTIATE_NN(double)

}  // namespace trido::ops
