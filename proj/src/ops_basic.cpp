#include <cmath>
#include <numbers>
#include <stdexcept>

#include "eigen_util.hpp"
#include "trido/ops.hpp"

namespace trido::ops {

using detail::accumulate;
using detail::ConstMatMap;
using detail::MatMap;
using detail::wants;

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
T gelu_value(T x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const T inner = c * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(inner);
    const T dinner = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dinner;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
    return make_result<T>("add", std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        for (auto& p : self.parents)
            if (wants(p)) accumulate(*p, self.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
    return make_result<T>("sub", std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        if (wants(self.parents[0])) accumulate(*self.parents[0], self.grad);
        if (wants(self.parents[1])) {
            auto& g = self.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
    return make_result<T>("mul", std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (wants(pb)) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v *= s;
    return make_result<T>("scale", std::move(out), {a.node()}, [s](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

template <typename T>
Var<T> square(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.vec()) v *= v;
    return make_result<T>("square", std::move(out), {x.node()}, [](Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += T(2) * p->value[i] * self.grad[i];
    });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* px = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(px[i]);
    return make_result<T>("gelu", std::move(out), {x.node()}, [](Node<T>& self) {
        auto& p = self.parents[0];
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * gelu_grad(p->value[i]);
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().vec()) acc += v;
    return make_result<T>("sum", Tensor<T>({1}, acc), {x.node()}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T s = self.grad[0];
        for (auto& v : g.vec()) v += s;
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    if (x.size() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) throw ShapeError("matmul needs rank >= 2 operands");
    const std::int64_t m = sa[sa.size() - 2], k = sa.back();
    const std::int64_t kb = sb[sb.size() - 2], n = sb.back();
    if (k != kb) throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    Shape batch_a(sa.begin(), sa.end() - 2);
    Shape batch_b(sb.begin(), sb.end() - 2);
    const bool shared_b = batch_b.empty();
    if (!shared_b && batch_a != batch_b)
        throw ShapeError("matmul batch extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    const std::int64_t batch = numel(batch_a);
    Shape out_shape = batch_a;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape);
    for (std::int64_t i = 0; i < batch; ++i) {
        ConstMatMap<T> A(a.value().data() + i * m * k, m, k);
        ConstMatMap<T> B(b.value().data() + (shared_b ? 0 : i * k * n), k, n);
        MatMap<T> C(out.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    return make_result<T>("matmul", std::move(out), {a.node(), b.node()},
                          [batch, m, k, n, shared_b](Node<T>& self) {
                              auto& pa = self.parents[0];
                              auto& pb = self.parents[1];
                              for (std::int64_t i = 0; i < batch; ++i) {
                                  ConstMatMap<T> G(self.grad.data() + i * m * n, m, n);
                                  const std::int64_t boff = shared_b ? 0 : i * k * n;
                                  if (wants(pa)) {
                                      ConstMatMap<T> B(pb->value.data() + boff, k, n);
                                      MatMap<T> GA(pa->grad_buffer().data() + i * m * k, m, k);
                                      GA.noalias() += G * B.transpose();
                                  }
                                  if (wants(pb)) {
                                      ConstMatMap<T> A(pa->value.data() + i * m * k, m, k);
                                      MatMap<T> GB(pb->grad_buffer().data() + boff, k, n);
                                      GB.noalias() += A.transpose() * G;
                                  }
                              }
                          });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    if (x.shape().size() != 2 || w.shape().size() != 2) throw ShapeError("linear expects x [n,in], w [out,in]");
    const std::int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in)
        throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
    const bool has_bias = static_cast<bool>(bias);
    if (has_bias && bias.size() != static_cast<std::size_t>(out_dim)) throw ShapeError("linear: bias extent");
    Tensor<T> out({n, out_dim});
    MatMap<T> Y(out.data(), n, out_dim);
    ConstMatMap<T> X(x.value().data(), n, in);
    ConstMatMap<T> Wm(w.value().data(), out_dim, in);
    Y.noalias() = X * Wm.transpose();
    if (has_bias) {
        detail::ConstVecMap<T> b(bias.value().data(), out_dim);
        Y.rowwise() += b.transpose();
    }
    std::vector<NodePtr<T>> parents{x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    return make_result<T>("linear", std::move(out), std::move(parents), [n, in, out_dim](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        ConstMatMap<T> G(self.grad.data(), n, out_dim);
        if (wants(px)) {
            ConstMatMap<T> Wm(pw->value.data(), out_dim, in);
            MatMap<T>(px->grad_buffer().data(), n, in).noalias() += G * Wm;
        }
        if (wants(pw)) {
            ConstMatMap<T> X(px->value.data(), n, in);
            MatMap<T>(pw->grad_buffer().data(), out_dim, in).noalias() += G.transpose() * X;
        }
        if (self.parents.size() > 2 && wants(self.parents[2])) {
            detail::VecMap<T>(self.parents[2]->grad_buffer().data(), out_dim) += G.colwise().sum().transpose();
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return make_result<T>("reshape", std::move(out), {x.node()},
                          [](Node<T>& self) { accumulate(*self.parents[0], self.grad); });
}

template <typename T>
Var<T> gather(const Var<T>& x, Shape out_shape, IndexPtr index) {
    if (static_cast<std::int64_t>(index->size()) != numel(out_shape))
        throw ShapeError("gather: index length does not match " + shape_str(out_shape));
    Tensor<T> out(std::move(out_shape));
    const T* src = x.value().data();
    const auto& idx = *index;
    const auto limit = static_cast<std::int32_t>(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= limit) throw std::out_of_range("gather: index out of range");
        out[i] = src[idx[i]];
    }
    return make_result<T>("gather", std::move(out), {x.node()}, [index](Node<T>& self) {
        T* g = self.parents[0]->grad_buffer().data();
        const auto& id = *index;
        for (std::size_t i = 0; i < id.size(); ++i) g[id[i]] += self.grad[i];
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
        throw ShapeError("concat_channels: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t na = a.size();
    Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.value().vec().begin(), a.value().vec().end(), out.vec().begin());
    std::copy(b.value().vec().begin(), b.value().vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(na));
    return make_result<T>("concat_channels", std::move(out), {a.node(), b.node()}, [na](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (wants(pa)) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
        }
        if (wants(pb)) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
        }
    });
}

IndexPtr pixel_unshuffle_index(std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t r) {
    if (r < 1 || height % r != 0 || width % r != 0)
        throw ShapeError("pixel_unshuffle: factor " + std::to_string(r) + " does not divide " +
                         std::to_string(height) + "x" + std::to_string(width));
    const std::int64_t oh = height / r, ow = width / r;
    auto idx = std::make_shared<Index>(static_cast<std::size_t>(channels * height * width));
    std::size_t o = 0;
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t dy = 0; dy < r; ++dy)
            for (std::int64_t dx = 0; dx < r; ++dx)
                for (std::int64_t i = 0; i < oh; ++i)
                    for (std::int64_t j = 0; j < ow; ++j)
                        (*idx)[o++] = static_cast<std::int32_t>((c * height + i * r + dy) * width + j * r + dx);
    return idx;
}

IndexPtr pixel_shuffle_index(std::int64_t channels, std::int64_t height, std::int64_t width, std::int64_t r) {
    if (r < 1 || channels % (r * r) != 0)
        throw ShapeError("pixel_shuffle: " + std::to_string(channels) + " channels not divisible by " +
                         std::to_string(r * r));
    const std::int64_t oc = channels / (r * r), oh = height * r, ow = width * r;
    auto idx = std::make_shared<Index>(static_cast<std::size_t>(channels * height * width));
    std::size_t o = 0;
    for (std::int64_t c = 0; c < oc; ++c)
        for (std::int64_t y = 0; y < oh; ++y)
            for (std::int64_t x = 0; x < ow; ++x) {
                const std::int64_t src_c = c * r * r + (y % r) * r + (x % r);
                (*idx)[o++] = static_cast<std::int32_t>((src_c * height + y / r) * width + x / r);
            }
    return idx;
}

template <typename T>
Var<T> pixel_unshuffle(const Var<T>& x, std::int64_t r) {
    if (x.shape().size() != 3) throw ShapeError("pixel_unshuffle expects [C,H,W]");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto idx = pixel_unshuffle_index(c, h, w, r);
    return gather(x, {c * r * r, h / r, w / r}, std::move(idx));
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, std::int64_t r) {
    if (x.shape().size() != 3) throw ShapeError("pixel_shuffle expects [C,H,W]");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto idx = pixel_shuffle_index(c, h, w, r);
    return gather(x, {c / (r * r), h * r, w * r}, std::move(idx));
}

template <typename T>
Var<T> l2_distance(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "l2_distance");
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    const T norm = std::sqrt(acc);
    return make_result<T>("l2_distance", Tensor<T>({1}, norm), {a.node(), b.node()}, [norm](Node<T>& self) {
        if (norm == T(0)) return;
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const T s = self.grad[0] / norm;
        for (std::size_t i = 0; i < pa->value.size(); ++i) {
            const T d = s * (pa->value[i] - pb->value[i]);
            if (wants(pa)) pa->grad_buffer()[i] += d;
            if (wants(pb)) pb->grad_buffer()[i] -= d;
        }
    });
}

template <typename T>
Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mean_abs_error");
    if (a.size() == 0) throw ShapeError("mean_abs_error of empty tensors");
    T acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a.value()[i] - b.value()[i]);
    const T inv_n = T(1) / static_cast<T>(a.size());
    return make_result<T>("mean_abs_error", Tensor<T>({1}, acc * inv_n), {a.node(), b.node()},
                          [inv_n](Node<T>& self) {
                              auto& pa = self.parents[0];
                              auto& pb = self.parents[1];
                              const T s = self.grad[0] * inv_n;
                              for (std::size_t i = 0; i < pa->value.size(); ++i) {
                                  const T d = pa->value[i] - pb->value[i];
                                  const T sg = d > 0 ? s : (d < 0 ? -s : T(0));
                                  if (wants(pa)) pa->grad_buffer()[i] += sg;
                                  if (wants(pb)) pb->grad_buffer()[i] -= sg;
                              }
                          });
}

#define TRIDO_INSTANTIATE_BASIC(T)                                                   \
    template Var<T> add(const Var<T>&, const Var<T>&);                               \
    template Var<T> sub(const Var<T>&, const Var<T>&);                               \
    template Var<T> mul(const Var<T>&, const Var<T>&);                               \
    template Var<T> scale(const Var<T>&, T);                                         \
    template Var<T> square(const Var<T>&);                                           \
    template Var<T> gelu(const Var<T>&);                                             \
    template Var<T> sum(const Var<T>&);                                              \
    template Var<T> mean(const Var<T>&);                                             \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                            \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);             \
    template Var<T> reshape(const Var<T>&, Shape);                                   \
    template Var<T> gather(const Var<T>&, Shape, IndexPtr);                          \
    template Var<T> concat_channels(const Var<T>&, const Var<T>&);                   \
    template Var<T> pixel_unshuffle(const Var<T>&, std::int64_t);                    \
    template Var<T> pixel_shuffle(const Var<T>&, std::int64_t);                      \
    template Var<T> l2_distance(const Var<T>&, const Var<T>&);                       \
    template Var<T> mean_abs_error(const Var<T>&, const Var<T>&);

TRIDO_INSTANTIATE_BASIC(float)
TRIDO_INSTANTIATE_BASIC(double)

}  // namespace trido::ops
