#include "trido/ssr_former.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trido {

namespace {

constexpr double kInitStd = 0.02;

// Original pixel of token t in window w after a roll by -shift.
struct WindowGeometry {
    std::int64_t height, width, window, shift;

    std::int64_t windows_x() const { return width / window; }
    std::int64_t count() const { return (height / window) * windows_x(); }
    std::int64_t tokens() const { return window * window; }

    std::int64_t pixel(std::int64_t w, std::int64_t t) const {
        const std::int64_t ry = (w / windows_x()) * window + t / window;
        const std::int64_t rx = (w % windows_x()) * window + t % window;
        return ((ry + shift) % height) * width + (rx + shift) % width;
    }
    // (window, token) owning original pixel (y, x).
    std::pair<std::int64_t, std::int64_t> slot(std::int64_t y, std::int64_t x) const {
        const std::int64_t ry = ((y - shift) % height + height) % height;
        const std::int64_t rx = ((x - shift) % width + width) % width;
        return {(ry / window) * windows_x() + rx / window, (ry % window) * window + rx % window};
    }
};

WindowGeometry make_geometry(std::int64_t height, std::int64_t width, std::int64_t window, std::int64_t shift) {
    if (window < 1 || height % window != 0 || width % window != 0)
        throw ShapeError("window size " + std::to_string(window) + " does not divide " + std::to_string(height) +
                         "x" + std::to_string(width));
    return {height, width, window, shift};
}

template <typename T>
void add_pointwise(ParamStore<T>& store, const std::string& name, std::int64_t out, std::int64_t in,
                   std::mt19937_64& rng) {
    store.add(name + "/weight", normal_init<T>({out, in, 1, 1}, kInitStd, rng));
    store.add(name + "/bias", Tensor<T>({out}));
}

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k,
              std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
    store.add(name + "/weight", uniform_init<T>({out, in, k, k}, bound, rng));
    store.add(name + "/bias", uniform_init<T>({out}, bound, rng));
}

template <typename T>
void add_norm(ParamStore<T>& store, const std::string& name, std::int64_t d) {
    store.add(name + "/gamma", Tensor<T>::ones({d}));
    store.add(name + "/beta", Tensor<T>({d}));
}

std::string full(const std::string& block) { return std::string("ssr_former/") + block + "/"; }

}  // namespace

void SSRFormerConfig::validate() const {
    if (window < 1) throw std::invalid_argument("ssr_former: window must be >= 1");
    const std::int64_t unit = window << (kSsrLevels - 1);
    if (height < 1 || width < 1 || height % unit != 0 || width % unit != 0)
        throw std::invalid_argument("ssr_former: spatial extents " + std::to_string(height) + "x" +
                                    std::to_string(width) + " must be divisible by " + std::to_string(unit));
    for (int l = 0; l < kSsrLevels; ++l)
        if (channels[l] < 1 || heads[l] < 1 || channels[l] % heads[l] != 0)
            throw std::invalid_argument("ssr_former: level " + std::to_string(l) +
                                        " channels must be a positive multiple of heads");
    if (in_channels < 1 || out_channels < 1 || ffn_ratio < 1)
        throw std::invalid_argument("ssr_former: in/out channels and ffn_ratio must be positive");
}

ops::IndexPtr window_partition_index(std::int64_t channels, std::int64_t height, std::int64_t width,
                                     std::int64_t window, std::int64_t shift) {
    const WindowGeometry g = make_geometry(height, width, window, shift);
    auto idx = std::make_shared<ops::Index>();
    idx->reserve(static_cast<std::size_t>(channels * height * width));
    for (std::int64_t w = 0; w < g.count(); ++w)
        for (std::int64_t c = 0; c < channels; ++c)
            for (std::int64_t t = 0; t < g.tokens(); ++t)
                idx->push_back(static_cast<std::int32_t>(c * height * width + g.pixel(w, t)));
    return idx;
}

ops::IndexPtr window_reverse_index(std::int64_t channels, std::int64_t height, std::int64_t width,
                                   std::int64_t window, std::int64_t shift) {
    const WindowGeometry g = make_geometry(height, width, window, shift);
    auto idx = std::make_shared<ops::Index>();
    idx->reserve(static_cast<std::size_t>(channels * height * width));
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const auto [w, t] = g.slot(y, x);
                idx->push_back(static_cast<std::int32_t>((w * channels + c) * g.tokens() + t));
            }
    return idx;
}

template <typename T>
Var<T> window_partition(const Var<T>& x, std::int64_t window) {
    if (x.shape().size() != 3) throw ShapeError("window_partition expects [C,H,W]");
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto idx = window_partition_index(c, h, w, window);
    return ops::gather(x, {(h / window) * (w / window), c, window, window}, std::move(idx));
}

template <typename T>
Var<T> window_reverse(const Var<T>& windows, std::int64_t height, std::int64_t width, std::int64_t window) {
    if (windows.shape().size() != 4 || windows.dim(2) != window || windows.dim(3) != window)
        throw ShapeError("window_reverse expects [N,C,M,M], got " + shape_str(windows.shape()));
    const std::int64_t count = (height / std::max<std::int64_t>(window, 1)) * (width / std::max<std::int64_t>(window, 1));
    if (height % window != 0 || width % window != 0 || windows.dim(0) != count)
        throw ShapeError("window_reverse: " + std::to_string(windows.dim(0)) + " windows cannot tile " +
                         std::to_string(height) + "x" + std::to_string(width));
    const auto c = windows.dim(1);
    return ops::gather(windows, {c, height, width}, window_reverse_index(c, height, width, window));
}

template <typename T>
Var<T> global_frequency_parser(const Var<T>& x, const Var<T>& filter) {
    if (x.shape().size() != 3) throw ShapeError("gfp expects [C,H,W]");
    const Shape expect{x.dim(0), x.dim(1), x.dim(2) / 2 + 1};
    if (filter.shape() != expect)
        throw ShapeError("gfp: filter " + shape_str(filter.shape()) + " does not match feature resolution; expected " +
                         shape_str(expect));
    return ops::irdft2(ops::spectral_filter(ops::rdft2(x), filter), x.dim(1), x.dim(2));
}

ops::IndexPtr relative_bias_index(std::int64_t window, std::int64_t heads) {
    const std::int64_t m2 = window * window, span = 2 * window - 1;
    auto idx = std::make_shared<ops::Index>();
    idx->reserve(static_cast<std::size_t>(heads * m2 * m2));
    for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t i = 0; i < m2; ++i)
            for (std::int64_t j = 0; j < m2; ++j) {
                const std::int64_t dy = i / window - j / window + window - 1;
                const std::int64_t dx = i % window - j % window + window - 1;
                idx->push_back(static_cast<std::int32_t>((dy * span + dx) * heads + h));
            }
    return idx;
}

template <typename T>
std::vector<std::string> SSRFormer<T>::block_names() {
    return {"enc0", "enc1", "enc2", "bottleneck", "dec2", "dec1", "dec0"};
}

template <typename T>
int SSRFormer<T>::block_level(const std::string& block) {
    if (block == "bottleneck") return kSsrLevels - 1;
    if (block.size() == 4 && (block.rfind("enc", 0) == 0 || block.rfind("dec", 0) == 0)) return block[3] - '0';
    throw std::invalid_argument("unknown SSR block " + block);
}

template <typename T>
void SSRFormer<T>::register_params(const SSRFormerConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng) {
    cfg.validate();
    const auto& ch = cfg.channels;
    add_conv(store, "ssr_former/head", ch[0], cfg.in_channels, 3, rng);
    for (const auto& name : block_names()) {
        const int level = block_level(name);
        const std::int64_t c = ch[level], nh = cfg.heads[level], m = cfg.window;
        const std::int64_t h = cfg.level_height(level), w = cfg.level_width(level);
        for (int layer = 0; layer < 2; ++layer) {
            const std::string p = full(name) + "sstl" + std::to_string(layer) + "/";
            add_norm(store, p + "ln1", c);
            add_pointwise(store, p + "attn/qkv", 3 * c, c, rng);
            store.add(p + "attn/rel_bias", normal_init<T>({(2 * m - 1) * (2 * m - 1), nh}, kInitStd, rng));
            add_pointwise(store, p + "attn/proj", c, c, rng);
            store.add(p + "gfp/filter", Tensor<T>::ones({c, h, w / 2 + 1}));
            add_norm(store, p + "ln2", c);
            add_pointwise(store, p + "ffn/fc1", cfg.ffn_ratio * c, c, rng);
            add_pointwise(store, p + "ffn/fc2", c, cfg.ffn_ratio * c, rng);
        }
        add_conv(store, full(name) + "conv", c, c, 3, rng);
    }
    for (int l = 0; l + 1 < kSsrLevels; ++l) {
        const std::string s = std::to_string(l);
        add_conv(store, "ssr_former/down" + s, ch[l + 1], 4 * ch[l], 1, rng);
        add_conv(store, "ssr_former/up" + s, 4 * ch[l], ch[l + 1], 1, rng);
        add_conv(store, "ssr_former/merge" + s, ch[l], 2 * ch[l], 1, rng);
    }
    add_conv(store, "ssr_former/tail", cfg.out_channels, ch[0], 3, rng);
}

template <typename T>
SSRFormer<T>::SSRFormer(const SSRFormerConfig& cfg, const ParamStore<T>& store) : cfg_(cfg) {
    cfg_.validate();
    head_w_ = store.get("ssr_former/head/weight");
    head_b_ = store.get("ssr_former/head/bias");
    tail_w_ = store.get("ssr_former/tail/weight");
    tail_b_ = store.get("ssr_former/tail/bias");
    if (head_w_.shape() != Shape{cfg_.channels[0], cfg_.in_channels, 3, 3})
        throw ShapeError("ssr_former: stored head weight " + shape_str(head_w_.shape()) +
                         " does not match the configuration");
    for (int l = 0; l + 1 < kSsrLevels; ++l) {
        const std::string s = std::to_string(l);
        down_w_[l] = store.get("ssr_former/down" + s + "/weight");
        down_b_[l] = store.get("ssr_former/down" + s + "/bias");
        up_w_[l] = store.get("ssr_former/up" + s + "/weight");
        up_b_[l] = store.get("ssr_former/up" + s + "/bias");
        merge_w_[l] = store.get("ssr_former/merge" + s + "/weight");
        merge_b_[l] = store.get("ssr_former/merge" + s + "/bias");
    }
    names_ = block_names();
    for (const auto& name : names_) {
        Block b;
        b.level = block_level(name);
        for (int layer = 0; layer < 2; ++layer) {
            const std::string p = full(name) + "sstl" + std::to_string(layer) + "/";
            b.layers[layer] = {store.get(p + "ln1/gamma"),      store.get(p + "ln1/beta"),
                               store.get(p + "attn/qkv/weight"), store.get(p + "attn/qkv/bias"),
                               store.get(p + "attn/rel_bias"),   store.get(p + "attn/proj/weight"),
                               store.get(p + "attn/proj/bias"),  store.get(p + "gfp/filter"),
                               store.get(p + "ln2/gamma"),       store.get(p + "ln2/beta"),
                               store.get(p + "ffn/fc1/weight"),  store.get(p + "ffn/fc1/bias"),
                               store.get(p + "ffn/fc2/weight"),  store.get(p + "ffn/fc2/bias")};
        }
        b.conv_w = store.get(full(name) + "conv/weight");
        b.conv_b = store.get(full(name) + "conv/bias");

        const std::int64_t c = cfg_.channels[b.level], nh = cfg_.heads[b.level], dh = c / nh;
        const std::int64_t h = cfg_.level_height(b.level), w = cfg_.level_width(b.level);
        const std::int64_t hw = h * w;
        for (int s = 0; s < 2; ++s) {
            const WindowGeometry g = make_geometry(h, w, cfg_.window, s ? cfg_.shift() : 0);
            for (int part = 0; part < 3; ++part) {
                auto idx = std::make_shared<ops::Index>();
                idx->reserve(static_cast<std::size_t>(c * hw));
                for (std::int64_t win = 0; win < g.count(); ++win)
                    for (std::int64_t head = 0; head < nh; ++head)
                        for (std::int64_t t = 0; t < g.tokens(); ++t)
                            for (std::int64_t e = 0; e < dh; ++e)
                                idx->push_back(
                                    static_cast<std::int32_t>((part * c + head * dh + e) * hw + g.pixel(win, t)));
                b.to_windows[s][part] = idx;
            }
            auto back = std::make_shared<ops::Index>();
            back->reserve(static_cast<std::size_t>(c * hw));
            for (std::int64_t head = 0; head < nh; ++head)
                for (std::int64_t e = 0; e < dh; ++e)
                    for (std::int64_t y = 0; y < h; ++y)
                        for (std::int64_t x = 0; x < w; ++x) {
                            const auto [win, t] = g.slot(y, x);
                            back->push_back(static_cast<std::int32_t>(((win * nh + head) * g.tokens() + t) * dh + e));
                        }
            b.from_windows[s] = back;
        }
        b.bias_index = relative_bias_index(cfg_.window, nh);
        blocks_.push_back(std::move(b));
    }
}

template <typename T>
const typename SSRFormer<T>::Block& SSRFormer<T>::block(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::invalid_argument("unknown SSR block " + name);
    return blocks_[static_cast<std::size_t>(it - names_.begin())];
}

template <typename T>
const Var<T>& SSRFormer<T>::gfp_filter(const std::string& name, int layer) const {
    return block(name).layers.at(static_cast<std::size_t>(layer)).gfp;
}

template <typename T>
Var<T> SSRFormer<T>::attention_impl(const Var<T>& x, const Block& b, int layer, bool shifted) const {
    const Layer& p = b.layers[static_cast<std::size_t>(layer)];
    const std::int64_t c = cfg_.channels[b.level], nh = cfg_.heads[b.level];
    const std::int64_t h = cfg_.level_height(b.level), w = cfg_.level_width(b.level);
    if (x.shape() != Shape{c, h, w})
        throw ShapeError("w-smsa: input " + shape_str(x.shape()) + " does not match level " + std::to_string(b.level));
    const std::int64_t m2 = cfg_.window * cfg_.window;
    const std::int64_t groups = (h * w / m2) * nh;
    const Shape tok{groups, m2, c / nh};
    const int s = shifted ? 1 : 0;
    Var<T> qkv = ops::conv2d(x, p.qkv_w, p.qkv_b);
    Var<T> bias = ops::gather(p.rel_table, {nh, m2, m2}, b.bias_index);
    Var<T> att = ops::attention(ops::gather(qkv, tok, b.to_windows[s][0]), ops::gather(qkv, tok, b.to_windows[s][1]),
                                ops::gather(qkv, tok, b.to_windows[s][2]), bias);
    return ops::conv2d(ops::gather(att, {c, h, w}, b.from_windows[s]), p.proj_w, p.proj_b);
}

template <typename T>
Var<T> SSRFormer<T>::sstl_impl(const Var<T>& x, const Block& b, int layer, bool shifted) const {
    const Layer& p = b.layers[static_cast<std::size_t>(layer)];
    Var<T> spatial = attention_impl(ops::channel_layer_norm(x, p.ln1_gamma, p.ln1_beta), b, layer, shifted);
    Var<T> u = ops::add(x, global_frequency_parser(spatial, p.gfp));
    Var<T> hidden = ops::gelu(ops::conv2d(ops::channel_layer_norm(u, p.ln2_gamma, p.ln2_beta), p.fc1_w, p.fc1_b));
    return ops::add(u, ops::conv2d(hidden, p.fc2_w, p.fc2_b));
}

template <typename T>
Var<T> SSRFormer<T>::sstb_impl(const Var<T>& x, const Block& b, bool shift_second) const {
    Var<T> y = sstl_impl(x, b, 0, false);
    y = sstl_impl(y, b, 1, shift_second);
    return ops::add(ops::conv2d(y, b.conv_w, b.conv_b), x);
}

template <typename T>
Var<T> SSRFormer<T>::window_attention(const Var<T>& x, const std::string& name, int layer, bool shifted) const {
    return attention_impl(x, block(name), layer, shifted);
}

template <typename T>
Var<T> SSRFormer<T>::sstl(const Var<T>& x, const std::string& name, int layer, bool shifted) const {
    return sstl_impl(x, block(name), layer, shifted);
}

template <typename T>
Var<T> SSRFormer<T>::sstb(const Var<T>& x, const std::string& name) const {
    return sstb_impl(x, block(name), true);
}

template <typename T>
Var<T> SSRFormer<T>::sstb_unshifted(const Var<T>& x, const std::string& name) const {
    return sstb_impl(x, block(name), false);
}

template <typename T>
Var<T> SSRFormer<T>::downsample(const Var<T>& x, int level) const {
    return ops::conv2d(ops::pixel_unshuffle(x, 2), down_w_.at(level), down_b_.at(level));
}

template <typename T>
Var<T> SSRFormer<T>::upsample(const Var<T>& x, int level) const {
    return ops::pixel_shuffle(ops::conv2d(x, up_w_.at(level), up_b_.at(level)), 2);
}

template <typename T>
Var<T> SSRFormer<T>::forward(const Var<T>& sino) const {
    const Shape expect{cfg_.in_channels, cfg_.height, cfg_.width};
    if (sino.shape() != expect)
        throw ShapeError("ssr_former: input " + shape_str(sino.shape()) + " does not match configured image grid " +
                         shape_str(expect));
    std::array<Var<T>, kSsrLevels - 1> skips;
    Var<T> x = ops::conv2d(sino, head_w_, head_b_);
    for (int l = 0; l + 1 < kSsrLevels; ++l) {
        skips[l] = sstb_impl(x, blocks_[static_cast<std::size_t>(l)], true);
        x = downsample(skips[l], l);
    }
    x = sstb_impl(x, blocks_[kSsrLevels - 1], true);
    for (int l = kSsrLevels - 2; l >= 0; --l) {
        x = upsample(x, l);
        x = ops::conv2d(ops::concat_channels(x, skips[l]), merge_w_[l], merge_b_[l]);
        x = sstb_impl(x, blocks_[static_cast<std::size_t>(2 * (kSsrLevels - 1) - l)], true);
    }
    return ops::conv2d(x, tail_w_, tail_b_);
}

template class SSRFormer<float>;
template class SSRFormer<double>;
template Var<float> window_partition(const Var<float>&, std::int64_t);
template Var<double> window_partition(const Var<double>&, std::int64_t);
template Var<float> window_reverse(const Var<float>&, std::int64_t, std::int64_t, std::int64_t);
template Var<double> window_reverse(const Var<double>&, std::int64_t, std::int64_t, std::int64_t);
template Var<float> global_frequency_parser(const Var<float>&, const Var<float>&);
template Var<double> global_frequency_parser(const Var<double>&, const Var<double>&);

}  // namespace trido
