#include "trido/se_former.hpp"

#include <cmath>
#include <stdexcept>

namespace trido {

namespace {

constexpr double kInitStd = 0.02;

std::string block_name(std::int64_t j) { return std::string("se_former/block") + std::to_string(j) + "/"; }

template <typename T>
void add_linear(ParamStore<T>& store, const std::string& name, std::int64_t out, std::int64_t in,
                std::mt19937_64& rng) {
    store.add(name + "/weight", normal_init<T>({out, in}, kInitStd, rng));
    store.add(name + "/bias", Tensor<T>({out}));
}

template <typename T>
void add_norm(ParamStore<T>& store, const std::string& name, std::int64_t d) {
    store.add(name + "/gamma", Tensor<T>::ones({d}));
    store.add(name + "/beta", Tensor<T>({d}));
}

}  // namespace

void SEFormerConfig::validate() const {
    if (angles < 1 || bins < 1 || channels < 1) throw std::invalid_argument("se_former: extents must be positive");
    if (blocks < 1) throw std::invalid_argument("se_former: at least one encoder block required");
    if (width < 1 || heads < 1 || width % heads != 0)
        throw std::invalid_argument("se_former: width must be a positive multiple of heads");
    if (width % bins != 0)
        throw std::invalid_argument("se_former: width " + std::to_string(width) + " must be a multiple of bins " +
                                    std::to_string(bins));
    if (ffn_ratio < 1) throw std::invalid_argument("se_former: ffn_ratio must be >= 1");
}

template <typename T>
void SEFormer<T>::register_params(const SEFormerConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng) {
    cfg.validate();
    const std::int64_t d = cfg.width;
    add_linear(store, "se_former/embed", d, cfg.channels * cfg.bins, rng);
    store.add("se_former/pos", normal_init<T>({cfg.angles, d}, kInitStd, rng));
    for (std::int64_t j = 0; j < cfg.blocks; ++j) {
        const std::string b = block_name(j);
        add_norm(store, b + "ln1", d);
        add_linear(store, b + "attn/qkv", 3 * d, d, rng);
        add_linear(store, b + "attn/proj", d, d, rng);
        add_norm(store, b + "ln2", d);
        add_linear(store, b + "ffn/fc1", cfg.ffn_ratio * d, d, rng);
        add_linear(store, b + "ffn/fc2", d, cfg.ffn_ratio * d, rng);
    }
    store.add("se_former/map/weight", normal_init<T>({cfg.channels, cfg.mapped_channels(), 1, 1}, kInitStd, rng));
    store.add("se_former/map/bias", Tensor<T>({cfg.channels}));
}

template <typename T>
SEFormer<T>::SEFormer(const SEFormerConfig& cfg, const ParamStore<T>& store) : cfg_(cfg) {
    cfg_.validate();
    embed_w_ = store.get("se_former/embed/weight");
    embed_b_ = store.get("se_former/embed/bias");
    pos_ = store.get("se_former/pos");
    map_w_ = store.get("se_former/map/weight");
    map_b_ = store.get("se_former/map/bias");
    for (std::int64_t j = 0; j < cfg_.blocks; ++j) {
        const std::string b = block_name(j);
        blocks_.push_back({store.get(b + "ln1/gamma"), store.get(b + "ln1/beta"), store.get(b + "attn/qkv/weight"),
                           store.get(b + "attn/qkv/bias"), store.get(b + "attn/proj/weight"),
                           store.get(b + "attn/proj/bias"), store.get(b + "ln2/gamma"), store.get(b + "ln2/beta"),
                           store.get(b + "ffn/fc1/weight"), store.get(b + "ffn/fc1/bias"),
                           store.get(b + "ffn/fc2/weight"), store.get(b + "ffn/fc2/bias")});
    }
    if (pos_.shape() != Shape{cfg_.angles, cfg_.width})
        throw ShapeError("se_former: stored position embedding " + shape_str(pos_.shape()) +
                         " does not match the configuration");

    const std::int64_t hs = cfg_.angles, ws = cfg_.bins, cs = cfg_.channels, d = cfg_.width;
    const std::int64_t nh = cfg_.heads, dh = d / nh, cp = cfg_.mapped_channels();
    auto rows = std::make_shared<ops::Index>();
    for (std::int64_t i = 0; i < hs; ++i)
        for (std::int64_t c = 0; c < cs; ++c)
            for (std::int64_t w = 0; w < ws; ++w) rows->push_back(static_cast<std::int32_t>((c * hs + i) * ws + w));
    row_index_ = rows;
    for (int part = 0; part < 3; ++part) {
        auto idx = std::make_shared<ops::Index>();
        for (std::int64_t h = 0; h < nh; ++h)
            for (std::int64_t i = 0; i < hs; ++i)
                for (std::int64_t e = 0; e < dh; ++e)
                    idx->push_back(static_cast<std::int32_t>(i * 3 * d + part * d + h * dh + e));
        head_index_.push_back(idx);
    }
    auto merge = std::make_shared<ops::Index>();
    for (std::int64_t i = 0; i < hs; ++i)
        for (std::int64_t h = 0; h < nh; ++h)
            for (std::int64_t e = 0; e < dh; ++e) merge->push_back(static_cast<std::int32_t>((h * hs + i) * dh + e));
    merge_index_ = merge;
    // Each token's d-vector is read as [C', W_s]; channels then lead.
    auto unfold = std::make_shared<ops::Index>();
    for (std::int64_t c = 0; c < cp; ++c)
        for (std::int64_t i = 0; i < hs; ++i)
            for (std::int64_t w = 0; w < ws; ++w) unfold->push_back(static_cast<std::int32_t>(i * d + c * ws + w));
    unfold_index_ = unfold;
}

template <typename T>
Var<T> SEFormer<T>::embed_rows(const Var<T>& sino) const {
    const Shape expect{cfg_.channels, cfg_.angles, cfg_.bins};
    if (sino.shape() != expect)
        throw ShapeError("se_former: sinogram " + shape_str(sino.shape()) + ", expected " + shape_str(expect));
    Var<T> rows = ops::gather(sino, {cfg_.angles, cfg_.channels * cfg_.bins}, row_index_);
    return ops::add(ops::linear(rows, embed_w_, embed_b_), pos_);
}

template <typename T>
Var<T> SEFormer<T>::split_heads(const Var<T>& qkv, int part) const {
    return ops::gather(qkv, {cfg_.heads, cfg_.angles, cfg_.width / cfg_.heads}, head_index_[part]);
}

template <typename T>
Var<T> SEFormer<T>::self_attention(const Var<T>& tokens, std::int64_t block) const {
    const Block& b = blocks_.at(static_cast<std::size_t>(block));
    Var<T> qkv = ops::linear(tokens, b.qkv_w, b.qkv_b);
    Var<T> att = ops::attention(split_heads(qkv, 0), split_heads(qkv, 1), split_heads(qkv, 2), Var<T>{});
    Var<T> merged = ops::gather(att, {cfg_.angles, cfg_.width}, merge_index_);
    return ops::linear(merged, b.proj_w, b.proj_b);
}

template <typename T>
Tensor<T> SEFormer<T>::attention_probs(const Var<T>& tokens, std::int64_t block) const {
    const Block& b = blocks_.at(static_cast<std::size_t>(block));
    Var<T> qkv = ops::linear(ops::layer_norm(tokens, b.ln1_gamma, b.ln1_beta), b.qkv_w, b.qkv_b);
    return ops::attention_probs(split_heads(qkv, 0).value(), split_heads(qkv, 1).value(), static_cast<const Tensor<T>*>(nullptr));
}

template <typename T>
Var<T> SEFormer<T>::encoder_block(const Var<T>& tokens, std::int64_t block) const {
    const Block& b = blocks_.at(static_cast<std::size_t>(block));
    Var<T> g = ops::add(tokens, self_attention(ops::layer_norm(tokens, b.ln1_gamma, b.ln1_beta), block));
    Var<T> h = ops::layer_norm(g, b.ln2_gamma, b.ln2_beta);
    Var<T> ffn = ops::linear(ops::gelu(ops::linear(h, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    return ops::add(g, ffn);
}

template <typename T>
Var<T> SEFormer<T>::feature_map(const Var<T>& tokens) const {
    if (tokens.shape() != Shape{cfg_.angles, cfg_.width})
        throw ShapeError("se_former: feature_map expects [H_s, d], got " + shape_str(tokens.shape()));
    Var<T> unfolded = ops::gather(tokens, {cfg_.mapped_channels(), cfg_.angles, cfg_.bins}, unfold_index_);
    return ops::conv2d(unfolded, map_w_, map_b_);
}

template <typename T>
Var<T> SEFormer<T>::forward(const Var<T>& sino) const {
    Var<T> f = embed_rows(sino);
    for (std::int64_t j = 0; j < cfg_.blocks; ++j) f = encoder_block(f, j);
    return ops::add(sino, feature_map(f));
}

template class SEFormer<float>;
template class SEFormer<double>;

}  // namespace trido
