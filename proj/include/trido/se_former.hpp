#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trido/ops.hpp"
#include "trido/params.hpp"

namespace trido {

struct SEFormerConfig {
    std::int64_t angles = 64;    // H_s, one token per view angle
    std::int64_t bins = 64;      // W_s
    std::int64_t channels = 1;   // C_s
    std::int64_t width = 256;    // d
    std::int64_t blocks = 2;     // T
    std::int64_t heads = 4;
    std::int64_t ffn_ratio = 4;

    /// d / W_s, the channel count after the feature-mapping reshape.
    std::int64_t mapped_channels() const { return width / bins; }
    void validate() const;
};

/// Sinogram denoiser over row tokens. Parameters live in a ParamStore under
/// "se_former/"; the model only binds to them.
template <typename T>
class SEFormer {
public:
    static constexpr const char* kPrefix = "se_former/";

    /// Creates and initialises every parameter in `store`.
    static void register_params(const SEFormerConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng);

    SEFormer(const SEFormerConfig& cfg, const ParamStore<T>& store);

    const SEFormerConfig& config() const noexcept { return cfg_; }

    /// [C_s, H_s, W_s] -> F_0 [H_s, d]
    Var<T> embed_rows(const Var<T>& sino) const;
    /// Pre-LN encoder block: G = F + MSA(LN(F)); F' = G + FFN(LN(G)).
    Var<T> encoder_block(const Var<T>& tokens, std::int64_t block) const;
    /// Multi-head self-attention over the H_s tokens (no residual).
    Var<T> self_attention(const Var<T>& tokens, std::int64_t block) const;
    /// F_T [H_s, d] -> residual sinogram [C_s, H_s, W_s]
    Var<T> feature_map(const Var<T>& tokens) const;
    /// S_E = S_L + feature_map(blocks(embed_rows(S_L)))
    Var<T> forward(const Var<T>& sino) const;

    /// Attention probabilities [heads, H_s, H_s] of one block for inspection.
    Tensor<T> attention_probs(const Var<T>& tokens, std::int64_t block) const;

private:
    struct Block {
        Var<T> ln1_gamma, ln1_beta, qkv_w, qkv_b, proj_w, proj_b;
        Var<T> ln2_gamma, ln2_beta, fc1_w, fc1_b, fc2_w, fc2_b;
    };

    Var<T> split_heads(const Var<T>& qkv, int part) const;

    SEFormerConfig cfg_;
    Var<T> embed_w_, embed_b_, pos_, map_w_, map_b_;
    std::vector<Block> blocks_;
    ops::IndexPtr row_index_;                   // [C_s, H_s, W_s] -> [H_s, C_s W_s]
    std::vector<ops::IndexPtr> head_index_;     // qkv [H_s, 3d] -> [heads, H_s, dh]
    ops::IndexPtr merge_index_;                 // [heads, H_s, dh] -> [H_s, d]
    ops::IndexPtr unfold_index_;                // [H_s, d] -> [C', H_s, W_s]
};

extern template class SEFormer<float>;
extern template class SEFormer<double>;

}  // namespace trido
