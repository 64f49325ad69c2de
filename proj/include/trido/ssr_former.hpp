#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trido/ops.hpp"
#include "trido/params.hpp"

namespace trido {

inline constexpr int kSsrLevels = 4;

struct SSRFormerConfig {
    std::array<std::int64_t, kSsrLevels> channels{16, 32, 64, 128};
    std::array<std::int64_t, kSsrLevels> heads{2, 4, 4, 8};
    std::int64_t window = 4;  // M
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t in_channels = 1;
    std::int64_t out_channels = 1;
    std::int64_t ffn_ratio = 2;

    std::int64_t shift() const { return window / 2; }
    std::int64_t level_height(int level) const { return height >> level; }
    std::int64_t level_width(int level) const { return width >> level; }
    void validate() const;
};

// ---- window helpers (pure permutations) -----------------------------------

/// Gather index taking [C, H, W] to windows [N, C, M, M] (row-major window
/// order), after an optional cyclic roll by -shift in both axes.
ops::IndexPtr window_partition_index(std::int64_t channels, std::int64_t height, std::int64_t width,
                                     std::int64_t window, std::int64_t shift = 0);
/// Inverse of window_partition_index.
ops::IndexPtr window_reverse_index(std::int64_t channels, std::int64_t height, std::int64_t width,
                                   std::int64_t window, std::int64_t shift = 0);

template <typename T>
Var<T> window_partition(const Var<T>& x, std::int64_t window);
template <typename T>
Var<T> window_reverse(const Var<T>& windows, std::int64_t height, std::int64_t width, std::int64_t window);

/// irdft2(filter * rdft2(x)) with a real half-spectrum filter [C, H, W/2+1].
template <typename T>
Var<T> global_frequency_parser(const Var<T>& x, const Var<T>& filter);

/// Gather index for the relative position bias [heads, M^2, M^2] drawn from
/// a table [(2M-1)^2, heads].
ops::IndexPtr relative_bias_index(std::int64_t window, std::int64_t heads);

/// U-shaped spatial-spectral reconstruction network. Parameters live under
/// "ssr_former/".
template <typename T>
class SSRFormer {
public:
    static constexpr const char* kPrefix = "ssr_former/";

    static void register_params(const SSRFormerConfig& cfg, ParamStore<T>& store, std::mt19937_64& rng);

    SSRFormer(const SSRFormerConfig& cfg, const ParamStore<T>& store);

    const SSRFormerConfig& config() const noexcept { return cfg_; }

    /// Block names in forward order: enc0..enc2, bottleneck, dec2..dec0.
    static std::vector<std::string> block_names();
    static int block_level(const std::string& block);

    /// Window attention (no residual) of layer `layer` (0 or 1) of `block`.
    Var<T> window_attention(const Var<T>& x, const std::string& block, int layer, bool shifted) const;
    /// Spatial-spectral transformer layer.
    Var<T> sstl(const Var<T>& x, const std::string& block, int layer, bool shifted) const;
    /// sstl(unshifted) -> sstl(shifted) -> 3x3 conv, plus the block input.
    Var<T> sstb(const Var<T>& x, const std::string& block) const;
    /// Same as sstb but with both layers unshifted (used to show the shift matters).
    Var<T> sstb_unshifted(const Var<T>& x, const std::string& block) const;

    Var<T> downsample(const Var<T>& x, int level) const;
    Var<T> upsample(const Var<T>& x, int level) const;

    /// [C_s, H, W] sinogram -> [1, H, W] image.
    Var<T> forward(const Var<T>& sino) const;

    const Var<T>& gfp_filter(const std::string& block, int layer) const;

private:
    struct Layer {
        Var<T> ln1_gamma, ln1_beta, qkv_w, qkv_b, rel_table, proj_w, proj_b, gfp;
        Var<T> ln2_gamma, ln2_beta, fc1_w, fc1_b, fc2_w, fc2_b;
    };
    struct Block {
        std::array<Layer, 2> layers;
        Var<T> conv_w, conv_b;
        int level = 0;
        std::array<std::array<ops::IndexPtr, 3>, 2> to_windows;  // qkv [3C,H,W] -> q/k/v [N*heads, M^2, dh]
        std::array<ops::IndexPtr, 2> from_windows;                // [N*heads, M^2, dh] -> [C,H,W]
        ops::IndexPtr bias_index;
    };

    const Block& block(const std::string& name) const;
    Var<T> sstb_impl(const Var<T>& x, const Block& b, bool shift_second) const;
    Var<T> sstl_impl(const Var<T>& x, const Block& b, int layer, bool shifted) const;
    Var<T> attention_impl(const Var<T>& x, const Block& b, int layer, bool shifted) const;

    SSRFormerConfig cfg_;
    std::vector<std::string> names_;
    std::vector<Block> blocks_;
    Var<T> head_w_, head_b_, tail_w_, tail_b_;
    std::array<Var<T>, kSsrLevels - 1> down_w_, down_b_, up_w_, up_b_, merge_w_, merge_b_;
};

extern template class SSRFormer<float>;
extern template class SSRFormer<double>;

}  // namespace trido
