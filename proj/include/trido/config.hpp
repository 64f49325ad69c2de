#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "trido/pet_sim.hpp"
#include "trido/training.hpp"

namespace trido {

/// Invalid configuration value or unknown key.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Everything a command needs, loadable from JSON:
///
///   { "geometry":   { n_angles, n_bins, bin_spacing, image_size },
///     "data":       { n_train, n_val, dose_factor, seed, noise, peak_counts,
///                     osem_subsets, osem_iters },
///     "se_former":  { width, blocks, heads, ffn_ratio },
///     "ssr_former": { channels[4], heads[4], window, ffn_ratio },
///     "train":      { epochs, warm_epochs, batch_size, base_lr, lambda, seed,
///                     checkpoint_every, train_gfp },
///     "model_seed": n }
///
/// Sections and keys are optional; missing ones keep their defaults.
struct RunConfig {
    pet::Geometry geometry;
    std::int64_t n_train = 200;
    std::int64_t n_val = 40;
    double dose_factor = 0.25;
    std::uint64_t data_seed = 1;
    bool noise = true;
    double peak_counts = 1e4;
    pet::OsemOptions osem;

    std::int64_t se_width = 256;
    std::int64_t se_blocks = 2;
    std::int64_t se_heads = 4;
    std::int64_t se_ffn_ratio = 4;

    SSRFormerConfig ssr;  // height/width/in/out are derived from the geometry
    TrainConfig train;
    std::uint64_t model_seed = 0;

    /// Reduced widths and a 30-epoch schedule for a single-core desk run.
    static RunConfig desk();

    ModelConfig model() const;
    pet::DatasetOptions dataset_options() const;

    /// Throws ConfigError naming the offending key.
    void validate() const;

    std::string to_json() const;
    /// Strict parse: unknown sections or keys are rejected, then validate().
    static RunConfig from_json(const std::string& text, const RunConfig& base);
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::filesystem::path& path, const RunConfig& base);
    static RunConfig load(const std::filesystem::path& path);

    /// Applies "section.key=value" overrides (value parsed as JSON, else as
    /// a string), then validates.
    void apply_overrides(const std::vector<std::string>& assignments);
};

}  // namespace trido
