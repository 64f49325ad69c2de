#include "trido/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace trido {

using nlohmann::ordered_json;

namespace {

ordered_json to_tree(const RunConfig& c) {
    ordered_json j;
    j["geometry"] = {{"n_angles", c.geometry.n_angles},
                     {"n_bins", c.geometry.n_bins},
                     {"bin_spacing", c.geometry.bin_spacing},
                     {"image_size", c.geometry.image_size}};
    j["data"] = {{"n_train", c.n_train},         {"n_val", c.n_val},
                 {"dose_factor", c.dose_factor}, {"seed", c.data_seed},
                 {"noise", c.noise},             {"peak_counts", c.peak_counts},
                 {"osem_subsets", c.osem.n_subsets}, {"osem_iters", c.osem.n_iters}};
    j["se_former"] = {{"width", c.se_width}, {"blocks", c.se_blocks}, {"heads", c.se_heads},
                      {"ffn_ratio", c.se_ffn_ratio}};
    j["ssr_former"] = {{"channels", c.ssr.channels}, {"heads", c.ssr.heads}, {"window", c.ssr.window},
                       {"ffn_ratio", c.ssr.ffn_ratio}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"warm_epochs", c.train.warm_epochs},
                  {"batch_size", c.train.batch_size},
                  {"base_lr", c.train.base_lr},
                  {"lambda", c.train.lambda},
                  {"seed", c.train.seed},
                  {"checkpoint_every", c.train.checkpoint_every},
                  {"train_gfp", c.train.train_gfp}};
    j["model_seed"] = c.model_seed;
    return j;
}

template <typename V>
V field(const ordered_json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string(section) + "." + key + ": wrong type (" +
                          j.at(section).at(key).dump() + ")");
    }
}

RunConfig from_tree(const ordered_json& j) {
    RunConfig c;
    c.geometry.n_angles = field<std::int64_t>(j, "geometry", "n_angles");
    c.geometry.n_bins = field<std::int64_t>(j, "geometry", "n_bins");
    c.geometry.bin_spacing = field<double>(j, "geometry", "bin_spacing");
    c.geometry.image_size = field<std::int64_t>(j, "geometry", "image_size");
    c.n_train = field<std::int64_t>(j, "data", "n_train");
    c.n_val = field<std::int64_t>(j, "data", "n_val");
    c.dose_factor = field<double>(j, "data", "dose_factor");
    c.data_seed = field<std::uint64_t>(j, "data", "seed");
    c.noise = field<bool>(j, "data", "noise");
    c.peak_counts = field<double>(j, "data", "peak_counts");
    c.osem.n_subsets = field<std::int64_t>(j, "data", "osem_subsets");
    c.osem.n_iters = field<std::int64_t>(j, "data", "osem_iters");
    c.se_width = field<std::int64_t>(j, "se_former", "width");
    c.se_blocks = field<std::int64_t>(j, "se_former", "blocks");
    c.se_heads = field<std::int64_t>(j, "se_former", "heads");
    c.se_ffn_ratio = field<std::int64_t>(j, "se_former", "ffn_ratio");
    c.ssr.channels = field<std::array<std::int64_t, kSsrLevels>>(j, "ssr_former", "channels");
    c.ssr.heads = field<std::array<std::int64_t, kSsrLevels>>(j, "ssr_former", "heads");
    c.ssr.window = field<std::int64_t>(j, "ssr_former", "window");
    c.ssr.ffn_ratio = field<std::int64_t>(j, "ssr_former", "ffn_ratio");
    c.train.epochs = field<int>(j, "train", "epochs");
    c.train.warm_epochs = field<int>(j, "train", "warm_epochs");
    c.train.batch_size = field<int>(j, "train", "batch_size");
    c.train.base_lr = field<double>(j, "train", "base_lr");
    c.train.lambda = field<double>(j, "train", "lambda");
    c.train.seed = field<std::uint64_t>(j, "train", "seed");
    c.train.checkpoint_every = field<int>(j, "train", "checkpoint_every");
    c.train.train_gfp = field<bool>(j, "train", "train_gfp");
    c.train.dose_factor = c.dose_factor;
    try {
        c.model_seed = j.at("model_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("model_seed: wrong type");
    }
    return c;
}

// Copies `patch` into `tree`, refusing keys the tree does not have.
void merge_strict(ordered_json& tree, const ordered_json& patch, const std::string& where) {
    if (!patch.is_object()) throw ConfigError((where.empty() ? "config" : where) + ": expected an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = where.empty() ? it.key() : where + "." + it.key();
        if (!tree.contains(it.key())) throw ConfigError("unknown configuration key '" + key + "'");
        if (tree[it.key()].is_object())
            merge_strict(tree[it.key()], it.value(), key);
        else
            tree[it.key()] = it.value();
    }
}

}  // namespace

RunConfig RunConfig::desk() {
    RunConfig c;
    c.se_width = 64;
    c.ssr.channels = {16, 32, 64, 128};
    c.train.epochs = 30;
    c.train.warm_epochs = 10;
    c.train.base_lr = 1e-3;  // 4e-4 underfits in 30 epochs
    c.train.checkpoint_every = 10;
    return c;
}

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.se.angles = geometry.n_angles;
    m.se.bins = geometry.n_bins;
    m.se.channels = 1;
    m.se.width = se_width;
    m.se.blocks = se_blocks;
    m.se.heads = se_heads;
    m.se.ffn_ratio = se_ffn_ratio;
    m.ssr = ssr;
    m.ssr.height = geometry.n_angles;
    m.ssr.width = geometry.n_bins;
    m.ssr.in_channels = 1;
    m.ssr.out_channels = 1;
    return m;
}

pet::DatasetOptions RunConfig::dataset_options() const {
    pet::DatasetOptions o;
    o.n_slices = n_train + n_val;
    o.geometry = geometry;
    o.dose_factor = dose_factor;
    o.seed = data_seed;
    o.noise = noise;
    o.peak_counts = peak_counts;
    o.osem = osem;
    return o;
}

void RunConfig::validate() const {
    auto wrap = [](const char* section, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            // Most component messages already lead with their own name.
            const std::string what = e.what(), prefix = std::string(section) + ":";
            throw ConfigError(what.rfind(prefix, 0) == 0 ? what : prefix + " " + what);
        }
    };
    wrap("geometry", [&] { geometry.validate(); });
    if (n_train < 1) throw ConfigError("data.n_train must be >= 1");
    if (n_val < 0) throw ConfigError("data.n_val must be >= 0");
    if (!(dose_factor > 0 && dose_factor <= 1)) throw ConfigError("data.dose_factor must lie in (0, 1]");
    if (!(peak_counts > 0)) throw ConfigError("data.peak_counts must be > 0");
    if (osem.n_subsets < 1 || osem.n_iters < 1) throw ConfigError("data.osem_subsets and data.osem_iters must be >= 1");
    if (geometry.image_size != geometry.n_angles || geometry.n_bins != geometry.n_angles)
        throw ConfigError("geometry: the reconstruction network maps the sinogram grid onto the image grid, so "
                          "n_angles, n_bins and image_size must be equal");
    wrap("model", [&] { model().validate(); });
    wrap("train", [&] { train.validate(); });
}

std::string RunConfig::to_json() const { return to_tree(*this).dump(2) + "\n"; }

RunConfig RunConfig::from_json(const std::string& text, const RunConfig& base) {
    ordered_json patch;
    try {
        patch = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ordered_json tree = to_tree(base);
    merge_strict(tree, patch, "");
    RunConfig c = from_tree(tree);
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const RunConfig& base) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str(), base);
}

RunConfig RunConfig::from_json(const std::string& text) { return from_json(text, RunConfig{}); }
RunConfig RunConfig::load(const std::filesystem::path& path) { return load(path, RunConfig{}); }

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
    ordered_json tree = to_tree(*this);
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + a + "' is not key=value");
        const std::string key = a.substr(0, eq), raw = a.substr(eq + 1);
        ordered_json value;
        try {
            value = ordered_json::parse(raw);
        } catch (const nlohmann::json::parse_error&) {
            value = raw;
        }
        ordered_json patch = value;
        std::string rest = key;
        std::vector<std::string> parts;
        for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
            parts.push_back(rest.substr(0, pos));
        parts.push_back(rest);
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = ordered_json{{*it, patch}};
        merge_strict(tree, patch, "");
    }
    *this = from_tree(tree);
    validate();
}

}  // namespace trido
