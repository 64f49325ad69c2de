#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "trido/pet_sim.hpp"
#include "trido/tensor.hpp"
#include "trido/training.hpp"

namespace trido::io {

/// Malformed or unreadable persisted data.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- TDT1 tensor files --------------------------------------------------------
//
//   "TDT1" | u16 version | u8 dtype | u8 rank | rank x u32 extents | payload
//
// Everything little-endian. For complex-f32 the extents exclude the
// interleaved (re, im) pair.

inline constexpr std::uint16_t kTensorVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, c64 = 2 };

using AnyTensor = std::variant<Tensor<float>, Tensor<double>, ComplexTensor<float>>;

void write_tensor(std::ostream& os, const Tensor<float>& t);
void write_tensor(std::ostream& os, const Tensor<double>& t);
void write_tensor(std::ostream& os, const ComplexTensor<float>& t);
AnyTensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const AnyTensor& t);
AnyTensor load_tensor(const std::filesystem::path& path);
/// Loads any real dtype and widens it to double.
Tensor<double> load_real(const std::filesystem::path& path);

DType dtype_of(const AnyTensor& t);

// ---- datasets ------------------------------------------------------------------
//
// <dir>/<split>/{low,standard,target}.tdt   stacked [n, H, W] f64
// <dir>/<split>/metadata.json

void write_split(const std::filesystem::path& dir, const std::vector<pet::Sample>& samples,
                 const pet::DatasetMeta& meta);
pet::Dataset read_split(const std::filesystem::path& dir);

std::string meta_json(const pet::DatasetMeta& meta, std::size_t n_slices);
pet::DatasetMeta parse_meta(const std::string& json);

// ---- checkpoints ---------------------------------------------------------------
//
//   "TDCK" | u16 version | u32 header bytes | JSON header | u32 n |
//   n x (u32 name bytes | name | TDT1 record)
//
// Tensor names: "param/<p>", "adam_m/<p>", "adam_v/<p>". The header holds
// the model and training configuration, their digest, the loop position and
// per-parameter Adam step counters.

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    TrainerState state;
    std::string digest;  // ModelConfig::digest() at save time
    ParamStore<float> params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const TrainConfig& train,
                     const TrainerState& state, const ParamStore<float>& params);
/// Throws FormatError on a damaged file or a digest that does not match the
/// stored model configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- images ----------------------------------------------------------------------

/// 8-bit binary PGM. Values are scaled by `peak` (max of the image when <= 0)
/// and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const Tensor<double>& image, double peak = 0);

}  // namespace trido::io
