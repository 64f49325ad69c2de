#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "trido/pet_sim.hpp"
#include "trido/tensor.hpp"

namespace trido::eval {

/// PSNR in dB, or "identical" when the MSE is exactly zero.
struct Psnr {
    bool identical = false;
    double db = 0.0;

    /// +inf for identical inputs, so means and orderings stay meaningful.
    double value() const { return identical ? std::numeric_limits<double>::infinity() : db; }
    std::string str() const;
};

/// 10 log10(max(ref)^2 / MSE). Throws on shape mismatch or an all-zero ref.
Psnr psnr(const Tensor<double>& x, const Tensor<double>& ref);

/// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// dynamic range max(ref) - min(ref), windows fully inside the image.
/// Accepts [H,W] or [1,H,W]. Throws for a constant reference or H,W < 11.
double ssim(const Tensor<double>& x, const Tensor<double>& ref);

/// ||x - ref||^2 / ||ref||^2. Throws on a zero-norm reference.
double nmse(const Tensor<double>& x, const Tensor<double>& ref);

double mse(const Tensor<double>& x, const Tensor<double>& ref);

struct RadialSpectrum {
    std::vector<double> mean_power;   // per ring, over full-spectrum bins
    std::vector<double> total_power;  // per ring, sum of |X|^2
    std::vector<double> counts;       // full-spectrum bins per ring
};

/// |DFT|^2 binned by rounded radius. Radii past the last ring fold into it.
/// Throws unless the image is square and 1 <= n_rings <= N/2 + 1.
RadialSpectrum radial_spectrum(const Tensor<double>& image, std::int64_t n_rings);
RadialSpectrum radial_spectrum(const Tensor<double>& image);

// ---- reports ----------------------------------------------------------------

inline constexpr const char* kOsemLow = "osem_lpet";
inline constexpr const char* kOsemStandard = "osem_spet";
inline constexpr const char* kModel = "trido_former";

enum class RowKind { slice, mean, stddev };

struct MetricRow {
    std::string method;
    RowKind kind = RowKind::slice;
    std::int64_t slice = -1;  // -1 for aggregates
    Psnr psnr;
    double ssim = 0;
    double nmse = 0;
};

struct EvalReport {
    std::vector<MetricRow> rows;  // sorted by method; slices then mean, std

    std::vector<std::string> methods() const;
    const MetricRow& aggregate(const std::string& method, RowKind kind = RowKind::mean) const;
    std::string table() const;
    /// One JSON object per line.
    std::string jsonl() const;
};

/// A reconstruction method: normalised LPET sinogram -> normalised image.
struct Method {
    std::string label;
    std::function<Tensor<double>(const pet::Sample&)> reconstruct;
};

/// Scores OSEM on S_L, OSEM on S_S and every extra method against I_S.
/// Throws std::invalid_argument for an empty dataset or duplicate labels.
EvalReport evaluate(const std::vector<Method>& models, const pet::Dataset& data);

}  // namespace trido::eval
