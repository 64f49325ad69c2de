#pragma once

#include <cstdint>
#include <vector>

#include "trido/tensor.hpp"

namespace trido::pet {

struct Ellipse {
    double center_x = 0.0;  // fraction of the image half-width, [-1, 1]
    double center_y = 0.0;
    double semi_x = 0.5;    // fraction of the image half-width, (0, 1]
    double semi_y = 0.5;
    double rotation = 0.0;  // radians
    double intensity = 1.0;
};

struct PhantomSpec {
    std::vector<Ellipse> ellipses;
};

/// Parallel-beam geometry, angles uniform over [0, pi).
struct Geometry {
    std::int64_t n_angles = 64;
    std::int64_t n_bins = 64;
    double bin_spacing = 1.0;  // image pixels per radial bin
    std::int64_t image_size = 64;

    /// Throws std::invalid_argument when an invariant is violated.
    void validate() const;
    double angle(std::int64_t a) const;
    friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// n_angles x n_bins non-negative counts.
struct Sinogram {
    Tensor<double> data;
    Geometry geometry;
};

/// image_size x image_size non-negative activity.
struct ImageGrid {
    Tensor<double> data;
};

ImageGrid render_phantom(const PhantomSpec& spec, std::int64_t size);

/// Sparse ray-sample system matrix for one geometry. Rows are (angle, bin)
/// pairs in sinogram order; entries merge the bilinear weights of all unit
/// steps along the ray.
class Projector {
public:
    explicit Projector(const Geometry& geo);

    const Geometry& geometry() const noexcept { return geo_; }
    /// Projects only the angles listed (all when empty) into `out`.
    void forward(const double* image, double* sino, const std::vector<std::int64_t>& angles = {}) const;
    /// Accumulates the transpose of `forward` over the same angles into `image`.
    void backward(const double* sino, double* image, const std::vector<std::int64_t>& angles = {}) const;

private:
    Geometry geo_;
    std::vector<std::int64_t> row_start_;
    std::vector<std::int32_t> pixel_;
    std::vector<double> weight_;
};

/// Discrete Radon transform: bilinear samples at unit steps along each ray.
Sinogram forward_project(const ImageGrid& img, const Geometry& geo);

/// Exact adjoint of forward_project.
ImageGrid back_project(const Sinogram& sino, const Geometry& geo);

/// Poisson thinning: each bin ~ Poisson(dose * count) / dose. Draws are a
/// function of (seed, bin index) only.
Sinogram simulate_dose(const Sinogram& sino, double dose_factor, std::uint64_t seed);

struct OsemOptions {
    std::int64_t n_subsets = 8;
    std::int64_t n_iters = 10;
};

/// Ordered-subsets EM from the all-ones image; subset s holds the angles
/// a with a % n_subsets == s. `per_iteration`, when given, receives a copy
/// of the estimate after every full iteration.
ImageGrid osem_reconstruct(const Sinogram& sino, const Geometry& geo, const OsemOptions& opts,
                           std::vector<ImageGrid>* per_iteration = nullptr);
ImageGrid osem_reconstruct(const Sinogram& sino, const Projector& projector, const OsemOptions& opts,
                           std::vector<ImageGrid>* per_iteration = nullptr);

/// Random head-like phantom: one large body ellipse plus inner structures.
PhantomSpec random_phantom(std::uint64_t seed);

struct DatasetOptions {
    std::int64_t n_slices = 1;
    Geometry geometry;
    double dose_factor = 0.25;
    std::uint64_t seed = 0;
    bool noise = true;
    double peak_counts = 1e4;  // max standard-dose bin before thinning
    OsemOptions osem;
};

struct DatasetMeta {
    Geometry geometry;
    double dose_factor = 0.25;
    std::uint64_t seed = 0;
    bool noise = true;
    double peak_counts = 1e4;
    OsemOptions osem;
    double sino_max = 1.0;   // divisor applied to every sinogram
    double image_max = 1.0;  // divisor applied to every image
};

struct Sample {
    Sinogram low;        // S_L
    Sinogram standard;   // S_S
    ImageGrid target;    // I_S
};

struct Dataset {
    std::vector<Sample> samples;
    DatasetMeta meta;
};

/// Simulates `n_slices` (S_L, S_S, I_S) triples normalised to [0, 1].
Dataset make_dataset(const DatasetOptions& opts);

/// OSEM run on a normalised sinogram, rescaled into the normalised image units
/// of the dataset (so it is comparable with I_S).
ImageGrid osem_normalized(const Tensor<double>& sino, const DatasetMeta& meta);

}  // namespace trido::pet
