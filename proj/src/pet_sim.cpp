#include "trido/pet_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace trido::pet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

void check_sinogram(const Sinogram& sino, const Geometry& geo) {
    if (sino.data.shape() != Shape{geo.n_angles, geo.n_bins})
        throw ShapeError("sinogram " + shape_str(sino.data.shape()) + " does not match geometry " +
                         std::to_string(geo.n_angles) + "x" + std::to_string(geo.n_bins));
}

std::vector<std::int64_t> all_angles(const Geometry& geo) {
    std::vector<std::int64_t> a(static_cast<std::size_t>(geo.n_angles));
    for (std::int64_t i = 0; i < geo.n_angles; ++i) a[i] = i;
    return a;
}

}  // namespace

void Geometry::validate() const {
    if (n_angles < 1) throw std::invalid_argument("geometry: n_angles must be >= 1");
    if (image_size < 1) throw std::invalid_argument("geometry: image_size must be >= 1");
    if (n_bins < image_size) throw std::invalid_argument("geometry: n_bins must be >= image_size");
    if (!(bin_spacing > 0)) throw std::invalid_argument("geometry: bin_spacing must be positive");
}

double Geometry::angle(std::int64_t a) const {
    return std::numbers::pi * static_cast<double>(a) / static_cast<double>(n_angles);
}

ImageGrid render_phantom(const PhantomSpec& spec, std::int64_t size) {
    if (size <= 0) throw std::invalid_argument("render_phantom: size must be positive");
    if (spec.ellipses.empty()) throw std::invalid_argument("render_phantom: at least one ellipse required");
    ImageGrid img{Tensor<double>({size, size})};
    const double c = static_cast<double>(size - 1) / 2.0;
    const double half = static_cast<double>(size) / 2.0;
    for (const auto& e : spec.ellipses) {
        if (!(e.semi_x > 0) || !(e.semi_y > 0)) throw std::invalid_argument("render_phantom: semi-axes must be > 0");
        const double cr = std::cos(e.rotation), sr = std::sin(e.rotation);
        for (std::int64_t i = 0; i < size; ++i)
            for (std::int64_t j = 0; j < size; ++j) {
                const double u = (static_cast<double>(j) - c) / half - e.center_x;
                const double v = (static_cast<double>(i) - c) / half - e.center_y;
                const double p = (u * cr + v * sr) / e.semi_x;
                const double q = (-u * sr + v * cr) / e.semi_y;
                if (p * p + q * q <= 1.0) img.data[static_cast<std::size_t>(i * size + j)] += e.intensity;
            }
    }
    for (auto& v : img.data.vec()) v = std::max(0.0, v);
    return img;
}

Projector::Projector(const Geometry& geo) : geo_(geo) {
    geo_.validate();
    const std::int64_t n = geo.image_size;
    const double c = static_cast<double>(n - 1) / 2.0;
    const double bin_c = static_cast<double>(geo.n_bins - 1) / 2.0;
    const std::int64_t steps = static_cast<std::int64_t>(std::ceil(static_cast<double>(n) * std::numbers::sqrt2 / 2.0)) + 1;
    std::vector<std::pair<std::int32_t, double>> row;
    row_start_.reserve(static_cast<std::size_t>(geo.n_angles * geo.n_bins + 1));
    row_start_.push_back(0);
    for (std::int64_t a = 0; a < geo.n_angles; ++a) {
        const double ca = std::cos(geo.angle(a)), sa = std::sin(geo.angle(a));
        for (std::int64_t b = 0; b < geo.n_bins; ++b) {
            const double s = (static_cast<double>(b) - bin_c) * geo.bin_spacing;
            row.clear();
            for (std::int64_t k = -steps; k <= steps; ++k) {
                const double t = static_cast<double>(k);
                const double col = s * ca - t * sa + c;
                const double rw = s * sa + t * ca + c;
                const double fx = std::floor(col), fy = std::floor(rw);
                const double dx = col - fx, dy = rw - fy;
                const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
                const double wts[4] = {(1 - dx) * (1 - dy), dx * (1 - dy), (1 - dx) * dy, dx * dy};
                const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
                const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
                for (int q = 0; q < 4; ++q) {
                    if (xs[q] < 0 || xs[q] >= n || ys[q] < 0 || ys[q] >= n || wts[q] <= 0) continue;
                    row.emplace_back(static_cast<std::int32_t>(ys[q] * n + xs[q]), wts[q]);
                }
            }
            std::sort(row.begin(), row.end());
            for (std::size_t i = 0; i < row.size();) {
                std::size_t j = i;
                double w = 0;
                while (j < row.size() && row[j].first == row[i].first) w += row[j++].second;
                pixel_.push_back(row[i].first);
                weight_.push_back(w);
                i = j;
            }
            row_start_.push_back(static_cast<std::int64_t>(pixel_.size()));
        }
    }
}

void Projector::forward(const double* image, double* sino, const std::vector<std::int64_t>& angles) const {
    const auto& list = angles.empty() ? all_angles(geo_) : angles;
    for (std::int64_t a : list)
        for (std::int64_t b = 0; b < geo_.n_bins; ++b) {
            const std::int64_t r = a * geo_.n_bins + b;
            double acc = 0;
            for (std::int64_t e = row_start_[r]; e < row_start_[r + 1]; ++e) acc += weight_[e] * image[pixel_[e]];
            sino[r] = acc;
        }
}

void Projector::backward(const double* sino, double* image, const std::vector<std::int64_t>& angles) const {
    const auto& list = angles.empty() ? all_angles(geo_) : angles;
    for (std::int64_t a : list)
        for (std::int64_t b = 0; b < geo_.n_bins; ++b) {
            const std::int64_t r = a * geo_.n_bins + b;
            const double y = sino[r];
            if (y == 0.0) continue;
            for (std::int64_t e = row_start_[r]; e < row_start_[r + 1]; ++e) image[pixel_[e]] += weight_[e] * y;
        }
}

Sinogram forward_project(const ImageGrid& img, const Geometry& geo) {
    geo.validate();
    if (img.data.shape() != Shape{geo.image_size, geo.image_size})
        throw ShapeError("forward_project: image " + shape_str(img.data.shape()) + " does not match image_size " +
                         std::to_string(geo.image_size));
    Sinogram out{Tensor<double>({geo.n_angles, geo.n_bins}), geo};
    Projector(geo).forward(img.data.data(), out.data.data());
    return out;
}

ImageGrid back_project(const Sinogram& sino, const Geometry& geo) {
    geo.validate();
    check_sinogram(sino, geo);
    ImageGrid out{Tensor<double>({geo.image_size, geo.image_size})};
    Projector(geo).backward(sino.data.data(), out.data.data());
    return out;
}

Sinogram simulate_dose(const Sinogram& sino, double dose_factor, std::uint64_t seed) {
    if (!(dose_factor > 0.0) || dose_factor > 1.0)
        throw std::invalid_argument("simulate_dose: dose_factor must lie in (0, 1]");
    Sinogram out = sino;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double count = sino.data[i];
        if (count < 0) throw std::invalid_argument("simulate_dose: negative count");
        if (count == 0) {
            out.data[i] = 0;
            continue;
        }
        std::mt19937_64 rng(mix(seed, i));
        std::poisson_distribution<std::int64_t> draw(dose_factor * count);
        out.data[i] = static_cast<double>(draw(rng)) / dose_factor;
    }
    return out;
}

ImageGrid osem_reconstruct(const Sinogram& sino, const Geometry& geo, const OsemOptions& opts,
                           std::vector<ImageGrid>* per_iteration) {
    return osem_reconstruct(sino, Projector(geo), opts, per_iteration);
}

ImageGrid osem_reconstruct(const Sinogram& sino, const Projector& projector, const OsemOptions& opts,
                           std::vector<ImageGrid>* per_iteration) {
    const Geometry& geo = projector.geometry();
    check_sinogram(sino, geo);
    if (opts.n_subsets < 1 || geo.n_angles % opts.n_subsets != 0)
        throw std::invalid_argument("osem: " + std::to_string(geo.n_angles) + " angles not divisible into " +
                                    std::to_string(opts.n_subsets) + " subsets");
    if (opts.n_iters < 0) throw std::invalid_argument("osem: negative iteration count");
    for (double v : sino.data.vec())
        if (v < 0) throw std::invalid_argument("osem: negative counts in sinogram");

    const auto npix = static_cast<std::size_t>(geo.image_size * geo.image_size);
    std::vector<std::vector<std::int64_t>> subsets(static_cast<std::size_t>(opts.n_subsets));
    for (std::int64_t a = 0; a < geo.n_angles; ++a) subsets[a % opts.n_subsets].push_back(a);

    // Subset sensitivities P_s^T 1.
    std::vector<std::vector<double>> sens(subsets.size(), std::vector<double>(npix, 0.0));
    const std::vector<double> ones(static_cast<std::size_t>(geo.n_angles * geo.n_bins), 1.0);
    for (std::size_t s = 0; s < subsets.size(); ++s) projector.backward(ones.data(), sens[s].data(), subsets[s]);

    ImageGrid x{Tensor<double>({geo.image_size, geo.image_size}, 1.0)};
    std::vector<double> est(ones.size()), ratio(ones.size()), corr(npix);
    for (std::int64_t it = 0; it < opts.n_iters; ++it) {
        for (std::size_t s = 0; s < subsets.size(); ++s) {
            projector.forward(x.data.data(), est.data(), subsets[s]);
            for (std::int64_t a : subsets[s])
                for (std::int64_t b = 0; b < geo.n_bins; ++b) {
                    const std::size_t r = static_cast<std::size_t>(a * geo.n_bins + b);
                    ratio[r] = est[r] > 0 ? sino.data[r] / est[r] : 0.0;
                }
            std::fill(corr.begin(), corr.end(), 0.0);
            projector.backward(ratio.data(), corr.data(), subsets[s]);
            for (std::size_t p = 0; p < npix; ++p)
                if (sens[s][p] > 0) x.data[p] *= corr[p] / sens[s][p];
        }
        if (per_iteration) per_iteration->push_back(x);
    }
    return x;
}

PhantomSpec random_phantom(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    PhantomSpec spec;
    // Body outline.
    const double bx = uni(0.6, 0.8), by = uni(0.7, 0.88);
    const double bcx = uni(-0.05, 0.05), bcy = uni(-0.05, 0.05), brot = uni(-0.3, 0.3);
    spec.ellipses.push_back({bcx, bcy, bx, by, brot, uni(0.8, 1.2)});
    // Inner structures, kept inside the body.
    const int n_inner = std::uniform_int_distribution<int>(3, 7)(rng);
    for (int k = 0; k < n_inner; ++k) {
        const double r = uni(0.0, 0.6), phi = uni(0.0, 2.0 * std::numbers::pi);
        Ellipse e;
        e.center_x = bcx + r * bx * std::cos(phi);
        e.center_y = bcy + r * by * std::sin(phi);
        const double room = std::max(0.06, 0.9 - r);
        e.semi_x = uni(0.05, std::min(0.3, room * bx));
        e.semi_y = uni(0.05, std::min(0.3, room * by));
        e.rotation = uni(0.0, std::numbers::pi);
        e.intensity = uni(-0.6, 1.5);
        spec.ellipses.push_back(e);
    }
    return spec;
}

Dataset make_dataset(const DatasetOptions& opts) {
    if (opts.n_slices < 1) throw std::invalid_argument("make_dataset: n_slices must be >= 1");
    opts.geometry.validate();
    if (!(opts.peak_counts > 0)) throw std::invalid_argument("make_dataset: peak_counts must be positive");
    const Projector projector(opts.geometry);
    Dataset ds;
    ds.meta.geometry = opts.geometry;
    ds.meta.dose_factor = opts.dose_factor;
    ds.meta.seed = opts.seed;
    ds.meta.noise = opts.noise;
    ds.meta.peak_counts = opts.peak_counts;
    ds.meta.osem = opts.osem;
    const auto& geo = opts.geometry;
    for (std::int64_t i = 0; i < opts.n_slices; ++i) {
        const ImageGrid phantom = render_phantom(random_phantom(mix(opts.seed, static_cast<std::uint64_t>(i), 1)),
                                                 geo.image_size);
        Sample s;
        s.standard = Sinogram{Tensor<double>({geo.n_angles, geo.n_bins}), geo};
        projector.forward(phantom.data.data(), s.standard.data.data());
        const double peak = *std::max_element(s.standard.data.vec().begin(), s.standard.data.vec().end());
        if (peak > 0)
            for (auto& v : s.standard.data.vec()) v *= opts.peak_counts / peak;
        s.low = opts.noise ? simulate_dose(s.standard, opts.dose_factor, mix(opts.seed, static_cast<std::uint64_t>(i), 2))
                           : s.standard;
        s.target = osem_reconstruct(s.standard, projector, opts.osem);
        ds.samples.push_back(std::move(s));
    }
    double smax = 0, imax = 0;
    for (const auto& s : ds.samples) {
        for (double v : s.low.data.vec()) smax = std::max(smax, v);
        for (double v : s.standard.data.vec()) smax = std::max(smax, v);
        for (double v : s.target.data.vec()) imax = std::max(imax, v);
    }
    ds.meta.sino_max = smax > 0 ? smax : 1.0;
    ds.meta.image_max = imax > 0 ? imax : 1.0;
    for (auto& s : ds.samples) {
        for (auto& v : s.low.data.vec()) v /= ds.meta.sino_max;
        for (auto& v : s.standard.data.vec()) v /= ds.meta.sino_max;
        for (auto& v : s.target.data.vec()) v /= ds.meta.image_max;
    }
    return ds;
}

ImageGrid osem_normalized(const Tensor<double>& sino, const DatasetMeta& meta) {
    Sinogram raw{sino.reshaped({meta.geometry.n_angles, meta.geometry.n_bins}), meta.geometry};
    for (auto& v : raw.data.vec()) v = std::max(0.0, v) * meta.sino_max;
    ImageGrid img = osem_reconstruct(raw, meta.geometry, meta.osem);
    for (auto& v : img.data.vec()) v /= meta.image_max;
    return img;
}

}  // namespace trido::pet
