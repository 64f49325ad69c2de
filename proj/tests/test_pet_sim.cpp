#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "trido/pet_sim.hpp"

using namespace trido;
using namespace trido::pet;
using namespace testing;

namespace {

Geometry geo_of(std::int64_t size, std::int64_t angles, std::int64_t bins) {
    Geometry g;
    g.image_size = size;
    g.n_angles = angles;
    g.n_bins = bins;
    return g;
}

ImageGrid disk(std::int64_t size, double radius_px, double intensity = 1.0) {
    const double half = static_cast<double>(size) / 2.0;
    return render_phantom({{{0, 0, radius_px / half, radius_px / half, 0, intensity}}}, size);
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    return std::inner_product(a.vec().begin(), a.vec().end(), b.vec().begin(), 0.0);
}

double nmse_of(const Tensor<double>& x, const Tensor<double>& ref) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - ref[i]) * (x[i] - ref[i]);
        den += ref[i] * ref[i];
    }
    return num / den;
}

// Bilinear sample with zero outside the grid.
double sample(const Tensor<double>& img, double row, double col) {
    const auto n = img.dim(0);
    const double fy = std::floor(row), fx = std::floor(col);
    const double dy = row - fy, dx = col - fx;
    double acc = 0;
    for (int q = 0; q < 4; ++q) {
        const auto y = static_cast<std::int64_t>(fy) + (q / 2), x = static_cast<std::int64_t>(fx) + (q % 2);
        if (y < 0 || y >= n || x < 0 || x >= n) continue;
        acc += ((q / 2) ? dy : 1 - dy) * ((q % 2) ? dx : 1 - dx) * img.at({y, x});
    }
    return acc;
}

}  // namespace

TEST_CASE("phantom rendering follows pixel-center containment") {
    const auto zero = render_phantom({{{0, 0, 0.5, 0.5, 0, 0.0}}}, 16);
    CHECK(max_abs(zero.data) == 0.0);

    const auto circle = render_phantom({{{0, 0, 0.5, 0.5, 0, 1.0}}}, 64);
    CHECK(circle.data.at({32, 32}) == 1.0);
    CHECK(circle.data.at({1, 1}) == 0.0);

    const auto two = render_phantom({{{0, 0, 0.5, 0.5, 0, 1.0}, {0.1, 0, 0.3, 0.2, 0.4, 0.5}}}, 32);
    CHECK(two.data.at({16, 17}) == 1.5);

    const auto neg = render_phantom({{{0, 0, 0.5, 0.5, 0, -1.0}}}, 16);
    CHECK(max_abs(neg.data) == 0.0);

    CHECK_THROWS_AS(render_phantom({}, 16), std::invalid_argument);
    CHECK_THROWS_AS(render_phantom({{{0, 0, 0.5, 0.5, 0, 1}}}, 0), std::invalid_argument);
}

TEST_CASE("zero inputs project to zero") {
    const auto g = geo_of(16, 12, 16);
    CHECK(max_abs(forward_project(ImageGrid{Tensor<double>({16, 16})}, g).data) == 0.0);
    CHECK(max_abs(back_project(Sinogram{Tensor<double>({12, 16}), g}, g).data) == 0.0);
    CHECK_THROWS_AS(forward_project(ImageGrid{Tensor<double>({8, 8})}, g), ShapeError);
}

TEST_CASE("centered disk has an angle-independent profile with chord length 2r") {
    const auto g = geo_of(64, 32, 65);  // odd bin count puts a bin on the rotation axis
    const double r = 20;
    const auto s = forward_project(disk(64, r), g).data;
    for (std::int64_t a = 0; a < g.n_angles; ++a) CHECK(std::abs(s.at({a, 32}) - 2 * r) <= 1.0 + 1e-9);
    double spread = 0;
    for (std::int64_t b = 0; b < g.n_bins; ++b)
        for (std::int64_t a = 1; a < g.n_angles; ++a) spread = std::max(spread, std::abs(s.at({a, b}) - s.at({0, b})));
    CHECK(spread < 0.1 * 2 * r);
}

TEST_CASE("single bright pixel traces a sinusoid like a fine ray-march") {
    const auto g = geo_of(32, 24, 32);
    ImageGrid img{Tensor<double>({32, 32})};
    const std::int64_t i0 = 9, j0 = 22;
    img.data.at({i0, j0}) = 1.0;
    const auto s = forward_project(img, g).data;
    const double c = 15.5, bin_c = 15.5;
    for (std::int64_t a = 0; a < g.n_angles; ++a) {
        const double ca = std::cos(g.angle(a)), sa = std::sin(g.angle(a));
        // oracle: step 0.1 along every ray
        std::vector<double> oracle(32);
        for (std::int64_t b = 0; b < 32; ++b) {
            const double off = b - bin_c;
            for (double t = -30; t <= 30; t += 0.1)
                oracle[b] += 0.1 * sample(img.data, off * sa + t * ca + c, off * ca - t * sa + c);
        }
        const auto arg_oracle = std::max_element(oracle.begin(), oracle.end()) - oracle.begin();
        std::int64_t arg_impl = 0;
        for (std::int64_t b = 1; b < 32; ++b)
            if (s.at({a, b}) > s.at({a, arg_impl})) arg_impl = b;
        const double expected = (j0 - c) * ca + (i0 - c) * sa + bin_c;
        CHECK(std::abs(arg_impl - arg_oracle) <= 1);
        CHECK(std::abs(arg_impl - expected) <= 1.0);
    }
}

TEST_CASE("projector is linear and its adjoint is the back-projector") {
    const auto g = geo_of(16, 12, 16);
    const auto x = uniform({16, 16}, 1), y = uniform({16, 16}, 2);
    const double a = 1.7, b = -0.3;
    ImageGrid mix{Tensor<double>({16, 16})};
    for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x[i] + b * y[i];
    const auto px = forward_project(ImageGrid{x}, g).data, py = forward_project(ImageGrid{y}, g).data;
    const auto pm = forward_project(mix, g).data;
    double err = 0, scale = 0;
    for (std::size_t i = 0; i < pm.size(); ++i) {
        err = std::max(err, std::abs(pm[i] - (a * px[i] + b * py[i])));
        scale = std::max(scale, std::abs(pm[i]));
    }
    CHECK(err / scale < 1e-6);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto img = randn({16, 16}, 10 + seed), sino = randn({12, 16}, 20 + seed);
        const double lhs = dot(forward_project(ImageGrid{img}, g).data, sino);
        const double rhs = dot(img, back_project(Sinogram{sino, g}, g).data);
        CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-6);
    }
}

TEST_CASE("back-projecting one view smears along its rays") {
    const auto g = geo_of(16, 8, 16);
    for (std::int64_t view : {0, 4}) {  // 0 and pi/2
        Tensor<double> sino({8, 16});
        for (std::int64_t b = 0; b < 16; ++b) sino.at({view, b}) = 1.0;
        const auto img = back_project(Sinogram{sino, g}, g).data;
        double dev = 0;
        for (std::int64_t u = 0; u < 16; ++u)
            for (std::int64_t v = 1; v < 16; ++v) {
                const double here = view == 0 ? img.at({v, u}) : img.at({u, v});
                const double first = view == 0 ? img.at({0, u}) : img.at({u, 0});
                dev = std::max(dev, std::abs(here - first));
            }
        CHECK(dev < 1e-12);
        CHECK(max_abs(img) > 0.5);
    }
}

TEST_CASE("dose thinning: zero stays zero, determinism, Poisson moments") {
    const auto g = geo_of(8, 4, 8);
    const Sinogram zero{Tensor<double>({4, 8}), g};
    CHECK(max_abs(simulate_dose(zero, 0.25, 3).data) == 0.0);

    Sinogram flat{Tensor<double>({4, 8}, 400.0), g};
    CHECK(simulate_dose(flat, 0.25, 9).data == simulate_dose(flat, 0.25, 9).data);
    CHECK_FALSE(simulate_dose(flat, 0.25, 9).data == simulate_dose(flat, 0.25, 10).data);

    Sinogram one{Tensor<double>({1, 1}, 400.0), geo_of(1, 1, 1)};
    const int n = 10000;
    double sum = 0, sq = 0;
    for (int seed = 0; seed < n; ++seed) {
        const double v = simulate_dose(one, 0.25, static_cast<std::uint64_t>(seed)).data[0];
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    const double sigma = std::sqrt(400 / 0.25);
    CHECK(std::abs(mean - 400) < 3 * sigma / 100);
    CHECK(var == doctest::Approx(sigma * sigma).epsilon(0.06));

    // variance scales as 1 / dose
    double sq2 = 0, s2 = 0;
    for (int seed = 0; seed < n; ++seed) {
        const double v = simulate_dose(one, 0.5, static_cast<std::uint64_t>(seed)).data[0];
        s2 += v;
        sq2 += v * v;
    }
    CHECK((sq2 / n - (s2 / n) * (s2 / n)) == doctest::Approx(400 / 0.5).epsilon(0.06));

    CHECK_THROWS_AS(simulate_dose(flat, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(simulate_dose(flat, 1.5, 1), std::invalid_argument);
}

TEST_CASE("osem recovers a disk from noiseless data") {
    const auto g = geo_of(64, 64, 64);
    const auto phantom = disk(64, 20);
    const auto sino = forward_project(phantom, g);
    std::vector<ImageGrid> trace;
    const auto recon = osem_reconstruct(sino, g, {8, 10}, &trace);
    REQUIRE(trace.size() == 10);
    CHECK(nmse_of(recon.data, phantom.data) < 0.05);
    for (int k = 1; k < 5; ++k) CHECK(nmse_of(trace[k].data, phantom.data) < nmse_of(trace[k - 1].data, phantom.data));
}

TEST_CASE("osem edge cases") {
    const auto g = geo_of(16, 16, 16);
    const auto zero = osem_reconstruct(Sinogram{Tensor<double>({16, 16}), g}, g, {4, 1});
    CHECK(max_abs(zero.data) == 0.0);

    auto noisy = simulate_dose(forward_project(disk(16, 5, 50.0), g), 0.25, 4);
    const auto rec = osem_reconstruct(noisy, g, {4, 3});
    for (double v : rec.data.vec()) CHECK(v >= 0.0);

    CHECK_THROWS_AS(osem_reconstruct(noisy, g, {5, 1}), std::invalid_argument);
    noisy.data[3] = -1;
    CHECK_THROWS_AS(osem_reconstruct(noisy, g, {4, 1}), std::invalid_argument);
}

TEST_CASE("dataset generation is normalised and deterministic") {
    DatasetOptions o;
    o.n_slices = 3;
    o.geometry = geo_of(16, 16, 16);
    o.osem = {4, 4};
    o.seed = 5;
    const auto a = make_dataset(o), b = make_dataset(o);
    REQUIRE(a.samples.size() == 3);
    double top_sino = 0, top_img = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.samples[i].low.data == b.samples[i].low.data);
        CHECK(a.samples[i].target.data == b.samples[i].target.data);
        for (const auto* t : {&a.samples[i].low.data, &a.samples[i].standard.data, &a.samples[i].target.data})
            for (double v : t->vec()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        top_sino = std::max({top_sino, max_abs(a.samples[i].low.data), max_abs(a.samples[i].standard.data)});
        top_img = std::max(top_img, max_abs(a.samples[i].target.data));
    }
    CHECK(top_sino == 1.0);
    CHECK(top_img == 1.0);
    CHECK(a.meta.dose_factor == 0.25);

    o.dose_factor = 1.0;
    o.noise = false;
    const auto clean = make_dataset(o);
    for (const auto& s : clean.samples) CHECK(s.low.data == s.standard.data);

    o.n_slices = 0;
    CHECK_THROWS(make_dataset(o));
}

TEST_CASE("normalised osem matches the stored target for the standard sinogram") {
    DatasetOptions o;
    o.n_slices = 2;
    o.geometry = geo_of(16, 16, 16);
    o.osem = {4, 4};
    const auto ds = make_dataset(o);
    for (const auto& s : ds.samples) CHECK(max_abs_diff(osem_normalized(s.standard.data, ds.meta).data, s.target.data) < 1e-12);
}
