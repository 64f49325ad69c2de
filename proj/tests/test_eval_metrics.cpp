#include <cmath>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "trido/eval_metrics.hpp"

using namespace trido;
using namespace testing;

namespace {

// Straightforward per-window SSIM with an explicit 2D Gaussian.
double ssim_direct(const Tensor<double>& x, const Tensor<double>& y) {
    const auto h = x.dim(0), w = x.dim(1);
    double g[11][11], z = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) z += (g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5)));
    double lo = y[0], hi = y[0];
    for (double v : y.span()) lo = std::min(lo, v), hi = std::max(hi, v);
    const double c1 = std::pow(0.01 * (hi - lo), 2), c2 = std::pow(0.03 * (hi - lo), 2);
    double total = 0;
    int n = 0;
    for (std::int64_t r = 0; r + 11 <= h; ++r)
        for (std::int64_t c = 0; c + 11 <= w; ++c) {
            double mx = 0, my = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    mx += g[i][j] / z * x.at({r + i, c + j});
                    my += g[i][j] / z * y.at({r + i, c + j});
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double dx = x.at({r + i, c + j}) - mx, dy = y.at({r + i, c + j}) - my;
                    vx += g[i][j] / z * dx * dx;
                    vy += g[i][j] / z * dy * dy;
                    cxy += g[i][j] / z * dx * dy;
                }
            total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++n;
        }
    return total / n;
}

pet::Dataset tiny_dataset(std::int64_t n) {
    pet::DatasetOptions o;
    o.n_slices = n;
    o.geometry.image_size = o.geometry.n_angles = o.geometry.n_bins = 16;
    o.osem = {4, 4};
    return make_dataset(o);
}

}  // namespace

TEST_CASE("psnr closed forms") {
    auto ref = uniform({8, 8}, 1, 0.0, 0.9);
    ref[0] = 1.0;
    auto x = ref;
    for (auto& v : x.span()) v += 0.1;
    const auto p = eval::psnr(x, ref);
    CHECK_FALSE(p.identical);
    CHECK(p.db == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(eval::psnr(ref, ref).identical);
    CHECK(eval::psnr(ref, ref).str() == "identical");
    CHECK(std::isinf(eval::psnr(ref, ref).value()));

    auto xs = x, rs = ref;
    for (auto& v : xs.span()) v *= 3.7;
    for (auto& v : rs.span()) v *= 3.7;
    CHECK(eval::psnr(xs, rs).db == doctest::Approx(p.db).epsilon(1e-12));
    CHECK_THROWS(eval::psnr(x, Tensor<double>({8, 8})));
    CHECK_THROWS_AS(eval::psnr(x, uniform({4, 4}, 2)), ShapeError);
}

TEST_CASE("ssim matches a direct windowed computation") {
    const auto a = uniform({24, 20}, 3), b = uniform({24, 20}, 4);
    CHECK(eval::ssim(a, a) == 1.0);
    CHECK(std::abs(eval::ssim(a, b) - ssim_direct(a, b)) < 1e-6);
    auto c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.8 * a[i] + 0.2 * b[i];
    CHECK(std::abs(eval::ssim(c, a) - ssim_direct(c, a)) < 1e-6);
    CHECK(eval::ssim(a.reshaped({1, 24, 20}), c.reshaped({1, 24, 20})) == eval::ssim(a, c));
    for (std::uint64_t s = 0; s < 10; ++s) {
        const double v = eval::ssim(randn({16, 16}, 10 + s), randn({16, 16}, 30 + s));
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS(eval::ssim(a, Tensor<double>({24, 20}, 0.5)));
    CHECK_THROWS_AS(eval::ssim(uniform({8, 8}, 1), uniform({8, 8}, 2)), ShapeError);
}

TEST_CASE("nmse closed forms") {
    const auto r = uniform({6, 6}, 5, 0.1, 1.0);
    CHECK(eval::nmse(r, r) == 0.0);
    auto twice = r;
    for (auto& v : twice.span()) v *= 2;
    CHECK(eval::nmse(twice, r) == doctest::Approx(1.0));
    CHECK(eval::nmse(Tensor<double>({6, 6}), r) == doctest::Approx(1.0));
    CHECK_THROWS(eval::nmse(r, Tensor<double>({6, 6})));
}

TEST_CASE("radial spectrum rings") {
    const auto flat = Tensor<double>({16, 16}, 2.0);
    const auto s = eval::radial_spectrum(flat);
    REQUIRE(s.total_power.size() == 9);
    CHECK(s.total_power[0] > 0);
    for (std::size_t r = 1; r < 9; ++r) CHECK(s.total_power[r] < 1e-20 * s.total_power[0]);

    for (int k : {1, 3, 5}) {
        Tensor<double> cosine({16, 16});
        for (std::int64_t i = 0; i < 16; ++i)
            for (std::int64_t j = 0; j < 16; ++j) cosine.at({i, j}) = std::cos(2 * std::numbers::pi * k * j / 16.0);
        const auto c = eval::radial_spectrum(cosine);
        double total = 0;
        for (double p : c.total_power) total += p;
        CHECK(c.total_power[static_cast<std::size_t>(k)] / total > 1 - 1e-12);
    }

    const auto img = randn({16, 16}, 6);
    const auto rs = eval::radial_spectrum(img, 5);
    double ring_total = 0, energy = 0, bins = 0;
    for (std::size_t r = 0; r < 5; ++r) {
        ring_total += rs.total_power[r];
        bins += rs.counts[r];
        if (rs.counts[r] > 0) CHECK(rs.mean_power[r] == doctest::Approx(rs.total_power[r] / rs.counts[r]));
    }
    for (double v : img.span()) energy += v * v;
    CHECK(std::abs(ring_total / 256 - energy) / energy < 1e-6);
    CHECK(bins == 256);

    CHECK_THROWS(eval::radial_spectrum(img, 10));
    CHECK_THROWS(eval::radial_spectrum(randn({16, 8}, 7)));
}

TEST_CASE("evaluation report structure") {
    const auto ds = tiny_dataset(3);
    const auto base = eval::evaluate({}, ds);
    CHECK(base.rows.size() == 2 * 3 + 2 * 2);
    CHECK(base.methods() == std::vector<std::string>{eval::kOsemLow, eval::kOsemStandard});
    CHECK(base.aggregate(eval::kOsemLow).psnr.db > 0);

    const eval::Method oracle{eval::kModel, [](const pet::Sample& s) { return s.target.data; }};
    const eval::Method blurred{"zeros", [](const pet::Sample& s) { return Tensor<double>(s.target.data.shape()); }};
    const auto rep = eval::evaluate({oracle, blurred}, ds);
    CHECK(rep.rows.size() == 4 * 3 + 4 * 2);
    for (const auto& r : rep.rows)
        if (r.method == eval::kModel && r.kind != eval::RowKind::stddev) {
            CHECK(r.psnr.identical);
            CHECK(r.ssim == 1.0);
            CHECK(r.nmse == 0.0);
        }
    CHECK(rep.aggregate("zeros").nmse == doctest::Approx(1.0));

    CHECK_THROWS_AS(eval::evaluate({oracle, oracle}, ds), std::invalid_argument);
    CHECK_THROWS_AS(eval::evaluate({}, pet::Dataset{}), std::invalid_argument);
}

TEST_CASE("table and json lines agree value for value") {
    const auto ds = tiny_dataset(2);
    const eval::Method noisy{eval::kModel, [](const pet::Sample& s) {
                                 auto t = s.target.data;
                                 for (std::size_t i = 0; i < t.size(); ++i) t[i] += 0.01 * std::sin(double(i));
                                 return t;
                             }};
    const auto rep = eval::evaluate({noisy}, ds);
    std::istringstream jl(rep.jsonl()), tb(rep.table());
    std::string header, rule, line, row;
    std::getline(tb, header);
    std::getline(tb, rule);
    std::size_t n = 0;
    while (std::getline(jl, line)) {
        REQUIRE(std::getline(tb, row));
        const auto j = nlohmann::json::parse(line);
        std::istringstream cols(row);
        std::string method, slice, psnr_s;
        cols >> method >> slice >> psnr_s;
        CHECK(method == j["method"].get<std::string>());
        if (j["psnr_db"].is_string())
            CHECK(psnr_s == "identical");
        else
            CHECK(std::stod(psnr_s) == j["psnr_db"].get<double>());
        double ssim_v, nmse_v;
        cols >> ssim_v >> nmse_v;
        CHECK(ssim_v == j["ssim"].get<double>());
        CHECK(nmse_v == j["nmse"].get<double>());
        ++n;
    }
    CHECK(n == rep.rows.size());
}
