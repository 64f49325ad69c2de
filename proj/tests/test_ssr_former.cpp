#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "trido/gradcheck.hpp"
#include "trido/ssr_former.hpp"

using namespace trido;
using namespace testing;

namespace {

SSRFormerConfig tiny_cfg() {
    SSRFormerConfig c;
    c.channels = {4, 4, 8, 8};
    c.heads = {1, 2, 2, 2};
    c.window = 2;
    c.height = 16;
    c.width = 16;
    return c;
}

ParamStore<double> fresh(const SSRFormerConfig& cfg, std::uint64_t seed = 1) {
    ParamStore<double> store;
    std::mt19937_64 rng(seed);
    SSRFormer<double>::register_params(cfg, store, rng);
    return store;
}

void jitter(ParamStore<double>& store, std::uint64_t seed, double scale = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& p : store.params())
        for (auto& v : p.var.mutable_value().span()) v += n(rng);
}

void zero(ParamStore<double>& store, const std::string& name) { store.get(name).mutable_value().fill(0.0); }

}  // namespace

TEST_CASE("default window and shift") {
    const SSRFormerConfig d;
    CHECK(d.window == 4);
    CHECK(d.shift() == 2);
}

TEST_CASE("window partition layout, count and round trip") {
    const auto x = randn({3, 8, 12}, 1);
    const auto w = window_partition(cst(x), 4).value();
    REQUIRE(w.shape() == Shape{6, 3, 4, 4});
    for (std::int64_t n = 0; n < 6; ++n)
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t i = 0; i < 4; ++i)
                for (std::int64_t j = 0; j < 4; ++j) CHECK(w.at({n, c, i, j}) == x.at({c, (n / 3) * 4 + i, (n % 3) * 4 + j}));
    CHECK(window_reverse(window_partition(cst(x), 4), 8, 12, 4).value() == x);
    CHECK(window_partition(cst(x), 2).value().dim(0) == (8 * 12) / 4);

    const auto sq = randn({2, 4, 4}, 2);
    CHECK(window_partition(cst(sq), 4).value() == sq.reshaped({1, 2, 4, 4}));

    for (std::int64_t shift : {0, 1, 2}) {
        const auto fwd = window_partition_index(3, 8, 12, 4, shift);
        const auto back = window_reverse_index(3, 8, 12, 4, shift);
        const auto wins = ops::gather(cst(x), {6, 3, 4, 4}, fwd);
        CHECK(ops::gather(wins, {3, 8, 12}, back).value() == x);
    }
    // shifted windows start at (shift, shift) and wrap around
    const auto rolled = ops::gather(cst(x), {6, 3, 4, 4}, window_partition_index(3, 8, 12, 4, 2)).value();
    CHECK(rolled.at({0, 1, 0, 0}) == x.at({1, 2, 2}));
    CHECK(rolled.at({5, 0, 3, 3}) == x.at({0, 1, 1}));

    CHECK_THROWS_AS(window_partition(cst(x), 5), ShapeError);
    CHECK_THROWS_AS(window_reverse(cst(w), 8, 8, 4), ShapeError);
}

TEST_CASE("unshifted window attention equals dense attention per tile") {
    SSRFormerConfig cfg;
    cfg.channels = {4, 4, 4, 4};
    cfg.heads = {2, 2, 2, 2};
    cfg.window = 4;
    cfg.height = cfg.width = 32;
    auto store = fresh(cfg, 3);
    jitter(store, 4, 0.3);
    const SSRFormer<double> net(cfg, store);
    const auto x = randn({4, 32, 32}, 5);
    const auto y = net.window_attention(cst(x), "enc0", 0, false).value();

    const std::string p = "ssr_former/enc0/sstl0/attn/";
    const auto qw = store.get(p + "qkv/weight").value(), qb = store.get(p + "qkv/bias").value();
    const auto pw = store.get(p + "proj/weight").value(), pb = store.get(p + "proj/bias").value();
    const auto table = store.get(p + "rel_bias").value();  // [(2M-1)^2, heads]
    const int M = 4, C = 4, heads = 2, dh = 2;

    double err = 0;
    for (int ty = 0; ty < 8; ++ty)
        for (int tx = 0; tx < 8; ++tx) {
            // projected q/k/v for the 16 tokens of this tile
            double qkv[16][12];
            for (int t = 0; t < 16; ++t) {
                const int yy = ty * M + t / M, xx = tx * M + t % M;
                for (int o = 0; o < 3 * C; ++o) {
                    double s = qb[o];
                    for (int c = 0; c < C; ++c) s += qw.at({o, c, 0, 0}) * x.at({c, yy, xx});
                    qkv[t][o] = s;
                }
            }
            double merged[16][4] = {};
            for (int h = 0; h < heads; ++h)
                for (int i = 0; i < 16; ++i) {
                    double logit[16], mx = -1e300;
                    for (int j = 0; j < 16; ++j) {
                        double s = 0;
                        for (int e = 0; e < dh; ++e) s += qkv[i][h * dh + e] * qkv[j][C + h * dh + e];
                        const int dy = i / M - j / M + M - 1, dx = i % M - j % M + M - 1;
                        logit[j] = s / std::sqrt(double(dh)) + table.at({dy * (2 * M - 1) + dx, h});
                        mx = std::max(mx, logit[j]);
                    }
                    double z = 0;
                    for (double& l : logit) z += (l = std::exp(l - mx));
                    for (int e = 0; e < dh; ++e)
                        for (int j = 0; j < 16; ++j) merged[i][h * dh + e] += logit[j] / z * qkv[j][2 * C + h * dh + e];
                }
            for (int t = 0; t < 16; ++t)
                for (int o = 0; o < C; ++o) {
                    double s = pb[o];
                    for (int c = 0; c < C; ++c) s += pw.at({o, c, 0, 0}) * merged[t][c];
                    err = std::max(err, std::abs(s - y.at({o, ty * M + t / M, tx * M + t % M})));
                }
        }
    CHECK(err < 1e-12);
}

TEST_CASE("window attention on per-channel constants and with zero projection") {
    const auto cfg = tiny_cfg();
    auto store = fresh(cfg);
    jitter(store, 6, 0.3);
    const SSRFormer<double> net(cfg, store);
    Tensor<double> x({4, 16, 16});
    for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t i = 0; i < 256; ++i) x[static_cast<std::size_t>(c * 256 + i)] = 0.3 * double(c) - 0.5;
    for (bool shifted : {false, true}) {
        const auto y = net.window_attention(cst(x), "enc0", 1, shifted).value();
        for (std::int64_t c = 0; c < 4; ++c)
            for (std::int64_t i = 1; i < 256; ++i)
                CHECK(y[static_cast<std::size_t>(c * 256 + i)] == doctest::Approx(y[static_cast<std::size_t>(c * 256)]).epsilon(1e-12));
    }
    zero(store, "ssr_former/enc0/sstl0/attn/proj/weight");
    zero(store, "ssr_former/enc0/sstl0/attn/proj/bias");
    CHECK(max_abs(net.window_attention(cst(randn({4, 16, 16}, 7)), "enc0", 0, true).value()) == 0.0);
}

TEST_CASE("global frequency parser contract") {
    const auto x = randn({3, 8, 10}, 8);
    Tensor<double> ones({3, 8, 6}, 1.0);
    CHECK(max_abs_diff(global_frequency_parser(cst(x), cst(ones)).value(), x) < 1e-5);
    CHECK(max_abs(global_frequency_parser(cst(x), cst(Tensor<double>({3, 8, 6}))).value()) < 1e-15);

    Tensor<double> dc({3, 8, 6});
    for (std::int64_t c = 0; c < 3; ++c) dc.at({c, 0, 0}) = 1.0;
    const auto y = global_frequency_parser(cst(x), cst(dc)).value();
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (std::int64_t i = 0; i < 80; ++i) mean += x[static_cast<std::size_t>(c * 80 + i)] / 80;
        for (std::int64_t i = 0; i < 80; ++i) CHECK(std::abs(y[static_cast<std::size_t>(c * 80 + i)] - mean) < 1e-12);
    }
    const auto filt = uniform({3, 8, 6}, 9, 0.5, 1.5);
    const auto res = grad_check(
        [&](const Var<double>& a) { return ops::sum(ops::square(global_frequency_parser(cst(x), a))); }, filt);
    CHECK(res.max_rel_error < 1e-5);
    CHECK_THROWS_AS(global_frequency_parser(cst(x), cst(Tensor<double>({3, 8, 10}))), ShapeError);
}

TEST_CASE("sstl and sstb residual identities") {
    const auto cfg = tiny_cfg();
    auto store = fresh(cfg);
    jitter(store, 10, 0.3);
    for (int l = 0; l < 2; ++l) {
        const std::string p = "ssr_former/enc1/sstl" + std::to_string(l) + "/";
        for (const char* n : {"attn/proj/weight", "attn/proj/bias", "ffn/fc2/weight", "ffn/fc2/bias"}) zero(store, p + n);
    }
    const SSRFormer<double> net(cfg, store);
    const auto x = randn({4, 8, 8}, 11);
    CHECK(net.sstl(cst(x), "enc1", 0, false).value() == x);
    CHECK(net.sstl(cst(x), "enc1", 1, true).value() == x);
    // a non-zero conv leaves only the conv of the passed-through input
    CHECK_FALSE(net.sstb(cst(x), "enc1").value() == x);
    zero(store, "ssr_former/enc1/conv/weight");
    zero(store, "ssr_former/enc1/conv/bias");
    CHECK(net.sstb(cst(x), "enc1").value() == x);
}

TEST_CASE("sstl gradient with respect to the spectral filter") {
    const auto cfg = tiny_cfg();
    auto store = fresh(cfg);
    jitter(store, 12, 0.2);
    const SSRFormer<double> net(cfg, store);
    const auto x = randn({4, 16, 16}, 13);
    std::vector<GradProbe> probes;
    const auto filter = net.gfp_filter("dec0", 1);
    for (std::size_t i = 0; i < filter.size(); i += 7) probes.push_back({filter, i});
    const auto res = grad_check([&] { return ops::sum(ops::square(net.sstl(cst(x), "dec0", 1, true))); }, probes);
    CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("shifting the second layer changes the block output") {
    const auto cfg = tiny_cfg();
    auto store = fresh(cfg);
    jitter(store, 14, 0.3);
    const SSRFormer<double> net(cfg, store);
    const auto x = randn({4, 16, 16}, 15);
    const auto a = net.sstb(cst(x), "enc0").value(), b = net.sstb_unshifted(cst(x), "enc0").value();
    CHECK(a.shape() == x.shape());
    CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("resampling stages and the full network") {
    const auto cfg = tiny_cfg();
    auto store = fresh(cfg);
    const SSRFormer<double> net(cfg, store);
    const auto d = net.downsample(cst(randn({4, 16, 16}, 16)), 0).value();
    CHECK(d.shape() == Shape{4, 8, 8});
    CHECK(net.downsample(cst(randn({4, 8, 8}, 17)), 1).value().shape() == Shape{8, 4, 4});
    CHECK(net.upsample(cst(randn({8, 2, 2}, 18)), 2).value().shape() == Shape{8, 4, 4});
    CHECK(net.upsample(cst(randn({8, 4, 4}, 19)), 1).value().shape() == Shape{4, 8, 8});

    for (const auto& name : SSRFormer<double>::block_names()) {
        const int l = SSRFormer<double>::block_level(name);
        CHECK(net.gfp_filter(name, 0).shape() == Shape{cfg.channels[l], cfg.level_height(l), cfg.level_width(l) / 2 + 1});
        CHECK(net.gfp_filter(name, 0).value() == Tensor<double>::ones(net.gfp_filter(name, 0).shape()));
    }

    const auto s = uniform({1, 16, 16}, 20);
    const auto y1 = net.forward(cst(s)).value(), y2 = net.forward(cst(s)).value();
    CHECK(y1.shape() == Shape{1, 16, 16});
    CHECK(y1 == y2);
    CHECK(y1.all_finite());
    CHECK_THROWS_AS(net.forward(cst(uniform({1, 16, 8}, 21))), ShapeError);
}

TEST_CASE("full network gradient on sampled parameters") {
    const auto cfg = tiny_cfg();
    auto store = fresh(cfg);
    jitter(store, 22, 0.1);
    const SSRFormer<double> net(cfg, store);
    const auto s = uniform({1, 16, 16}, 23);
    std::mt19937_64 rng(24);
    std::vector<GradProbe> probes;
    auto& ps = store.params();
    for (int k = 0; k < 8; ++k) {
        auto& p = ps[std::uniform_int_distribution<std::size_t>(0, ps.size() - 1)(rng)];
        probes.push_back({p.var, std::uniform_int_distribution<std::size_t>(0, p.var.size() - 1)(rng)});
    }
    const auto res = grad_check([&] { return ops::sum(ops::square(net.forward(cst(s)))); }, probes);
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("configuration checks") {
    auto cfg = tiny_cfg();
    cfg.height = 24;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_cfg();
    cfg.heads[2] = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
