#include <algorithm>

#include "doctest.h"
#include "support.hpp"
#include "trido/gradcheck.hpp"
#include "trido/se_former.hpp"

using namespace trido;
using namespace testing;

namespace {

SEFormerConfig small_cfg(std::int64_t angles = 8, std::int64_t bins = 8, std::int64_t width = 16) {
    SEFormerConfig c;
    c.angles = angles;
    c.bins = bins;
    c.width = width;
    c.heads = 2;
    c.ffn_ratio = 2;
    return c;
}

ParamStore<double> fresh(const SEFormerConfig& cfg, std::uint64_t seed = 1) {
    ParamStore<double> store;
    std::mt19937_64 rng(seed);
    SEFormer<double>::register_params(cfg, store, rng);
    return store;
}

void set_zero(ParamStore<double>& store, const std::string& name) { store.get(name).mutable_value().fill(0.0); }

// Biases and norms start at 0 and 1; give them something to do.
void jitter(ParamStore<double>& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& p : store.params())
        for (auto& v : p.var.mutable_value().span()) v += n(rng);
}

}  // namespace

TEST_CASE("default depth and widths") {
    const SEFormerConfig d;
    CHECK(d.blocks == 2);
    CHECK(d.width == 256);
    CHECK(d.heads == 4);
    CHECK(d.channels == 1);
}

TEST_CASE("row embedding") {
    const auto cfg = small_cfg();
    auto store = fresh(cfg);
    const SEFormer<double> se(cfg, store);
    const auto f0 = se.embed_rows(cst(Tensor<double>({1, 8, 8}))).value();
    CHECK(f0.shape() == Shape{8, 16});
    CHECK(f0 == store.get("se_former/pos").value());

    const auto x = randn({1, 8, 8}, 3);
    auto swapped = x;
    for (std::int64_t w = 0; w < 8; ++w) std::swap(swapped.at({0, 1, w}), swapped.at({0, 5, w}));
    const auto pos = store.get("se_former/pos").value();
    const auto a = se.embed_rows(cst(x)).value(), b = se.embed_rows(cst(swapped)).value();
    for (std::int64_t k = 0; k < 16; ++k) {
        CHECK(b.at({1, k}) - pos.at({1, k}) == doctest::Approx(a.at({5, k}) - pos.at({5, k})).epsilon(1e-12));
        CHECK(b.at({5, k}) - pos.at({5, k}) == doctest::Approx(a.at({1, k}) - pos.at({1, k})).epsilon(1e-12));
        CHECK(b.at({0, k}) == a.at({0, k}));
    }
    CHECK_THROWS_AS(se.embed_rows(cst(Tensor<double>({1, 8, 4}))), ShapeError);
}

TEST_CASE("encoder block is an exact identity with zeroed output projections") {
    const auto cfg = small_cfg();
    auto store = fresh(cfg);
    jitter(store, 7);
    for (const char* n : {"attn/proj/weight", "attn/proj/bias", "ffn/fc2/weight", "ffn/fc2/bias"})
        set_zero(store, std::string("se_former/block0/") + n);
    const SEFormer<double> se(cfg, store);
    const auto f = randn({8, 16}, 4);
    CHECK(se.encoder_block(cst(f), 0).value() == f);
    const auto g = se.encoder_block(cst(f), 1).value();
    CHECK(g.shape() == f.shape());
    CHECK(max_abs_diff(g, f) > 0);
}

TEST_CASE("encoder block is token-permutation equivariant") {
    const auto cfg = small_cfg(4, 8, 16);
    auto store = fresh(cfg);
    jitter(store, 8);
    const SEFormer<double> se(cfg, store);
    const auto f = randn({4, 16}, 5);
    const std::int64_t perm[4] = {2, 0, 3, 1};
    Tensor<double> pf({4, 16});
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t k = 0; k < 16; ++k) pf.at({i, k}) = f.at({perm[i], k});
    const auto out = se.encoder_block(cst(f), 0).value(), pout = se.encoder_block(cst(pf), 0).value();
    double err = 0;
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t k = 0; k < 16; ++k) err = std::max(err, std::abs(pout.at({i, k}) - out.at({perm[i], k})));
    CHECK(err < 1e-12);
}

TEST_CASE("attention rows are distributions") {
    const auto cfg = small_cfg();
    auto store = fresh(cfg);
    const SEFormer<double> se(cfg, store);
    const auto p = se.attention_probs(cst(randn({8, 16}, 6)), 0);
    REQUIRE(p.shape() == Shape{2, 8, 8});
    for (std::int64_t h = 0; h < 2; ++h)
        for (std::int64_t i = 0; i < 8; ++i) {
            double s = 0;
            for (std::int64_t j = 0; j < 8; ++j) s += p.at({h, i, j});
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("feature mapping") {
    auto cfg = small_cfg();
    auto store = fresh(cfg);
    set_zero(store, "se_former/map/bias");
    {
        const SEFormer<double> se(cfg, store);
        CHECK(max_abs(se.feature_map(cst(Tensor<double>({8, 16}))).value()) == 0.0);
        CHECK(se.feature_map(cst(randn({8, 16}, 1))).value().shape() == Shape{1, 8, 8});
    }
    // C' = 1: width equals bins, so a unit 1x1 projection just reshapes the tokens
    cfg = small_cfg(8, 8, 8);
    auto unit = fresh(cfg);
    unit.get("se_former/map/weight").mutable_value().fill(1.0);
    const SEFormer<double> se(cfg, unit);
    const auto f = randn({8, 8}, 2);
    CHECK(se.feature_map(cst(f)).value() == f.reshaped({1, 8, 8}));
}

TEST_CASE("forward is a residual identity when the mapping is zero") {
    const auto cfg = small_cfg();
    auto store = fresh(cfg);
    jitter(store, 9);
    set_zero(store, "se_former/map/weight");
    set_zero(store, "se_former/map/bias");
    const SEFormer<double> se(cfg, store);
    const auto s = uniform({1, 8, 8}, 10);
    CHECK(se.forward(cst(s)).value() == s);
}

TEST_CASE("forward shape and a sampled gradient check") {
    const auto cfg = small_cfg();
    auto store = fresh(cfg);
    jitter(store, 11);
    const SEFormer<double> se(cfg, store);
    const auto s = uniform({1, 8, 8}, 12);
    CHECK(se.forward(cst(s)).value().shape() == Shape{1, 8, 8});

    std::mt19937_64 rng(13);
    std::vector<GradProbe> probes;
    auto& ps = store.params();
    for (int k = 0; k < 8; ++k) {
        auto& p = ps[std::uniform_int_distribution<std::size_t>(0, ps.size() - 1)(rng)];
        probes.push_back({p.var, std::uniform_int_distribution<std::size_t>(0, p.var.size() - 1)(rng)});
    }
    const auto res = grad_check([&] { return ops::sum(ops::square(se.forward(cst(s)))); }, probes);
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("configuration checks") {
    auto cfg = small_cfg();
    cfg.width = 12;  // not a multiple of bins
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg();
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
