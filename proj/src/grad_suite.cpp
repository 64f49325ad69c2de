#include "trido/grad_suite.hpp"

#include <chrono>
#include <random>

#include "trido/ops.hpp"
#include "trido/se_former.hpp"
#include "trido/ssr_former.hpp"
#include "trido/training.hpp"

namespace trido {

namespace {

using V = Var<double>;
using Td = Tensor<double>;

Td randn(Shape s, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Td t(std::move(s));
    for (auto& v : t.span()) v = n(rng);
    return t;
}

// Fixed random projection turns any output into a smooth scalar.
V project(const V& y, std::uint64_t seed) {
    return ops::sum(ops::mul(y, V::constant(randn(y.shape(), seed))));
}

V leaf(Td t) { return V::leaf(std::move(t), true); }

std::vector<GradProbe> all_coords(const std::vector<V>& leaves) {
    std::vector<GradProbe> p;
    for (const auto& l : leaves)
        for (std::size_t i = 0; i < l.size(); ++i) p.push_back({l, i});
    return p;
}

// A few coordinates of every parameter plus of each extra leaf.
std::vector<GradProbe> sample_coords(const ParamStore<double>& store, const std::vector<V>& extra,
                                     std::size_t per_tensor, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradProbe> p;
    auto pick = [&](const V& l) {
        std::uniform_int_distribution<std::size_t> d(0, l.size() - 1);
        for (std::size_t k = 0; k < std::min(per_tensor, l.size()); ++k) p.push_back({l, d(rng)});
    };
    for (const auto& prm : store.params()) pick(prm.var);
    for (const auto& l : extra) pick(l);
    return p;
}

// Randomises every parameter so identity-style initialisations (ones,
// zeros) do not hide errors.
void jitter(ParamStore<double>& store, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& prm : store.params())
        for (auto& v : prm.var.mutable_value().span()) v += n(rng);
}

SEFormerConfig tiny_se() {
    SEFormerConfig c;
    c.angles = 16;
    c.bins = 16;
    c.width = 32;
    c.heads = 2;
    c.ffn_ratio = 2;
    return c;
}

SSRFormerConfig tiny_ssr() {
    SSRFormerConfig c;
    c.channels = {4, 4, 8, 8};
    c.heads = {1, 2, 2, 2};
    c.window = 2;
    c.height = 16;
    c.width = 16;
    return c;
}

// Backward scaled by 1.5: the harness must catch it.
V faulty_scale(const V& x) {
    Td out = x.value();
    for (auto& v : out.span()) v *= 2.0;
    return make_result<double>("faulty_scale", std::move(out), {x.node()}, [](Node<double>& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * n.grad[i];
    });
}

struct Check {
    std::string name;
    double tolerance;
    std::function<GradCheckResult()> run;
};

std::vector<Check> build_checks(bool inject_fault) {
    std::vector<Check> c;
    auto unary = [&](std::string name, Shape s, std::function<V(const V&)> f, double scale = 1.0) {
        c.push_back({name, kOpTolerance, [=] {
                         const std::uint64_t seed = std::hash<std::string>{}(name);
                         return grad_check([=](const V& x) { return project(f(x), seed + 1); }, randn(s, seed, scale));
                     }});
    };

    unary("add", {3, 4}, [](const V& x) { return ops::add(x, ops::mul(x, x)); });
    unary("mul", {3, 4}, [](const V& x) { return ops::mul(x, V::constant(randn({3, 4}, 5))); });
    unary("gelu", {4, 5}, [](const V& x) { return ops::gelu(x); }, 2.0);
    unary("softmax", {3, 6}, [](const V& x) { return ops::softmax(x); });
    c.push_back({"matmul", kOpTolerance, [] {
                     V a = leaf(randn({2, 3, 4}, 11)), b = leaf(randn({2, 4, 5}, 12)), w = leaf(randn({4, 2}, 13));
                     return grad_check([=] { return ops::add(project(ops::matmul(a, b), 14),
                                                             project(ops::matmul(a, w), 15)); },
                                       all_coords({a, b, w}));
                 }});
    c.push_back({"linear", kOpTolerance, [] {
                     V x = leaf(randn({5, 4}, 21)), w = leaf(randn({3, 4}, 22)), b = leaf(randn({3}, 23));
                     return grad_check([=] { return project(ops::linear(x, w, b), 24); }, all_coords({x, w, b}));
                 }});
    c.push_back({"conv2d", kOpTolerance, [] {
                     V x = leaf(randn({2, 5, 6}, 31)), w = leaf(randn({3, 2, 3, 3}, 32)), b = leaf(randn({3}, 33));
                     V w1 = leaf(randn({2, 2, 1, 1}, 34));
                     return grad_check([=] { return ops::add(project(ops::conv2d(x, w, b), 35),
                                                             project(ops::conv2d(x, w1, V{}), 36)); },
                                       all_coords({x, w, b, w1}));
                 }});
    c.push_back({"layer_norm", kOpTolerance, [] {
                     V x = leaf(randn({4, 6}, 41)), g = leaf(randn({6}, 42)), b = leaf(randn({6}, 43));
                     return grad_check([=] { return project(ops::layer_norm(x, g, b), 44); }, all_coords({x, g, b}));
                 }});
    c.push_back({"channel_layer_norm", kOpTolerance, [] {
                     V x = leaf(randn({5, 3, 4}, 51)), g = leaf(randn({5}, 52)), b = leaf(randn({5}, 53));
                     return grad_check([=] { return project(ops::channel_layer_norm(x, g, b), 54); },
                                       all_coords({x, g, b}));
                 }});
    c.push_back({"attention", kOpTolerance, [] {
                     V q = leaf(randn({4, 5, 3}, 61)), k = leaf(randn({4, 5, 3}, 62)), v = leaf(randn({4, 5, 3}, 63));
                     V bias = leaf(randn({2, 5, 5}, 64));
                     return grad_check([=] { return project(ops::attention(q, k, v, bias), 65); },
                                       all_coords({q, k, v, bias}));
                 }});
    unary("gather", {3, 4, 4}, [](const V& x) { return ops::pixel_shuffle(ops::pixel_unshuffle(x, 2), 2); });
    unary("pixel_unshuffle", {2, 4, 6}, [](const V& x) { return ops::pixel_unshuffle(x, 2); });
    unary("pixel_shuffle", {8, 2, 3}, [](const V& x) { return ops::pixel_shuffle(x, 2); });
    unary("rdft2", {2, 4, 6}, [](const V& x) { return ops::rdft2(x); });
    unary("irdft2", {2, 4, 4, 2}, [](const V& x) { return ops::irdft2(x, 4, 6); });
    unary("irdft2_odd", {1, 5, 3, 2}, [](const V& x) { return ops::irdft2(x, 5, 5); });
    c.push_back({"gfp", kOpTolerance, [] {
                     V x = leaf(randn({2, 6, 6}, 71)), a = leaf(randn({2, 6, 4}, 72));
                     return grad_check([=] { return project(global_frequency_parser(x, a), 73); }, all_coords({x, a}));
                 }});
    c.push_back({"w_smsa", kOpTolerance, [] {
                     ParamStore<double> store;
                     std::mt19937_64 rng(81);
                     const auto cfg = tiny_ssr();
                     SSRFormer<double>::register_params(cfg, store, rng);
                     jitter(store, 82, 0.2);
                     SSRFormer<double> net(cfg, store);
                     V x = leaf(randn({4, 16, 16}, 83));
                     auto probes = sample_coords(store, {x}, 0, 84);
                     for (const char* n : {"attn/qkv/weight", "attn/qkv/bias", "attn/rel_bias", "attn/proj/weight"}) {
                         V p = store.get(std::string("ssr_former/enc0/sstl1/") + n);
                         for (std::size_t i = 0; i < p.size(); i += 3) probes.push_back({p, i});
                     }
                     for (std::size_t i = 0; i < x.size(); i += 7) probes.push_back({x, i});
                     return grad_check([=] { return ops::add(project(net.window_attention(x, "enc0", 1, true), 85),
                                                             project(net.window_attention(x, "enc0", 0, false), 86)); },
                                       probes);
                 }});
    c.push_back({"trans_encoder", kOpTolerance, [] {
                     ParamStore<double> store;
                     std::mt19937_64 rng(91);
                     const auto cfg = tiny_se();
                     SEFormer<double>::register_params(cfg, store, rng);
                     jitter(store, 92, 0.1);
                     SEFormer<double> net(cfg, store);
                     V tokens = leaf(randn({cfg.angles, cfg.width}, 93));
                     std::vector<GradProbe> probes;
                     for (const auto& prm : store.params())
                         if (prm.name.rfind("se_former/block0/", 0) == 0)
                             for (std::size_t i = 0; i < prm.var.size(); i += 17) probes.push_back({prm.var, i});
                     for (std::size_t i = 0; i < tokens.size(); i += 5) probes.push_back({tokens, i});
                     return grad_check([=] { return project(net.encoder_block(tokens, 0), 94); }, probes);
                 }});
    c.push_back({"se_former", kCompositeTolerance, [] {
                     ParamStore<double> store;
                     std::mt19937_64 rng(101);
                     const auto cfg = tiny_se();
                     SEFormer<double>::register_params(cfg, store, rng);
                     jitter(store, 102, 0.1);
                     SEFormer<double> net(cfg, store);
                     V s = leaf(randn({1, cfg.angles, cfg.bins}, 103));
                     return grad_check([=] { return project(net.forward(s), 104); }, sample_coords(store, {s}, 3, 105));
                 }});
    c.push_back({"ssr_former", kCompositeTolerance, [] {
                     ParamStore<double> store;
                     std::mt19937_64 rng(111);
                     const auto cfg = tiny_ssr();
                     SSRFormer<double>::register_params(cfg, store, rng);
                     jitter(store, 112, 0.1);
                     SSRFormer<double> net(cfg, store);
                     V s = leaf(randn({1, cfg.height, cfg.width}, 113));
                     return grad_check([=] { return project(net.forward(s), 114); }, sample_coords(store, {s}, 2, 115));
                 }});
    c.push_back({"loss_sino", kOpTolerance, [] {
                     V a = leaf(randn({1, 4, 4}, 121)), b = leaf(randn({1, 4, 4}, 122));
                     V a2 = leaf(randn({1, 4, 4}, 123)), b2 = V::constant(randn({1, 4, 4}, 124));
                     return grad_check([=] { return loss_sino<double>({a, a2}, {b, b2}); }, all_coords({a, b, a2}));
                 }});
    c.push_back({"loss_img", kOpTolerance, [] {
                     V a = leaf(randn({1, 4, 4}, 131)), b = leaf(randn({1, 4, 4}, 132));
                     return grad_check([=] { return loss_img<double>({a}, {b}); }, all_coords({a, b}));
                 }});
    c.push_back({"loss_total", kCompositeTolerance, [] {
                     ModelConfig mc{tiny_se(), tiny_ssr()};
                     mc.ssr.in_channels = 1;
                     TriDoFormer<double> model(mc, 141);
                     jitter(model.params(), 142, 0.05);
                     V low = V::constant(randn({1, 16, 16}, 143));
                     V standard = V::constant(randn({1, 16, 16}, 144));
                     V target = V::constant(randn({1, 16, 16}, 145));
                     auto* m = &model;
                     return grad_check(
                         [=] {
                             const auto pred = m->forward(low);
                             return loss_total(loss_sino<double>({standard}, {pred.denoised}),
                                               loss_img<double>({target}, {pred.image}), 10.0);
                         },
                         sample_coords(model.params(), {}, 1, 146));
                 }});
    if (inject_fault)
        c.push_back({"injected_fault", kOpTolerance,
                     [] { return grad_check([](const V& x) { return project(faulty_scale(x), 151); },
                                            randn({3, 3}, 152)); }});
    return c;
}

}  // namespace

std::vector<std::string> grad_suite_names(bool inject_fault) {
    std::vector<std::string> names;
    for (const auto& c : build_checks(inject_fault)) names.push_back(c.name);
    return names;
}

std::vector<GradSuiteEntry> run_grad_suite(bool inject_fault,
                                           const std::function<void(const GradSuiteEntry&)>& on_result) {
    std::vector<GradSuiteEntry> out;
    for (const auto& check : build_checks(inject_fault)) {
        const auto t0 = std::chrono::steady_clock::now();
        GradSuiteEntry e{check.name, check.tolerance, check.run(), false, 0};
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        e.passed = e.result.max_rel_error < e.tolerance && e.result.coordinates > 0;
        if (on_result) on_result(e);
        out.push_back(e);
    }
    return out;
}

}  // namespace trido
