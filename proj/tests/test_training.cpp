#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "trido/training.hpp"

using namespace trido;
using namespace testing;

namespace {

ModelConfig tiny_model(std::int64_t size = 16) {
    ModelConfig m;
    m.se.angles = m.se.bins = size;
    m.se.width = size * 2;
    m.se.heads = 2;
    m.se.ffn_ratio = 2;
    m.ssr.channels = {4, 4, 8, 8};
    m.ssr.heads = {1, 2, 2, 2};
    m.ssr.window = 2;
    m.ssr.height = m.ssr.width = size;
    return m;
}

std::vector<TrainingPair> tiny_data(std::int64_t n, std::uint64_t seed = 3, std::int64_t size = 16) {
    pet::DatasetOptions o;
    o.n_slices = n;
    o.geometry.image_size = o.geometry.n_angles = o.geometry.n_bins = size;
    o.osem = {4, 4};
    o.seed = seed;
    return to_training_pairs(make_dataset(o).samples);
}

TrainConfig short_cfg(int epochs = 2, int warm = 1) {
    TrainConfig c;
    c.epochs = epochs;
    c.warm_epochs = warm;
    c.batch_size = 2;
    c.base_lr = 1e-3;
    c.seed = 4;
    return c;
}

std::vector<Var<double>> one(Tensor<double> t) { return {cst(std::move(t))}; }

}  // namespace

TEST_CASE("sinogram loss") {
    const Tensor<double> z({1, 3, 4}), o = Tensor<double>::ones({1, 3, 4});
    CHECK(loss_sino(one(z), one(z)).value()[0] == 0.0);
    CHECK(loss_sino(one(z), one(o)).value()[0] == doctest::Approx(std::sqrt(12.0)));
    const auto a = randn({1, 3, 4}, 1), b = randn({1, 3, 4}, 2);
    CHECK(loss_sino(one(a), one(b)).value()[0] == loss_sino(one(b), one(a)).value()[0]);
    // batch mean of per-sample norms
    const auto two = loss_sino<double>({cst(z), cst(z)}, {cst(o), cst(z)}).value()[0];
    CHECK(two == doctest::Approx(std::sqrt(12.0) / 2));
    CHECK_THROWS_AS(loss_sino<double>({cst(z)}, {}), ShapeError);
}

TEST_CASE("image loss") {
    const auto a = uniform({1, 5, 5}, 3);
    CHECK(loss_img(one(a), one(a)).value()[0] == 0.0);
    auto b = a;
    for (auto& v : b.span()) v += 0.1;
    CHECK(loss_img(one(a), one(b)).value()[0] == doctest::Approx(0.1));
    for (std::uint64_t s = 0; s < 5; ++s) CHECK(loss_img(one(randn({1, 5, 5}, s)), one(randn({1, 5, 5}, s + 9))).value()[0] >= 0);
}

TEST_CASE("total loss") {
    const auto s = cst(Tensor<double>({1}, std::vector<double>{1.0}));
    const auto i = cst(Tensor<double>({1}, std::vector<double>{0.5}));
    CHECK(loss_total(s, i, 10.0).value()[0] == doctest::Approx(6.0));
    CHECK(loss_total(s, i, 0.0).value()[0] == 1.0);
    CHECK(loss_total(cst(Tensor<double>({1})), cst(Tensor<double>({1})), 10.0).value()[0] == 0.0);
    CHECK_THROWS_AS(loss_total(s, i, -1.0), std::invalid_argument);
}

TEST_CASE("published hyperparameters are the defaults") {
    const TrainConfig c;
    CHECK(c.lambda == 10.0);
    CHECK(c.batch_size == 4);
    CHECK(c.base_lr == 4e-4);
    CHECK(c.warm_epochs == 50);
    CHECK(c.epochs == 150);
    CHECK(c.dose_factor == 0.25);
    const auto sch = c.schedule();
    CHECK(sch.at(0) == 4e-4);
    CHECK(sch.at(49) == 4e-4);
    CHECK(sch.at(100) == doctest::Approx(2e-4));
    CHECK(sch.at(150) == 0.0);
    const ModelConfig m;
    CHECK(m.se.blocks == 2);     // T
    CHECK(m.ssr.window == 4);    // M
}

TEST_CASE("model configuration consistency and digest") {
    auto m = tiny_model();
    CHECK_NOTHROW(m.validate());
    const auto d = m.digest();
    CHECK(d == tiny_model().digest());
    m.ssr.height = 32;
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
    CHECK(m.digest() != d);
}

TEST_CASE("model forward produces both outputs") {
    TriDoFormer<float> model(tiny_model(), 1);
    const auto data = tiny_data(1);
    const auto pred = model.infer(data[0].low);
    CHECK(pred.denoised.value().shape() == Shape{1, 16, 16});
    CHECK(pred.image.value().shape() == Shape{1, 16, 16});
    for (float v : pred.image.value().span()) CHECK(v >= 0.0f);
    CHECK_FALSE(pred.image.requires_grad());
}

TEST_CASE("training is reproducible under a fixed seed") {
    const auto data = tiny_data(4);
    auto run = [&] {
        TriDoFormer<float> model(tiny_model(), 7);
        Trainer t(model, short_cfg(), data, data);
        std::vector<double> losses;
        while (auto r = t.step()) losses.push_back(r->l_total);
        return std::pair{losses, t.history().back().val_psnr};
    };
    const auto a = run(), b = run();
    CHECK(a.first.size() == 4);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("epoch records carry both loss components and the schedule") {
    const auto data = tiny_data(3);
    TriDoFormer<float> model(tiny_model(), 2);
    auto cfg = short_cfg(4, 2);
    Trainer t(model, cfg, data);
    std::vector<EpochRecord> seen;
    t.run([&](const EpochRecord& r) { seen.push_back(r); });
    REQUIRE(seen.size() == 4);
    CHECK(t.finished());
    CHECK_FALSE(t.step().has_value());
    for (const auto& r : seen) {
        CHECK(r.lr == cfg.schedule().at(r.epoch));
        CHECK(r.l_sino > 0);
        CHECK(r.l_img > 0);
        CHECK(r.l_total == doctest::Approx(r.l_sino + cfg.lambda * r.l_img));
        CHECK(std::isnan(r.val_psnr));
    }
    CHECK(seen[3].lr == doctest::Approx(cfg.base_lr / 2));
    // 3 samples at batch 2: two steps per epoch, the second holding one sample
    CHECK(t.state().global_step == 8);
}

TEST_CASE("non-finite parameters abort with the parameter group named") {
    const auto data = tiny_data(2);
    TriDoFormer<float> model(tiny_model(), 3);
    model.params().get("ssr_former/enc1/sstl0/attn/qkv/weight").mutable_value()[5] = NAN;
    Trainer t(model, short_cfg(), data);
    try {
        t.step();
        FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
        CHECK(std::string(e.what()).find("ssr_former/enc1") != std::string::npos);
    }
}

TEST_CASE("frozen spectral filters stay at one") {
    const auto data = tiny_data(2);
    TriDoFormer<float> model(tiny_model(), 5);
    auto cfg = short_cfg(1, 0);
    cfg.train_gfp = false;
    const auto before = model.params().get("ssr_former/enc0/conv/weight").value();
    Trainer t(model, cfg, data);
    t.run();
    for (const auto& p : model.params().params())
        if (p.name.find("/gfp/filter") != std::string::npos) {
            CHECK_FALSE(p.trainable);
            CHECK(p.var.value() == Tensor<float>::ones(p.var.shape()));
        }
    CHECK_FALSE(model.params().get("ssr_former/enc0/conv/weight").value() == before);
}

TEST_CASE("trainer rejects inconsistent data and settings") {
    TriDoFormer<float> model(tiny_model(), 6);
    CHECK_THROWS(Trainer(model, short_cfg(), tiny_data(2, 1, 32)));
    CHECK_THROWS(Trainer(model, short_cfg(), {}));
    auto bad = short_cfg();
    bad.lambda = 0;
    CHECK_THROWS(Trainer(model, bad, tiny_data(2)));
    bad = short_cfg(2, 3);
    CHECK_THROWS(Trainer(model, bad, tiny_data(2)));
}

TEST_CASE("a desk-size model overfits a single sample") {
    ModelConfig m;
    m.se.width = 64;
    m.ssr.channels = {16, 32, 64, 128};
    pet::DatasetOptions o;
    o.n_slices = 1;
    o.seed = 11;
    const auto pair = to_training_pairs(make_dataset(o).samples);
    TriDoFormer<float> model(m, 12);
    TrainConfig c;
    c.epochs = 200;
    c.warm_epochs = 199;
    c.batch_size = 1;
    Trainer t(model, c, pair);
    const double first = t.step()->l_total;
    double last = first;
    for (int k = 1; k < 200; ++k) last = t.step()->l_total;
    MESSAGE("overfit loss " << first << " -> " << last);
    CHECK(last * 10 <= first);
}
