#include "trido/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "trido/eval_metrics.hpp"

namespace trido {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

template <typename T>
void require_batch(const std::vector<Var<T>>& a, const std::vector<Var<T>>& b, const char* what) {
    if (a.empty() || a.size() != b.size())
        throw ShapeError(std::string(what) + ": batch sizes " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
}

template <typename T>
Var<T> batch_mean(std::vector<Var<T>> terms) {
    Var<T> acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
    return ops::scale(acc, static_cast<T>(1.0 / static_cast<double>(terms.size())));
}

template <typename T>
ParamStore<T> fresh_store(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    std::mt19937_64 rng(seed);
    SEFormer<T>::register_params(cfg.se, store, rng);
    SSRFormer<T>::register_params(cfg.ssr, store, rng);
    return store;
}

bool finite(const Tensor<float>& t) { return t.all_finite(); }

// "ssr_former/enc0/sstl1/attn/qkv/weight" -> "ssr_former/enc0"
std::string group_of(const std::string& name) {
    const auto first = name.find('/');
    if (first == std::string::npos) return name;
    const auto second = name.find('/', first + 1);
    return second == std::string::npos ? name : name.substr(0, second);
}

}  // namespace

// ---- objective --------------------------------------------------------------

template <typename T>
Var<T> loss_sino(const std::vector<Var<T>>& standard, const std::vector<Var<T>>& estimated) {
    require_batch(standard, estimated, "loss_sino");
    std::vector<Var<T>> terms;
    for (std::size_t i = 0; i < standard.size(); ++i) terms.push_back(ops::l2_distance(standard[i], estimated[i]));
    return batch_mean(std::move(terms));
}

template <typename T>
Var<T> loss_img(const std::vector<Var<T>>& target, const std::vector<Var<T>>& estimated) {
    require_batch(target, estimated, "loss_img");
    std::vector<Var<T>> terms;
    for (std::size_t i = 0; i < target.size(); ++i) terms.push_back(ops::mean_abs_error(target[i], estimated[i]));
    return batch_mean(std::move(terms));
}

template <typename T>
Var<T> loss_total(const Var<T>& l_sino, const Var<T>& l_img, double lambda) {
    if (!(lambda >= 0)) throw std::invalid_argument("loss_total: lambda must be >= 0");
    return ops::add(l_sino, ops::scale(l_img, static_cast<T>(lambda)));
}

// ---- model ------------------------------------------------------------------

void ModelConfig::validate() const {
    se.validate();
    ssr.validate();
    if (se.channels != ssr.in_channels)
        throw std::invalid_argument("model: se_former channels " + std::to_string(se.channels) +
                                    " != ssr_former in_channels " + std::to_string(ssr.in_channels));
    if (se.angles != ssr.height || se.bins != ssr.width)
        throw std::invalid_argument("model: sinogram grid " + std::to_string(se.angles) + "x" +
                                    std::to_string(se.bins) + " must equal the image grid " +
                                    std::to_string(ssr.height) + "x" + std::to_string(ssr.width));
}

std::string ModelConfig::digest() const {
    std::ostringstream os;
    os << "se:" << se.angles << ',' << se.bins << ',' << se.channels << ',' << se.width << ',' << se.blocks << ','
       << se.heads << ',' << se.ffn_ratio << ";ssr:";
    for (auto c : ssr.channels) os << c << ',';
    for (auto h : ssr.heads) os << h << ',';
    os << ssr.window << ',' << ssr.height << ',' << ssr.width << ',' << ssr.in_channels << ',' << ssr.out_channels
       << ',' << ssr.ffn_ratio;
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : os.str()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename T>
TriDoFormer<T>::TriDoFormer(const ModelConfig& cfg, std::uint64_t seed)
    : TriDoFormer(cfg, fresh_store<T>(cfg, seed)) {}

template <typename T>
TriDoFormer<T>::TriDoFormer(const ModelConfig& cfg, ParamStore<T> store)
    : cfg_(cfg), store_(std::move(store)), se_(cfg.se, store_), ssr_(cfg.ssr, store_) {
    cfg_.validate();
}

template <typename T>
Prediction<T> TriDoFormer<T>::forward(const Var<T>& low_sino) const {
    Var<T> denoised = se_.forward(low_sino);
    return {denoised, ssr_.forward(denoised)};
}

template <typename T>
Prediction<T> TriDoFormer<T>::infer(const Tensor<T>& low_sino) const {
    NoGradGuard guard;
    Prediction<T> p = forward(Var<T>::constant(low_sino));
    Tensor<T> img = p.image.value();
    for (auto& v : img.span()) v = std::max(v, T(0));
    p.image = Var<T>::constant(std::move(img));
    return p;
}

template <typename T>
void TriDoFormer<T>::set_gfp_trainable(bool trainable) {
    store_.set_trainable([](const std::string& n) { return n.find("/gfp/filter") != std::string::npos; }, trainable);
}

// ---- training loop ----------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (warm_epochs < 0 || warm_epochs >= epochs)
        throw std::invalid_argument("train: warm_epochs must lie in [0, epochs)");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(base_lr > 0)) throw std::invalid_argument("train: base_lr must be > 0");
    if (!(lambda > 0)) throw std::invalid_argument("train: lambda must be > 0");
    if (!(dose_factor > 0 && dose_factor <= 1)) throw std::invalid_argument("train: dose_factor must lie in (0, 1]");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
}

std::vector<TrainingPair> to_training_pairs(const std::vector<pet::Sample>& samples) {
    std::vector<TrainingPair> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto& sl = s.low.data.shape();
        const auto& ti = s.target.data.shape();
        out.push_back({s.low.data.reshaped({1, sl[0], sl[1]}).cast<float>(),
                       s.standard.data.reshaped({1, sl[0], sl[1]}).cast<float>(),
                       s.target.data.reshaped({1, ti[0], ti[1]}).cast<float>()});
    }
    return out;
}

double validation_psnr(const TriDoFormer<float>& model, const std::vector<TrainingPair>& val) {
    if (val.empty()) return std::nan("");
    double total = 0;
    for (const auto& p : val) {
        const auto img = model.infer(p.low).image.value().cast<double>();
        total += eval::psnr(img, p.target.cast<double>()).value();
    }
    return total / static_cast<double>(val.size());
}

Trainer::Trainer(TriDoFormer<float>& model, TrainConfig cfg, std::vector<TrainingPair> train,
                 std::vector<TrainingPair> val)
    : model_(model), cfg_(cfg), train_(std::move(train)), val_(std::move(val)) {
    cfg_.validate();
    if (train_.empty()) throw std::invalid_argument("train: training split is empty");
    const Shape sino{model.config().se.channels, model.config().se.angles, model.config().se.bins};
    const Shape img{model.config().ssr.out_channels, model.config().ssr.height, model.config().ssr.width};
    for (const auto* split : {&train_, &val_})
        for (const auto& p : *split)
            if (p.low.shape() != sino || p.standard.shape() != sino || p.target.shape() != img)
                throw ShapeError("train: sample extents " + shape_str(p.low.shape()) + "/" +
                                 shape_str(p.target.shape()) + " do not match the model (" + shape_str(sino) + "/" +
                                 shape_str(img) + ")");
    model_.set_gfp_trainable(cfg_.train_gfp);
}

std::int64_t Trainer::batches_per_epoch() const {
    const auto n = static_cast<std::int64_t>(train_.size());
    return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::vector<std::size_t> Trainer::epoch_order(int epoch) const {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(splitmix(cfg_.seed ^ splitmix(static_cast<std::uint64_t>(epoch) + 1)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

std::optional<StepRecord> Trainer::step() {
    if (finished()) return std::nullopt;
    const auto order = epoch_order(state_.epoch);
    const auto begin = static_cast<std::size_t>(state_.batch_in_epoch * cfg_.batch_size);
    const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch_size));
    const float inv_b = 1.0f / static_cast<float>(end - begin);

    auto& store = model_.params();
    store.zero_grad();
    double sum_sino = 0, sum_img = 0;
    // One tape per sample; gradients of the batch mean accumulate in the leaves.
    for (std::size_t i = begin; i < end; ++i) {
        const auto& p = train_[order[i]];
        const Prediction<float> pred = model_.forward(Var<float>::constant(p.low));
        Var<float> ls = ops::l2_distance(Var<float>::constant(p.standard), pred.denoised);
        Var<float> li = ops::mean_abs_error(Var<float>::constant(p.target), pred.image);
        backward(ops::scale(loss_total(ls, li, cfg_.lambda), inv_b));
        sum_sino += ls.value()[0];
        sum_img += li.value()[0];
    }
    const double n = static_cast<double>(end - begin);
    StepRecord rec{state_.global_step, state_.epoch, cfg_.schedule().at(state_.epoch), sum_sino / n, sum_img / n, 0};
    rec.l_total = rec.l_sino + cfg_.lambda * rec.l_img;

    if (!std::isfinite(rec.l_total)) {
        std::string culprit;
        for (const auto& prm : store.params())
            if (!finite(prm.var.value())) {
                culprit = prm.name;
                break;
            }
        if (culprit.empty())
            for (const auto& prm : store.params())
                if (prm.var.grad().size() && !finite(prm.var.grad())) {
                    culprit = prm.name;
                    break;
                }
        throw TrainingDiverged("non-finite loss at step " + std::to_string(state_.global_step) +
                               " (epoch " + std::to_string(state_.epoch) + "); offending parameter group: " +
                               (culprit.empty() ? std::string("<inputs>") : group_of(culprit)) +
                               (culprit.empty() ? "" : " (" + culprit + ")"));
    }
    for (const auto& prm : store.params())
        if (prm.trainable && prm.var.grad().size() && !finite(prm.var.grad()))
            throw TrainingDiverged("non-finite gradient at step " + std::to_string(state_.global_step) +
                                   "; offending parameter group: " + group_of(prm.name) + " (" + prm.name + ")");

    adam_step(store, rec.lr);
    state_.sum_sino += sum_sino;
    state_.sum_img += sum_img;
    state_.sum_total += sum_sino + cfg_.lambda * sum_img;
    state_.samples_in_epoch += static_cast<std::int64_t>(end - begin);
    ++state_.global_step;
    if (++state_.batch_in_epoch == batches_per_epoch()) history_.push_back(close_epoch());
    return rec;
}

EpochRecord Trainer::close_epoch() {
    const double n = static_cast<double>(state_.samples_in_epoch);
    EpochRecord r{state_.epoch, cfg_.schedule().at(state_.epoch), state_.sum_sino / n, state_.sum_img / n,
                  state_.sum_total / n, validation_psnr(model_, val_)};
    state_ = TrainerState{state_.epoch + 1, 0, state_.global_step, 0, 0, 0, 0};
    return r;
}

std::optional<EpochRecord> Trainer::run_epoch() {
    if (finished()) return std::nullopt;
    const std::size_t before = history_.size();
    while (history_.size() == before) step();
    return history_.back();
}

std::vector<EpochRecord> Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
    std::vector<EpochRecord> out;
    while (auto r = run_epoch()) {
        if (on_epoch) on_epoch(*r);
        out.push_back(*r);
    }
    return out;
}

template Var<float> loss_sino(const std::vector<Var<float>>&, const std::vector<Var<float>>&);
template Var<double> loss_sino(const std::vector<Var<double>>&, const std::vector<Var<double>>&);
template Var<float> loss_img(const std::vector<Var<float>>&, const std::vector<Var<float>>&);
template Var<double> loss_img(const std::vector<Var<double>>&, const std::vector<Var<double>>&);
template Var<float> loss_total(const Var<float>&, const Var<float>&, double);
template Var<double> loss_total(const Var<double>&, const Var<double>&, double);

template class TriDoFormer<float>;
template class TriDoFormer<double>;

}  // namespace trido
