#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trido/optim.hpp"
#include "trido/pet_sim.hpp"
#include "trido/se_former.hpp"
#include "trido/ssr_former.hpp"

namespace trido {

// ---- objective --------------------------------------------------------------

/// Batch mean of per-sample L2 norms ||S_S - S_E||_2.
template <typename T>
Var<T> loss_sino(const std::vector<Var<T>>& standard, const std::vector<Var<T>>& estimated);
/// Batch mean of per-sample mean absolute errors between I_S and I_E.
template <typename T>
Var<T> loss_img(const std::vector<Var<T>>& target, const std::vector<Var<T>>& estimated);
/// L_sino + lambda * L_img. Throws std::invalid_argument for lambda < 0.
template <typename T>
Var<T> loss_total(const Var<T>& l_sino, const Var<T>& l_img, double lambda);

// ---- model ------------------------------------------------------------------

struct ModelConfig {
    SEFormerConfig se;
    SSRFormerConfig ssr;

    /// Cross-module consistency (sinogram grid == image grid, channel counts).
    void validate() const;
    std::string digest() const;
};

template <typename T>
struct Prediction {
    Var<T> denoised;  // S_E
    Var<T> image;     // I_E
};

/// SE-Former followed by SSR-Former over one shared parameter store.
template <typename T>
class TriDoFormer {
public:
    TriDoFormer(const ModelConfig& cfg, std::uint64_t seed);
    /// Binds to parameters already present in `store` (e.g. loaded from disk).
    TriDoFormer(const ModelConfig& cfg, ParamStore<T> store);

    TriDoFormer(const TriDoFormer&) = delete;
    TriDoFormer& operator=(const TriDoFormer&) = delete;

    Prediction<T> forward(const Var<T>& low_sino) const;
    /// Graph-free prediction with the image clamped at zero.
    Prediction<T> infer(const Tensor<T>& low_sino) const;

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamStore<T>& params() noexcept { return store_; }
    const ParamStore<T>& params() const noexcept { return store_; }
    const SEFormer<T>& se() const noexcept { return se_; }
    const SSRFormer<T>& ssr() const noexcept { return ssr_; }

    /// Freezes (or thaws) every GFP filter.
    void set_gfp_trainable(bool trainable);

private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    SEFormer<T> se_;
    SSRFormer<T> ssr_;
};

// ---- training loop ----------------------------------------------------------

struct TrainConfig {
    int epochs = 150;
    int warm_epochs = 50;
    int batch_size = 4;
    double base_lr = 4e-4;
    double lambda = 10.0;
    std::uint64_t seed = 0;
    double dose_factor = 0.25;
    int checkpoint_every = 10;  // epochs; 0 disables periodic checkpoints
    bool train_gfp = true;

    void validate() const;
    LrSchedule schedule() const { return {base_lr, warm_epochs, epochs}; }
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double l_sino = 0;
    double l_img = 0;
    double l_total = 0;
    double val_psnr = 0;  // NaN when there is no validation split
};

struct StepRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double lr = 0;
    double l_sino = 0;
    double l_img = 0;
    double l_total = 0;
};

/// Position of the loop, enough to resume bit-exactly.
struct TrainerState {
    int epoch = 0;
    std::int64_t batch_in_epoch = 0;
    std::int64_t global_step = 0;
    double sum_sino = 0, sum_img = 0, sum_total = 0;
    std::int64_t samples_in_epoch = 0;
};

/// Thrown when a loss or gradient becomes non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainingPair {
    Tensor<float> low, standard, target;  // [1,H,W] each
};

std::vector<TrainingPair> to_training_pairs(const std::vector<pet::Sample>& samples);

/// Mean PSNR (dB, peak = max of reference) of model output vs I_S.
double validation_psnr(const TriDoFormer<float>& model, const std::vector<TrainingPair>& val);

class Trainer {
public:
    Trainer(TriDoFormer<float>& model, TrainConfig cfg, std::vector<TrainingPair> train,
            std::vector<TrainingPair> val = {});

    /// One optimiser step over the next mini-batch. Returns false once all
    /// epochs are done.
    std::optional<StepRecord> step();
    /// Runs to the end of the current epoch and returns its record.
    std::optional<EpochRecord> run_epoch();
    /// Runs the remaining epochs.
    std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {});

    bool finished() const { return state_.epoch >= cfg_.epochs; }
    const TrainerState& state() const noexcept { return state_; }
    void restore(const TrainerState& s) { state_ = s; }
    const TrainConfig& config() const noexcept { return cfg_; }
    const std::vector<EpochRecord>& history() const noexcept { return history_; }

private:
    std::vector<std::size_t> epoch_order(int epoch) const;
    std::int64_t batches_per_epoch() const;
    EpochRecord close_epoch();

    TriDoFormer<float>& model_;
    TrainConfig cfg_;
    std::vector<TrainingPair> train_;
    std::vector<TrainingPair> val_;
    TrainerState state_;
    std::vector<EpochRecord> history_;
};

extern template class TriDoFormer<float>;
extern template class TriDoFormer<double>;

}  // namespace trido
