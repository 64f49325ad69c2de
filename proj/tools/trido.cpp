// trido: simulate | train | reconstruct | eval | gradcheck | spectrum
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 runtime failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "log.hpp"
#include "trido/config.hpp"
#include "trido/eval_metrics.hpp"
#include "trido/grad_suite.hpp"
#include "trido/io.hpp"
#include "trido/training.hpp"

namespace fs = std::filesystem;
using namespace trido;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigArgs {
    std::string file;
    std::string preset = "default";
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", file, "JSON run configuration");
        cmd->add_option("--preset", preset, "Base configuration before --config and --set")
            ->check(CLI::IsMember({"default", "desk"}));
        cmd->add_option("--set", overrides, "Override, e.g. --set train.epochs=30 (repeatable, wins over --config)");
    }

    RunConfig resolve() const {
        RunConfig base = preset == "desk" ? RunConfig::desk() : RunConfig{};
        RunConfig cfg = file.empty() ? base : RunConfig::load(file, base);
        cfg.apply_overrides(overrides);
        return cfg;
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text, bool append = false) {
    std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

std::string history_line(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["l_sino"] = r.l_sino;
    j["l_img"] = r.l_img;
    j["l_total"] = r.l_total;
    if (std::isnan(r.val_psnr))
        j["val_psnr"] = nullptr;
    else
        j["val_psnr"] = r.val_psnr;
    return j.dump() + "\n";
}

std::unique_ptr<TriDoFormer<float>> model_from(io::Checkpoint& ck) {
    return std::make_unique<TriDoFormer<float>>(ck.model, std::move(ck.params));
}

Tensor<float> as_sinogram(const Tensor<double>& t, const ModelConfig& m) {
    const Shape expect{m.se.channels, m.se.angles, m.se.bins};
    if (t.shape() == expect) return t.cast<float>();
    if (t.rank() == 2 && m.se.channels == 1 && t.dim(0) == m.se.angles && t.dim(1) == m.se.bins)
        return t.reshaped(expect).cast<float>();
    throw ShapeError("sinogram has extents " + shape_str(t.shape()) + "; the checkpoint expects " +
                     shape_str(expect) + " (or [" + std::to_string(m.se.angles) + ", " + std::to_string(m.se.bins) +
                     "])");
}

// ---- simulate -----------------------------------------------------------------

int cmd_simulate(const ConfigArgs& ca, const std::string& out) {
    const RunConfig cfg = ca.resolve();
    const auto t0 = std::chrono::steady_clock::now();
    log::info("simulating " + std::to_string(cfg.n_train) + " train + " + std::to_string(cfg.n_val) +
              " val slices (dose " + std::to_string(cfg.dose_factor) + ", seed " + std::to_string(cfg.data_seed) + ")");
    const pet::Dataset ds = pet::make_dataset(cfg.dataset_options());
    fs::create_directories(out);
    const auto split = ds.samples.begin() + cfg.n_train;
    io::write_split(fs::path(out) / "train", {ds.samples.begin(), split}, ds.meta);
    if (cfg.n_val > 0) io::write_split(fs::path(out) / "val", {split, ds.samples.end()}, ds.meta);
    write_text(fs::path(out) / "config.json", cfg.to_json());
    log::info("wrote " + out + " in " + std::to_string(seconds_since(t0)) + " s (sino_max " +
              std::to_string(ds.meta.sino_max) + ", image_max " + std::to_string(ds.meta.image_max) + ")");
    return kOk;
}

// ---- train --------------------------------------------------------------------------

int cmd_train(const ConfigArgs& ca, const std::string& data, const std::string& out, const std::string& resume,
              std::int64_t max_steps) {
    const fs::path outdir(out);
    std::unique_ptr<TriDoFormer<float>> model;
    RunConfig cfg = ca.resolve();
    std::optional<TrainerState> state;
    if (!resume.empty()) {
        io::Checkpoint ck = io::load_checkpoint(resume);
        cfg.train = ck.train;
        state = ck.state;
        model = model_from(ck);
        log::info("resuming from " + resume + " at epoch " + std::to_string(state->epoch) + ", step " +
                  std::to_string(state->global_step));
    }

    const pet::Dataset train = io::read_split(fs::path(data) / "train");
    std::vector<pet::Sample> val_samples;
    if (fs::exists(fs::path(data) / "val")) val_samples = io::read_split(fs::path(data) / "val").samples;
    if (train.samples.empty()) throw std::runtime_error("training split is empty");
    // A resumed run takes its shape from the checkpoint, not from the flags.
    if (model) {
        const auto& mc = model->config();
        if (mc.se.angles != train.meta.geometry.n_angles || mc.se.bins != train.meta.geometry.n_bins)
            throw ConfigError("dataset sinograms do not match the checkpoint's " + std::to_string(mc.se.angles) + "x" +
                              std::to_string(mc.se.bins) + " model");
    } else if (!(train.meta.geometry == cfg.geometry))
        throw ConfigError("dataset geometry (" + std::to_string(train.meta.geometry.n_angles) + " angles, " +
                          std::to_string(train.meta.geometry.n_bins) + " bins, " +
                          std::to_string(train.meta.geometry.image_size) +
                          " px) differs from the configured geometry");
    cfg.train.dose_factor = train.meta.dose_factor;
    if (!model) model = std::make_unique<TriDoFormer<float>>(cfg.model(), cfg.model_seed);

    const TrainConfig& tc = cfg.train;
    std::printf("lambda = %g\n", tc.lambda);
    std::printf("epochs = %d (flat %d), batch = %d, base lr = %g, parameters = %zu\n", tc.epochs, tc.warm_epochs,
                tc.batch_size, tc.base_lr, model->params().scalar_count());
    std::fflush(stdout);

    fs::create_directories(outdir);
    if (!state) {
        write_text(outdir / "config.json", cfg.to_json());
        write_text(outdir / "history.jsonl", "");
    }
    Trainer trainer(*model, tc, to_training_pairs(train.samples), to_training_pairs(val_samples));
    if (state) trainer.restore(*state);

    const auto t0 = std::chrono::steady_clock::now();
    auto save = [&](const std::string& name) {
        io::save_checkpoint(outdir / name, model->config(), tc, trainer.state(), model->params());
        log::info("checkpoint " + (outdir / name).string());
    };
    std::size_t logged = 0;
    auto flush_history = [&] {
        for (; logged < trainer.history().size(); ++logged) {
            const EpochRecord& r = trainer.history()[logged];
            write_text(outdir / "history.jsonl", history_line(r), true);
            char line[200];
            std::snprintf(line, sizeof line,
                          "epoch %3d  lr %.3e  L_sino %.5f  L_img %.6f  L_total %.5f  val PSNR %.3f dB  (%.0f s)",
                          r.epoch, r.lr, r.l_sino, r.l_img, r.l_total, r.val_psnr, seconds_since(t0));
            log::info(line);
            if (tc.checkpoint_every > 0 && (r.epoch + 1) % tc.checkpoint_every == 0 && !trainer.finished())
                save("ckpt_epoch" + std::to_string(r.epoch + 1) + ".tdck");
        }
    };
    while (!trainer.finished()) {
        if (max_steps >= 0 && trainer.state().global_step >= max_steps) {
            flush_history();
            save("last.tdck");
            log::info("stopped after " + std::to_string(trainer.state().global_step) + " steps");
            return kOk;
        }
        const auto rec = trainer.step();
        log::debug("step " + std::to_string(rec->step) + " L_total " + std::to_string(rec->l_total));
        flush_history();
    }
    save("final.tdck");
    return kOk;
}

// ---- reconstruct ---------------------------------------------------------------------

int cmd_reconstruct(const std::string& ckpt, const std::string& input, const std::string& output,
                    const std::string& denoised, const std::string& pgm) {
    io::Checkpoint ck = io::load_checkpoint(ckpt);
    auto model = model_from(ck);
    const Tensor<float> sino = as_sinogram(io::load_real(input), model->config());
    const Prediction<float> p = model->infer(sino);
    io::save_tensor(output, p.image.value());
    if (!denoised.empty()) io::save_tensor(denoised, p.denoised.value());
    if (!pgm.empty()) io::write_pgm(pgm, p.image.value().cast<double>());
    log::info("wrote " + output + " " + shape_str(p.image.shape()));
    return kOk;
}

// ---- eval --------------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split, const std::string& out) {
    fs::path dir = fs::path(data) / split;
    if (!fs::exists(dir) && fs::exists(fs::path(data) / "metadata.json")) dir = data;
    const pet::Dataset ds = io::read_split(dir);
    if (ds.samples.empty()) throw std::runtime_error("dataset " + dir.string() + " is empty");
    std::vector<eval::Method> methods;
    std::unique_ptr<TriDoFormer<float>> model;
    if (!ckpt.empty()) {
        io::Checkpoint ck = io::load_checkpoint(ckpt);
        model = model_from(ck);
        auto* m = model.get();
        methods.push_back({eval::kModel, [m](const pet::Sample& s) {
                               const auto& d = s.low.data;
                               return m->infer(d.reshaped({1, d.dim(0), d.dim(1)}).cast<float>())
                                   .image.value()
                                   .cast<double>();
                           }});
    }
    const eval::EvalReport report = eval::evaluate(methods, ds);
    const std::string table = report.table();
    std::cout << table;
    if (!out.empty()) {
        fs::create_directories(out);
        write_text(fs::path(out) / "report.txt", table);
        write_text(fs::path(out) / "report.jsonl", report.jsonl());
    }
    return kOk;
}

// ---- gradcheck -------------------------------------------------------------------------------

int cmd_gradcheck(bool inject_fault) {
    bool ok = true;
    std::printf("%-20s %14s %10s %8s %6s\n", "op", "max_rel_error", "tolerance", "seconds", "result");
    run_grad_suite(inject_fault, [&](const GradSuiteEntry& e) {
        std::printf("%-20s %14.3e %10.0e %8.2f %6s\n", e.name.c_str(), e.result.max_rel_error, e.tolerance, e.seconds,
                    e.passed ? "PASS" : "FAIL");
        std::fflush(stdout);
        ok = ok && e.passed;
    });
    return ok ? kOk : kRuntime;
}

// ---- spectrum -------------------------------------------------------------------------------

int cmd_spectrum(const std::string& ckpt, const std::string& image, const std::string& out, std::int64_t rings) {
    if (ckpt.empty() == image.empty()) throw UsageError("spectrum needs exactly one of --checkpoint or --image");
    fs::create_directories(out);
    if (!ckpt.empty()) {
        io::Checkpoint ck = io::load_checkpoint(ckpt);
        std::string index;
        for (const auto& p : ck.params.params()) {
            if (p.name.find("/gfp/filter") == std::string::npos) continue;
            std::string file = p.name;
            for (auto& ch : file)
                if (ch == '/') ch = '_';
            file += ".tdt";
            io::save_tensor(fs::path(out) / file, p.var.value());
            const auto& v = p.var.value();
            double lo = v[0], hi = v[0];
            for (float x : v.span()) lo = std::min<double>(lo, x), hi = std::max<double>(hi, x);
            nlohmann::ordered_json j{{"name", p.name}, {"file", file}, {"extents", p.var.shape()},
                                     {"min", lo},      {"max", hi}};
            index += j.dump() + "\n";
            std::printf("%-40s %-14s min %.6f max %.6f\n", p.name.c_str(), shape_str(p.var.shape()).c_str(), lo, hi);
        }
        write_text(fs::path(out) / "filters.jsonl", index);
    } else {
        const Tensor<double> img = io::load_real(image);
        const auto spec = rings > 0 ? eval::radial_spectrum(img, rings) : eval::radial_spectrum(img);
        std::string lines;
        for (std::size_t r = 0; r < spec.mean_power.size(); ++r) {
            nlohmann::ordered_json j{{"ring", r},
                                     {"mean_power", spec.mean_power[r]},
                                     {"total_power", spec.total_power[r]},
                                     {"bins", spec.counts[r]}};
            lines += j.dump() + "\n";
            std::printf("ring %3zu  mean %.6e  total %.6e\n", r, spec.mean_power[r], spec.total_power[r]);
        }
        write_text(fs::path(out) / "spectrum.jsonl", lines);
        io::write_pgm(fs::path(out) / "image.pgm", img);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TriDo-Former direct PET reconstruction (desk scale)"};
    app.require_subcommand(1);

    ConfigArgs sim_cfg, train_cfg;
    std::string sim_out, data, out, resume, ckpt, input, output, denoised, pgm, split = "val", image;
    std::int64_t max_steps = -1, rings = 0;
    bool inject = false;

    auto* sim = app.add_subcommand("simulate", "Simulate a dataset (train/ and val/ splits)");
    sim_cfg.attach(sim);
    sim->add_option("--out", sim_out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train end to end; writes checkpoints and history.jsonl");
    train_cfg.attach(train);
    train->add_option("--data", data, "Dataset directory from `simulate`")->required();
    train->add_option("--out", out, "Run directory")->required();
    train->add_option("--resume", resume, "Checkpoint to continue from");
    train->add_option("--max-steps", max_steps, "Stop (and checkpoint to last.tdck) after this many optimiser steps");

    auto* rec = app.add_subcommand("reconstruct", "Sinogram tensor file -> image tensor file");
    rec->add_option("--checkpoint", ckpt)->required();
    rec->add_option("--input", input, "Normalised LPET sinogram (TDT1)")->required();
    rec->add_option("--output", output, "Image tensor file to write")->required();
    rec->add_option("--emit-denoised", denoised, "Also write the denoised sinogram S_E here");
    rec->add_option("--pgm", pgm, "Also write an 8-bit PGM preview");

    auto* ev = app.add_subcommand("eval", "Compare the model with OSEM baselines");
    ev->add_option("--checkpoint", ckpt, "Trained checkpoint (omit for baselines only)");
    ev->add_option("--data", data, "Dataset directory")->required();
    ev->add_option("--split", split, "Split to score")->capture_default_str();
    ev->add_option("--out", out, "Directory for report.txt and report.jsonl");

    auto* gc = app.add_subcommand("gradcheck", "64-bit finite-difference check of every differentiable op");
    gc->add_flag("--inject-fault", inject, "Append an op with a broken backward (harness self-test)")->group("");

    auto* sp = app.add_subcommand("spectrum", "Export GFP filters or an image's radial spectrum");
    sp->add_option("--checkpoint", ckpt);
    sp->add_option("--image", image, "Image tensor file");
    sp->add_option("--rings", rings, "Number of radial rings (default N/2+1)");
    sp->add_option("--out", out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*sim) return cmd_simulate(sim_cfg, sim_out);
        if (*train) return cmd_train(train_cfg, data, out, resume, max_steps);
        if (*rec) return cmd_reconstruct(ckpt, input, output, denoised, pgm);
        if (*ev) return cmd_eval(ckpt, data, split, out);
        if (*gc) return cmd_gradcheck(inject);
        if (*sp) return cmd_spectrum(ckpt, image, out, rings);
    } catch (const UsageError& e) {
        log::error(e.what());
        return kUsage;
    } catch (const ConfigError& e) {
        log::error(std::string("configuration: ") + e.what());
        return kUsage;
    } catch (const TrainingDiverged& e) {
        log::error(e.what());
        return kRuntime;
    } catch (const std::exception& e) {
        log::error(e.what());
        return kRuntime;
    }
    return kUsage;
}
