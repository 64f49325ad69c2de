#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>
#include <cstring>
#include <limits>
#include <memory>

#include "trido/config.hpp"
#include "trido/eval_metrics.hpp"
#include "trido/grad_suite.hpp"
#include "trido/io.hpp"
#include "trido/ops.hpp"
#include "trido/training.hpp"

namespace py = pybind11;
using namespace trido;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const F64Array& a) {
    Shape s(a.shape(), a.shape() + a.ndim());
    Tensor<double> t(s);
    std::memcpy(t.data(), a.data(), t.size() * sizeof(double));
    return t;
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
    py::array_t<T> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::memcpy(a.mutable_data(), t.data(), t.size() * sizeof(T));
    return a;
}

Tensor<double> require_2d(const F64Array& a, const char* what) {
    if (a.ndim() != 2) throw py::value_error(std::string(what) + " must be 2-D");
    return to_tensor(a);
}

pet::Geometry geometry_of(std::int64_t n_angles, std::int64_t n_bins, std::int64_t image_size, double spacing) {
    pet::Geometry g;
    g.n_angles = n_angles;
    g.n_bins = n_bins;
    g.image_size = image_size;
    g.bin_spacing = spacing;
    g.validate();
    return g;
}

RunConfig resolve(const std::string& preset, const std::string& config_json) {
    RunConfig base;
    if (preset == "desk")
        base = RunConfig::desk();
    else if (preset != "default")
        throw py::value_error("preset must be 'default' or 'desk'");
    return config_json.empty() ? base : RunConfig::from_json(config_json, base);
}

py::dict split_dict(const std::vector<pet::Sample>& samples, const pet::DatasetMeta& meta) {
    auto stack = [&](auto field) {
        std::vector<Tensor<double>> parts;
        for (const auto& s : samples) parts.push_back(field(s));
        const Shape& one = parts.empty() ? Shape{0, 0} : parts[0].shape();
        py::array_t<double> a({static_cast<py::ssize_t>(parts.size()), static_cast<py::ssize_t>(one[0]),
                               static_cast<py::ssize_t>(one[1])});
        double* dst = a.mutable_data();
        for (const auto& p : parts) dst = std::copy(p.vec().begin(), p.vec().end(), dst);
        return a;
    };
    py::dict d;
    d["low"] = stack([](const pet::Sample& s) { return s.low.data; });
    d["standard"] = stack([](const pet::Sample& s) { return s.standard.data; });
    d["target"] = stack([](const pet::Sample& s) { return s.target.data; });
    d["sino_max"] = meta.sino_max;
    d["image_max"] = meta.image_max;
    d["dose_factor"] = meta.dose_factor;
    return d;
}

// Model handle owning its parameters; Python sees float64 arrays only.
class PyModel {
public:
    PyModel(const ModelConfig& cfg, std::uint64_t seed) : model_(std::make_unique<TriDoFormer<float>>(cfg, seed)) {}
    explicit PyModel(io::Checkpoint ck)
        : train_config(ck.train), model_(std::make_unique<TriDoFormer<float>>(ck.model, std::move(ck.params))) {}

    TriDoFormer<float>& model() { return *model_; }

    py::tuple reconstruct(const F64Array& sino) const {
        const auto& c = model_->config();
        const Tensor<double> s = require_2d(sino, "sinogram");
        if (s.dim(0) != c.se.angles || s.dim(1) != c.se.bins)
            throw ShapeError("sinogram is " + shape_str(s.shape()) + ", model expects [" +
                             std::to_string(c.se.angles) + "," + std::to_string(c.se.bins) + "]");
        Prediction<float> p;
        {
            NoGradGuard guard;
            p = model_->infer(s.cast<float>().reshaped({1, s.dim(0), s.dim(1)}));
        }
        const auto flat = [](const Tensor<float>& t) { return to_array(t.cast<double>().reshaped({t.dim(1), t.dim(2)})); };
        return py::make_tuple(flat(p.image.value()), flat(p.denoised.value()));
    }

    std::vector<std::string> parameter_names() {
        std::vector<std::string> out;
        for (const auto& p : model_->params().params()) out.push_back(p.name);
        return out;
    }

    py::array_t<double> parameter(const std::string& name) {
        return to_array(model_->params().get(name).value().cast<double>());
    }

    std::size_t parameter_count() { return model_->params().scalar_count(); }
    std::string digest() const { return model_->config().digest(); }

    void save(const std::string& path, const TrainerState& state) const {
        io::save_checkpoint(path, model_->config(), train_config, state, model_->params());
    }
    TrainConfig train_config;  // stored alongside the weights on save

private:
    std::unique_ptr<TriDoFormer<float>> model_;
};

py::dict epoch_dict(const EpochRecord& r) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["lr"] = r.lr;
    d["l_sino"] = r.l_sino;
    d["l_img"] = r.l_img;
    d["l_total"] = r.l_total;
    d["val_psnr"] = r.val_psnr;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Direct PET reconstruction with a triple-domain transformer (C++ core).";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<io::FormatError>(m, "FormatError", PyExc_IOError);
    py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

    // ---- simulation ----
    m.def(
        "forward_project",
        [](const F64Array& image, std::int64_t n_angles, std::int64_t n_bins, double bin_spacing) {
            const auto img = require_2d(image, "image");
            const auto g = geometry_of(n_angles, n_bins, img.dim(0), bin_spacing);
            return to_array(pet::forward_project(pet::ImageGrid{img}, g).data);
        },
        py::arg("image"), py::arg("n_angles") = 64, py::arg("n_bins") = 64, py::arg("bin_spacing") = 1.0,
        "Parallel-beam line integrals, angles uniform over [0, pi).");
    m.def(
        "back_project",
        [](const F64Array& sino, std::int64_t image_size, double bin_spacing) {
            const auto s = require_2d(sino, "sinogram");
            const auto g = geometry_of(s.dim(0), s.dim(1), image_size, bin_spacing);
            return to_array(pet::back_project(pet::Sinogram{s, g}, g).data);
        },
        py::arg("sinogram"), py::arg("image_size") = 64, py::arg("bin_spacing") = 1.0,
        "Exact adjoint of forward_project.");
    m.def(
        "simulate_dose",
        [](const F64Array& sino, double dose_factor, std::uint64_t seed) {
            const auto s = require_2d(sino, "sinogram");
            pet::Geometry g;
            g.n_angles = s.dim(0);
            g.n_bins = s.dim(1);
            return to_array(pet::simulate_dose(pet::Sinogram{s, g}, dose_factor, seed).data);
        },
        py::arg("sinogram"), py::arg("dose_factor") = 0.25, py::arg("seed") = 0);
    m.def(
        "osem",
        [](const F64Array& sino, std::int64_t image_size, std::int64_t subsets, std::int64_t iters, double spacing) {
            const auto s = require_2d(sino, "sinogram");
            const auto g = geometry_of(s.dim(0), s.dim(1), image_size, spacing);
            pet::ImageGrid out;
            {
                py::gil_scoped_release release;
                out = pet::osem_reconstruct(pet::Sinogram{s, g}, g, {subsets, iters});
            }
            return to_array(out.data);
        },
        py::arg("sinogram"), py::arg("image_size") = 64, py::arg("subsets") = 8, py::arg("iters") = 10,
        py::arg("bin_spacing") = 1.0);
    m.def(
        "make_dataset",
        [](const std::string& config_json, const std::string& preset) {
            const RunConfig cfg = resolve(preset, config_json);
            pet::Dataset ds;
            {
                py::gil_scoped_release release;
                ds = pet::make_dataset(cfg.dataset_options());
            }
            const auto split = ds.samples.begin() + cfg.n_train;
            py::dict out;
            out["train"] = split_dict({ds.samples.begin(), split}, ds.meta);
            out["val"] = split_dict({split, ds.samples.end()}, ds.meta);
            return out;
        },
        py::arg("config_json") = "", py::arg("preset") = "default",
        "Simulated (low, standard, target) stacks for the train and val splits, normalised to [0, 1].");

    // ---- spectral helpers ----
    m.def(
        "rdft2",
        [](const F64Array& x) {
            const auto spec = fft::rdft2(to_tensor(x));
            const Shape s = spec.shape();
            py::array_t<std::complex<double>> a(std::vector<py::ssize_t>(s.begin(), s.end()));
            for (std::size_t i = 0; i < spec.size(); ++i) a.mutable_data()[i] = {spec.re(i), spec.im(i)};
            return a;
        },
        py::arg("x"), "Unnormalised half spectrum over the last two axes.");
    m.def(
        "irdft2",
        [](const py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>& spec, std::int64_t h,
           std::int64_t w) {
            ComplexTensor<double> c(Shape(spec.shape(), spec.shape() + spec.ndim()));
            for (std::size_t i = 0; i < c.size(); ++i) {
                c.re(i) = spec.data()[i].real();
                c.im(i) = spec.data()[i].imag();
            }
            return to_array(fft::irdft2(c, h, w));
        },
        py::arg("spectrum"), py::arg("height"), py::arg("width"));
    m.def(
        "global_frequency_parser",
        [](const F64Array& x, const F64Array& filter) {
            return to_array(global_frequency_parser(Var<double>::constant(to_tensor(x)),
                                                    Var<double>::constant(to_tensor(filter)))
                                .value());
        },
        py::arg("x"), py::arg("filter"), "irdft2(rdft2(x) * filter) per channel; filter is [C, H, W/2+1].");

    // ---- metrics ----
    m.def(
        "psnr",
        [](const F64Array& x, const F64Array& ref) {
            const auto p = eval::psnr(to_tensor(x), to_tensor(ref));
            return p.identical ? std::numeric_limits<double>::infinity() : p.db;
        },
        py::arg("x"), py::arg("reference"), "PSNR in dB with peak = max(reference); inf when identical.");
    m.def(
        "ssim", [](const F64Array& x, const F64Array& ref) { return eval::ssim(to_tensor(x), to_tensor(ref)); },
        py::arg("x"), py::arg("reference"));
    m.def(
        "nmse", [](const F64Array& x, const F64Array& ref) { return eval::nmse(to_tensor(x), to_tensor(ref)); },
        py::arg("x"), py::arg("reference"));
    m.def(
        "radial_spectrum",
        [](const F64Array& image, std::int64_t rings) {
            const auto img = require_2d(image, "image");
            const auto s = rings > 0 ? eval::radial_spectrum(img, rings) : eval::radial_spectrum(img);
            py::dict d;
            d["mean_power"] = s.mean_power;
            d["total_power"] = s.total_power;
            d["counts"] = s.counts;
            return d;
        },
        py::arg("image"), py::arg("rings") = 0);

    // ---- files ----
    m.def(
        "load_tensor",
        [](const std::string& path) -> py::object {
            return std::visit(
                [](const auto& t) -> py::object {
                    using T = std::decay_t<decltype(t)>;
                    if constexpr (std::is_same_v<T, ComplexTensor<float>>) {
                        const Shape s = t.shape();
                        py::array_t<std::complex<float>> a(std::vector<py::ssize_t>(s.begin(), s.end()));
                        std::memcpy(a.mutable_data(), t.interleaved().data(), t.interleaved().size() * sizeof(float));
                        return std::move(a);
                    } else {
                        return to_array(t);
                    }
                },
                io::load_tensor(path));
        },
        py::arg("path"));
    m.def(
        "save_tensor", [](const std::string& path, const F64Array& a) { io::save_tensor(path, to_tensor(a)); },
        py::arg("path"), py::arg("array"), "Writes a float64 TDT1 file.");

    // ---- model ----
    py::class_<TrainerState>(m, "TrainerState")
        .def_readonly("epoch", &TrainerState::epoch)
        .def_readonly("global_step", &TrainerState::global_step);

    py::class_<PyModel>(m, "Model")
        .def(py::init([](const std::string& config_json, const std::string& preset, std::uint64_t seed) {
                 const RunConfig cfg = resolve(preset, config_json);
                 auto pm = std::make_unique<PyModel>(cfg.model(), seed);
                 pm->train_config = cfg.train;
                 return pm;
             }),
             py::arg("config_json") = "", py::arg("preset") = "default", py::arg("seed") = 0)
        .def_static(
            "load", [](const std::string& path) { return std::make_unique<PyModel>(io::load_checkpoint(path)); },
            py::arg("path"))
        .def("reconstruct", &PyModel::reconstruct, py::arg("sinogram"),
             "Normalised LPET sinogram -> (image I_E, denoised sinogram S_E).")
        .def("parameter_names", &PyModel::parameter_names)
        .def("parameter", &PyModel::parameter, py::arg("name"))
        .def_property_readonly("parameter_count", &PyModel::parameter_count)
        .def_property_readonly("digest", &PyModel::digest)
        .def(
            "save", [](const PyModel& pm, const std::string& path) { pm.save(path, TrainerState{}); },
            py::arg("path"));

    m.def(
        "train",
        [](const std::string& config_json, const std::string& preset, const py::object& on_epoch) {
            const RunConfig cfg = resolve(preset, config_json);
            const auto ds = pet::make_dataset(cfg.dataset_options());
            const auto split = ds.samples.begin() + cfg.n_train;
            auto pm = std::make_unique<PyModel>(cfg.model(), cfg.model_seed);
            pm->train_config = cfg.train;
            Trainer trainer(pm->model(), cfg.train, to_training_pairs({ds.samples.begin(), split}),
                            to_training_pairs({split, ds.samples.end()}));
            py::list history;
            trainer.run([&](const EpochRecord& r) {
                history.append(epoch_dict(r));
                if (!on_epoch.is_none()) on_epoch(epoch_dict(r));
            });
            return py::make_tuple(std::move(pm), history);
        },
        py::arg("config_json") = "", py::arg("preset") = "default", py::arg("on_epoch") = py::none(),
        "Simulates the configured dataset and trains end to end; returns (model, history).");

    m.def("gradcheck", [] {
        py::list out;
        for (const auto& e : run_grad_suite()) {
            py::dict d;
            d["name"] = e.name;
            d["max_rel_error"] = e.result.max_rel_error;
            d["tolerance"] = e.tolerance;
            d["passed"] = e.passed;
            out.append(d);
        }
        return out;
    });

    m.def(
        "default_config", [](const std::string& preset) { return resolve(preset, "").to_json(); },
        py::arg("preset") = "default", "Resolved run configuration as JSON text.");
}
