#include "trido/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "trido/ops.hpp"

namespace trido::eval {

namespace {

void require_same(const Tensor<double>& x, const Tensor<double>& ref, const char* what) {
    if (x.shape() != ref.shape())
        throw ShapeError(std::string(what) + ": shape " + shape_str(x.shape()) + " vs reference " +
                         shape_str(ref.shape()));
    if (ref.size() == 0) throw ShapeError(std::string(what) + ": empty image");
}

double energy(const Tensor<double>& t) {
    double s = 0;
    for (double v : t.span()) s += v * v;
    return s;
}

// Image extents from [H,W] or [1,H,W].
std::pair<std::int64_t, std::int64_t> plane_dims(const Tensor<double>& t, const char* what) {
    const auto& s = t.shape();
    if (s.size() == 2) return {s[0], s[1]};
    if (s.size() == 3 && s[0] == 1) return {s[1], s[2]};
    throw ShapeError(std::string(what) + ": expected [H,W] or [1,H,W], got " + shape_str(s));
}

std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double total = 0;
    for (int i = 0; i < size; ++i) {
        k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        total += k[i];
    }
    for (double& v : k) v /= total;
    return k;
}

// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k) {
    const auto n = static_cast<std::int64_t>(k.size());
    const std::int64_t oh = h - n + 1, ow = w - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * ow));
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
            double s = 0;
            for (std::int64_t t = 0; t < n; ++t) s += k[t] * img[i * w + j + t];
            tmp[i * ow + j] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
            double s = 0;
            for (std::int64_t t = 0; t < n; ++t) s += k[t] * tmp[(i + t) * ow + j];
            out[i * ow + j] = s;
        }
    return out;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

const char* kind_name(RowKind k) {
    switch (k) {
        case RowKind::slice: return "slice";
        case RowKind::mean: return "mean";
        case RowKind::stddev: return "std";
    }
    return "?";
}

// Shared formatting so the table and the records carry the same digits.
std::string psnr_text(const Psnr& p) { return p.identical ? "identical" : fmt("%.4f", p.db); }
std::string ssim_text(double v) { return fmt("%.6f", v); }
std::string nmse_text(double v) { return fmt("%.6e", v); }

}  // namespace

std::string Psnr::str() const { return identical ? "identical" : fmt("%.4f dB", db); }

double mse(const Tensor<double>& x, const Tensor<double>& ref) {
    require_same(x, ref, "mse");
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - ref[i];
        s += d * d;
    }
    return s / static_cast<double>(x.size());
}

Psnr psnr(const Tensor<double>& x, const Tensor<double>& ref) {
    require_same(x, ref, "psnr");
    const double peak = *std::max_element(ref.span().begin(), ref.span().end());
    if (peak <= 0) throw std::invalid_argument("psnr: reference peak must be positive");
    const double e = mse(x, ref);
    if (e == 0) return {true, 0.0};
    return {false, 10.0 * std::log10(peak * peak / e)};
}

double nmse(const Tensor<double>& x, const Tensor<double>& ref) {
    require_same(x, ref, "nmse");
    const double den = energy(ref);
    if (den == 0) throw std::invalid_argument("nmse: reference has zero norm");
    double num = 0;
    for (std::size_t i = 0; i < x.size(); ++i) num += (x[i] - ref[i]) * (x[i] - ref[i]);
    return num / den;
}

double ssim(const Tensor<double>& x, const Tensor<double>& ref) {
    require_same(x, ref, "ssim");
    const auto [h, w] = plane_dims(ref, "ssim");
    constexpr int kWin = 11;
    if (h < kWin || w < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");
    const auto [lo, hi] = std::minmax_element(ref.span().begin(), ref.span().end());
    const double range = *hi - *lo;
    if (range <= 0) throw std::invalid_argument("ssim: constant reference");
    const double c1 = (0.01 * range) * (0.01 * range);
    const double c2 = (0.03 * range) * (0.03 * range);

    const auto k = gaussian_kernel(kWin, 1.5);
    std::vector<double> a(x.span().begin(), x.span().end()), b(ref.span().begin(), ref.span().end());
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, k), mu_b = filter_valid(b, h, w, k);
    const auto e_aa = filter_valid(aa, h, w, k), e_bb = filter_valid(bb, h, w, k), e_ab = filter_valid(ab, h, w, k);
    double total = 0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
        total += num / den;
    }
    return total / static_cast<double>(mu_a.size());
}

RadialSpectrum radial_spectrum(const Tensor<double>& image) {
    const auto [h, w] = plane_dims(image, "radial_spectrum");
    (void)w;
    return radial_spectrum(image, h / 2 + 1);
}

RadialSpectrum radial_spectrum(const Tensor<double>& image, std::int64_t n_rings) {
    const auto [h, w] = plane_dims(image, "radial_spectrum");
    if (h != w) throw ShapeError("radial_spectrum: image must be square, got " + shape_str(image.shape()));
    if (n_rings < 1 || n_rings > h / 2 + 1)
        throw std::invalid_argument("radial_spectrum: n_rings " + std::to_string(n_rings) + " exceeds Nyquist radius " +
                                    std::to_string(h / 2));
    const auto spec = fft::rdft2(image.reshaped({1, h, w}));
    const std::int64_t half = w / 2 + 1;
    RadialSpectrum out;
    out.mean_power.assign(static_cast<std::size_t>(n_rings), 0.0);
    out.total_power.assign(static_cast<std::size_t>(n_rings), 0.0);
    out.counts.assign(static_cast<std::size_t>(n_rings), 0.0);
    for (std::int64_t ky = 0; ky < h; ++ky) {
        const std::int64_t fy = ky <= h / 2 ? ky : ky - h;
        for (std::int64_t kx = 0; kx < half; ++kx) {
            const auto i = static_cast<std::size_t>(ky * half + kx);
            const double p = spec.re(i) * spec.re(i) + spec.im(i) * spec.im(i);
            const double wgt = fft::half_spectrum_weight(kx, w);
            auto ring = static_cast<std::int64_t>(std::lround(std::hypot(double(fy), double(kx))));
            ring = std::min(ring, n_rings - 1);
            out.total_power[ring] += wgt * p;
            out.counts[ring] += wgt;
        }
    }
    for (std::size_t r = 0; r < out.counts.size(); ++r)
        out.mean_power[r] = out.counts[r] > 0 ? out.total_power[r] / out.counts[r] : 0.0;
    return out;
}

// ---- reports ----------------------------------------------------------------

std::vector<std::string> EvalReport::methods() const {
    std::vector<std::string> m;
    for (const auto& r : rows)
        if (m.empty() || m.back() != r.method) m.push_back(r.method);
    return m;
}

const MetricRow& EvalReport::aggregate(const std::string& method, RowKind kind) const {
    for (const auto& r : rows)
        if (r.method == method && r.kind == kind) return r;
    throw std::out_of_range("report has no " + std::string(kind_name(kind)) + " row for " + method);
}

std::string EvalReport::table() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %-6s %14s %10s %14s\n", "method", "slice", "psnr_db", "ssim", "nmse");
    os << line << std::string(62, '-') << '\n';
    for (const auto& r : rows) {
        const std::string slice = r.kind == RowKind::slice ? std::to_string(r.slice) : kind_name(r.kind);
        std::snprintf(line, sizeof line, "%-14s %-6s %14s %10s %14s\n", r.method.c_str(), slice.c_str(),
                      psnr_text(r.psnr).c_str(), ssim_text(r.ssim).c_str(), nmse_text(r.nmse).c_str());
        os << line;
    }
    return os.str();
}

std::string EvalReport::jsonl() const {
    std::ostringstream os;
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["method"] = r.method;
        j["kind"] = kind_name(r.kind);
        if (r.kind == RowKind::slice) j["slice"] = r.slice;
        if (r.psnr.identical)
            j["psnr_db"] = "identical";
        else
            j["psnr_db"] = std::stod(psnr_text(r.psnr));
        j["ssim"] = std::stod(ssim_text(r.ssim));
        j["nmse"] = std::stod(nmse_text(r.nmse));
        os << j.dump() << '\n';
    }
    return os.str();
}

EvalReport evaluate(const std::vector<Method>& models, const pet::Dataset& data) {
    if (data.samples.empty()) throw std::invalid_argument("evaluate: dataset is empty");
    std::vector<Method> methods{
        {kOsemLow, [&](const pet::Sample& s) { return pet::osem_normalized(s.low.data, data.meta).data; }},
        {kOsemStandard, [&](const pet::Sample& s) { return pet::osem_normalized(s.standard.data, data.meta).data; }}};
    for (const auto& m : models) methods.push_back(m);
    std::sort(methods.begin(), methods.end(), [](const Method& a, const Method& b) { return a.label < b.label; });
    for (std::size_t i = 1; i < methods.size(); ++i)
        if (methods[i].label == methods[i - 1].label)
            throw std::invalid_argument("evaluate: duplicate method label " + methods[i].label);

    EvalReport report;
    for (const auto& m : methods) {
        std::vector<MetricRow> slices;
        for (std::size_t s = 0; s < data.samples.size(); ++s) {
            const auto& sample = data.samples[s];
            const Tensor<double> ref = sample.target.data;
            Tensor<double> out = m.reconstruct(sample);
            if (out.size() != ref.size())
                throw ShapeError("evaluate: method " + m.label + " produced " + shape_str(out.shape()) +
                                 ", expected " + shape_str(ref.shape()));
            out = out.reshaped(ref.shape());
            slices.push_back({m.label, RowKind::slice, static_cast<std::int64_t>(s), psnr(out, ref), ssim(out, ref),
                              nmse(out, ref)});
        }
        const double n = static_cast<double>(slices.size());
        MetricRow mean{m.label, RowKind::mean, -1, {}, 0, 0};
        bool any_identical = false;
        double psnr_sum = 0;
        for (const auto& r : slices) {
            any_identical = any_identical || r.psnr.identical;
            psnr_sum += r.psnr.value();
            mean.ssim += r.ssim / n;
            mean.nmse += r.nmse / n;
        }
        mean.psnr = any_identical ? Psnr{true, 0.0} : Psnr{false, psnr_sum / n};
        // Sample standard deviation; zero for a single slice.
        MetricRow sd{m.label, RowKind::stddev, -1, {}, 0, 0};
        if (slices.size() > 1) {
            double vp = 0, vs = 0, vn = 0;
            for (const auto& r : slices) {
                if (!any_identical) vp += (r.psnr.db - mean.psnr.db) * (r.psnr.db - mean.psnr.db);
                vs += (r.ssim - mean.ssim) * (r.ssim - mean.ssim);
                vn += (r.nmse - mean.nmse) * (r.nmse - mean.nmse);
            }
            sd.psnr = {false, std::sqrt(vp / (n - 1))};
            sd.ssim = std::sqrt(vs / (n - 1));
            sd.nmse = std::sqrt(vn / (n - 1));
        }
        for (auto& r : slices) report.rows.push_back(std::move(r));
        report.rows.push_back(mean);
        report.rows.push_back(sd);
    }
    return report;
}

}  // namespace trido::eval
