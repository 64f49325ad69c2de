#include "trido/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace trido::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kTensorMagic[4] = {'T', 'D', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'T', 'D', 'C', 'K'};

// Portable little-endian byte packing.
template <typename U>
void put_uint(std::string& buf, U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

template <typename U>
U get_uint(const unsigned char* p) {
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(static_cast<U>(p[b]) << (8 * b));
    return v;
}

template <typename U>
U read_uint(std::istream& is, const char* what) {
    unsigned char b[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError(std::string("truncated ") + what);
    return get_uint<U>(b);
}

[[maybe_unused]] void put_real(std::string& buf, float v) { put_uint(buf, std::bit_cast<std::uint32_t>(v)); }
[[maybe_unused]] void put_real(std::string& buf, double v) { put_uint(buf, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
void put_payload(std::string& buf, const Tensor<T>& t) {
    if constexpr (std::endian::native == std::endian::little) {
        const auto* p = reinterpret_cast<const char*>(t.data());
        buf.append(p, p + t.size() * sizeof(T));
    } else {
        for (T v : t.span()) put_real(buf, v);
    }
}

template <typename T>
void get_payload(std::istream& is, Tensor<T>& t) {
    std::vector<unsigned char> raw(t.size() * sizeof(T));
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw FormatError("tensor payload shorter than its header declares");
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<T>(get_uint<U>(raw.data() + i * sizeof(T)));
}

void put_header(std::string& buf, DType dtype, const Shape& shape) {
    buf.append(kTensorMagic, 4);
    put_uint<std::uint16_t>(buf, kTensorVersion);
    buf.push_back(static_cast<char>(dtype));
    if (shape.size() > 255) throw FormatError("tensor rank exceeds 255");
    buf.push_back(static_cast<char>(shape.size()));
    for (auto e : shape) {
        if (e < 0 || e > static_cast<std::int64_t>(UINT32_MAX)) throw FormatError("tensor extent out of u32 range");
        put_uint<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
    }
}

void flush(std::ostream& os, const std::string& buf) {
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("write failed");
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return is;
}

std::string slurp(const fs::path& path) {
    auto is = open_in(path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Tensor<double> stack(const std::vector<const Tensor<double>*>& planes) {
    const Shape& s = planes.front()->shape();
    Shape out{static_cast<std::int64_t>(planes.size())};
    out.insert(out.end(), s.begin(), s.end());
    Tensor<double> t(out);
    std::size_t off = 0;
    for (const auto* p : planes) {
        if (p->shape() != s) throw ShapeError("dataset: inconsistent slice extents");
        std::copy(p->span().begin(), p->span().end(), t.data() + off);
        off += p->size();
    }
    return t;
}

Tensor<double> slice_of(const Tensor<double>& stacked, std::int64_t i) {
    Shape s(stacked.shape().begin() + 1, stacked.shape().end());
    Tensor<double> t(s);
    std::copy_n(stacked.data() + i * static_cast<std::int64_t>(t.size()), t.size(), t.data());
    return t;
}

json geometry_json(const pet::Geometry& g) {
    return {{"n_angles", g.n_angles}, {"n_bins", g.n_bins}, {"bin_spacing", g.bin_spacing},
            {"image_size", g.image_size}};
}

pet::Geometry geometry_from(const json& j) {
    pet::Geometry g;
    g.n_angles = j.at("n_angles").get<std::int64_t>();
    g.n_bins = j.at("n_bins").get<std::int64_t>();
    g.bin_spacing = j.at("bin_spacing").get<double>();
    g.image_size = j.at("image_size").get<std::int64_t>();
    return g;
}

json model_json(const ModelConfig& m) {
    return {{"se_former",
             {{"angles", m.se.angles}, {"bins", m.se.bins}, {"channels", m.se.channels}, {"width", m.se.width},
              {"blocks", m.se.blocks}, {"heads", m.se.heads}, {"ffn_ratio", m.se.ffn_ratio}}},
            {"ssr_former",
             {{"channels", m.ssr.channels}, {"heads", m.ssr.heads}, {"window", m.ssr.window},
              {"height", m.ssr.height}, {"width", m.ssr.width}, {"in_channels", m.ssr.in_channels},
              {"out_channels", m.ssr.out_channels}, {"ffn_ratio", m.ssr.ffn_ratio}}}};
}

ModelConfig model_from(const json& j) {
    ModelConfig m;
    const json& se = j.at("se_former");
    m.se.angles = se.at("angles");
    m.se.bins = se.at("bins");
    m.se.channels = se.at("channels");
    m.se.width = se.at("width");
    m.se.blocks = se.at("blocks");
    m.se.heads = se.at("heads");
    m.se.ffn_ratio = se.at("ffn_ratio");
    const json& ssr = j.at("ssr_former");
    m.ssr.channels = ssr.at("channels").get<std::array<std::int64_t, kSsrLevels>>();
    m.ssr.heads = ssr.at("heads").get<std::array<std::int64_t, kSsrLevels>>();
    m.ssr.window = ssr.at("window");
    m.ssr.height = ssr.at("height");
    m.ssr.width = ssr.at("width");
    m.ssr.in_channels = ssr.at("in_channels");
    m.ssr.out_channels = ssr.at("out_channels");
    m.ssr.ffn_ratio = ssr.at("ffn_ratio");
    return m;
}

json train_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},         {"warm_epochs", t.warm_epochs}, {"batch_size", t.batch_size},
            {"base_lr", t.base_lr},       {"lambda", t.lambda},           {"seed", t.seed},
            {"dose_factor", t.dose_factor}, {"checkpoint_every", t.checkpoint_every}, {"train_gfp", t.train_gfp}};
}

TrainConfig train_from(const json& j) {
    TrainConfig t;
    t.epochs = j.at("epochs");
    t.warm_epochs = j.at("warm_epochs");
    t.batch_size = j.at("batch_size");
    t.base_lr = j.at("base_lr");
    t.lambda = j.at("lambda");
    t.seed = j.at("seed");
    t.dose_factor = j.at("dose_factor");
    t.checkpoint_every = j.at("checkpoint_every");
    t.train_gfp = j.at("train_gfp");
    return t;
}

// Doubles travel as their bit patterns so resumed sums are exact.
std::string bits(double v) { return std::to_string(std::bit_cast<std::uint64_t>(v)); }
double unbits(const json& j) { return std::bit_cast<double>(std::stoull(j.get<std::string>())); }

}  // namespace

// ---- tensors ------------------------------------------------------------------

void write_tensor(std::ostream& os, const Tensor<float>& t) {
    std::string buf;
    put_header(buf, DType::f32, t.shape());
    put_payload(buf, t);
    flush(os, buf);
}

void write_tensor(std::ostream& os, const Tensor<double>& t) {
    std::string buf;
    put_header(buf, DType::f64, t.shape());
    put_payload(buf, t);
    flush(os, buf);
}

void write_tensor(std::ostream& os, const ComplexTensor<float>& t) {
    std::string buf;
    put_header(buf, DType::c64, t.shape());
    put_payload(buf, t.interleaved());
    flush(os, buf);
}

AnyTensor read_tensor(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated tensor header");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad tensor magic (expected TDT1)");
    const auto version = read_uint<std::uint16_t>(is, "tensor version");
    if (version != kTensorVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
    const auto code = read_uint<std::uint8_t>(is, "tensor dtype");
    const auto rank = read_uint<std::uint8_t>(is, "tensor rank");
    Shape shape(rank);
    for (auto& e : shape) e = read_uint<std::uint32_t>(is, "tensor extents");
    switch (code) {
        case static_cast<std::uint8_t>(DType::f32): {
            Tensor<float> t(shape);
            get_payload(is, t);
            return t;
        }
        case static_cast<std::uint8_t>(DType::f64): {
            Tensor<double> t(shape);
            get_payload(is, t);
            return t;
        }
        case static_cast<std::uint8_t>(DType::c64): {
            Shape inter = shape;
            inter.push_back(2);
            Tensor<float> t(inter);
            get_payload(is, t);
            return ComplexTensor<float>(std::move(t));
        }
        default: throw FormatError("unknown tensor dtype code " + std::to_string(code));
    }
}

DType dtype_of(const AnyTensor& t) { return static_cast<DType>(t.index()); }

void save_tensor(const fs::path& path, const AnyTensor& t) {
    auto os = open_out(path);
    std::visit([&](const auto& v) { write_tensor(os, v); }, t);
}

AnyTensor load_tensor(const fs::path& path) {
    auto is = open_in(path);
    try {
        AnyTensor t = read_tensor(is);
        if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after tensor payload");
        return t;
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Tensor<double> load_real(const fs::path& path) {
    AnyTensor t = load_tensor(path);
    if (auto* f = std::get_if<Tensor<float>>(&t)) return f->cast<double>();
    if (auto* d = std::get_if<Tensor<double>>(&t)) return std::move(*d);
    throw FormatError(path.string() + ": expected a real tensor, found complex");
}

// ---- datasets -----------------------------------------------------------------

std::string meta_json(const pet::DatasetMeta& m, std::size_t n_slices) {
    json j = {{"n_slices", n_slices},
              {"geometry", geometry_json(m.geometry)},
              {"dose_factor", m.dose_factor},
              {"seed", m.seed},
              {"noise", m.noise},
              {"peak_counts", m.peak_counts},
              {"osem", {{"n_subsets", m.osem.n_subsets}, {"n_iters", m.osem.n_iters}}},
              {"sino_max", m.sino_max},
              {"image_max", m.image_max}};
    return j.dump(2) + "\n";
}

pet::DatasetMeta parse_meta(const std::string& text) {
    try {
        const json j = json::parse(text);
        pet::DatasetMeta m;
        m.geometry = geometry_from(j.at("geometry"));
        m.dose_factor = j.at("dose_factor");
        m.seed = j.at("seed");
        m.noise = j.at("noise");
        m.peak_counts = j.at("peak_counts");
        m.osem.n_subsets = j.at("osem").at("n_subsets");
        m.osem.n_iters = j.at("osem").at("n_iters");
        m.sino_max = j.at("sino_max");
        m.image_max = j.at("image_max");
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("dataset metadata: ") + e.what());
    }
}

void write_split(const fs::path& dir, const std::vector<pet::Sample>& samples, const pet::DatasetMeta& meta) {
    if (samples.empty()) throw std::invalid_argument("write_split: no samples");
    fs::create_directories(dir);
    std::vector<const Tensor<double>*> low, standard, target;
    for (const auto& s : samples) {
        low.push_back(&s.low.data);
        standard.push_back(&s.standard.data);
        target.push_back(&s.target.data);
    }
    save_tensor(dir / "low.tdt", stack(low));
    save_tensor(dir / "standard.tdt", stack(standard));
    save_tensor(dir / "target.tdt", stack(target));
    auto os = open_out(dir / "metadata.json");
    os << meta_json(meta, samples.size());
}

pet::Dataset read_split(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset split " + dir.string() + " does not exist");
    pet::Dataset ds;
    ds.meta = parse_meta(slurp(dir / "metadata.json"));
    const auto low = load_real(dir / "low.tdt");
    const auto standard = load_real(dir / "standard.tdt");
    const auto target = load_real(dir / "target.tdt");
    const auto& g = ds.meta.geometry;
    const Shape sino{g.n_angles, g.n_bins}, img{g.image_size, g.image_size};
    if (low.rank() != 3 || Shape(low.shape().begin() + 1, low.shape().end()) != sino ||
        standard.shape() != low.shape() || target.rank() != 3 || target.dim(0) != low.dim(0) ||
        Shape(target.shape().begin() + 1, target.shape().end()) != img)
        throw FormatError(dir.string() + ": tensor extents disagree with metadata geometry");
    for (std::int64_t i = 0; i < low.dim(0); ++i)
        ds.samples.push_back({{slice_of(low, i), g}, {slice_of(standard, i), g}, {slice_of(target, i)}});
    return ds;
}

// ---- checkpoints -----------------------------------------------------------------

void save_checkpoint(const fs::path& path, const ModelConfig& model, const TrainConfig& train,
                     const TrainerState& state, const ParamStore<float>& params) {
    json header;
    header["model"] = model_json(model);
    header["train"] = train_json(train);
    header["digest"] = model.digest();
    header["state"] = {{"epoch", state.epoch},
                       {"batch_in_epoch", state.batch_in_epoch},
                       {"global_step", state.global_step},
                       {"sum_sino", bits(state.sum_sino)},
                       {"sum_img", bits(state.sum_img)},
                       {"sum_total", bits(state.sum_total)},
                       {"samples_in_epoch", state.samples_in_epoch}};
    json adam = json::object(), trainable = json::object();
    for (const auto& p : params.params()) {
        adam[p.name] = p.step;
        trainable[p.name] = p.trainable;
    }
    header["adam_steps"] = adam;
    header["trainable"] = trainable;

    std::string buf(kCheckpointMagic, 4);
    put_uint<std::uint16_t>(buf, kCheckpointVersion);
    const std::string h = header.dump();
    put_uint<std::uint32_t>(buf, static_cast<std::uint32_t>(h.size()));
    buf += h;
    std::ostringstream tensors;
    std::uint32_t count = 0;
    auto emit = [&](const std::string& name, const Tensor<float>& t) {
        std::string rec;
        put_uint<std::uint32_t>(rec, static_cast<std::uint32_t>(name.size()));
        rec += name;
        tensors << rec;
        write_tensor(tensors, t);
        ++count;
    };
    for (const auto& p : params.params()) {
        emit("param/" + p.name, p.var.value());
        emit("adam_m/" + p.name, p.first_moment.size() ? p.first_moment : Tensor<float>(p.var.shape()));
        emit("adam_v/" + p.name, p.second_moment.size() ? p.second_moment : Tensor<float>(p.var.shape()));
    }
    put_uint<std::uint32_t>(buf, count);
    buf += tensors.str();

    // Write then rename so an interrupted save never clobbers the last good file.
    const fs::path tmp = path.string() + ".tmp";
    {
        auto os = open_out(tmp);
        flush(os, buf);
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    auto is = open_in(path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = read_uint<std::uint16_t>(is, "checkpoint version");
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto hlen = read_uint<std::uint32_t>(is, "checkpoint header");
    std::string h(hlen, '\0');
    if (!is.read(h.data(), hlen)) throw FormatError(path.string() + ": truncated checkpoint header");

    Checkpoint ck;
    json header;
    try {
        header = json::parse(h);
        ck.model = model_from(header.at("model"));
        ck.train = train_from(header.at("train"));
        ck.digest = header.at("digest").get<std::string>();
        const json& s = header.at("state");
        ck.state.epoch = s.at("epoch");
        ck.state.batch_in_epoch = s.at("batch_in_epoch");
        ck.state.global_step = s.at("global_step");
        ck.state.sum_sino = unbits(s.at("sum_sino"));
        ck.state.sum_img = unbits(s.at("sum_img"));
        ck.state.sum_total = unbits(s.at("sum_total"));
        ck.state.samples_in_epoch = s.at("samples_in_epoch");
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": checkpoint header: " + e.what());
    }
    if (ck.digest != ck.model.digest())
        throw FormatError(path.string() + ": config digest " + ck.digest + " does not match stored configuration (" +
                          ck.model.digest() + ")");

    const auto n = read_uint<std::uint32_t>(is, "checkpoint tensor count");
    std::vector<std::pair<std::string, Tensor<float>>> moments;
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto len = read_uint<std::uint32_t>(is, "tensor name");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError(path.string() + ": truncated tensor name");
        AnyTensor t = read_tensor(is);
        auto* f = std::get_if<Tensor<float>>(&t);
        if (!f) throw FormatError(path.string() + ": tensor " + name + " is not f32");
        if (name.rfind("param/", 0) == 0) {
            const std::string p = name.substr(6);
            ck.params.add(p, std::move(*f));
            auto& prm = ck.params.param(p);
            prm.step = header.at("adam_steps").at(p).get<std::int64_t>();
            prm.trainable = header.at("trainable").at(p).get<bool>();
            prm.var.set_requires_grad(prm.trainable);
        } else {
            moments.emplace_back(std::move(name), std::move(*f));
        }
    }
    for (auto& [name, t] : moments) {
        const bool first = name.rfind("adam_m/", 0) == 0;
        if (!first && name.rfind("adam_v/", 0) != 0) throw FormatError(path.string() + ": unknown tensor " + name);
        auto& prm = ck.params.param(name.substr(7));
        if (t.shape() != prm.var.shape()) throw FormatError(path.string() + ": moment shape mismatch for " + name);
        (first ? prm.first_moment : prm.second_moment) = std::move(t);
    }
    return ck;
}

// ---- images -------------------------------------------------------------------------

void write_pgm(const fs::path& path, const Tensor<double>& image, double peak) {
    std::int64_t h = 0, w = 0;
    if (image.rank() == 2) {
        h = image.dim(0);
        w = image.dim(1);
    } else if (image.rank() == 3 && image.dim(0) == 1) {
        h = image.dim(1);
        w = image.dim(2);
    } else {
        throw ShapeError("write_pgm: expected [H,W] or [1,H,W], got " + shape_str(image.shape()));
    }
    if (peak <= 0) peak = image.size() ? *std::max_element(image.span().begin(), image.span().end()) : 0.0;
    std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (double v : image.span()) {
        const double s = peak > 0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
        buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
    }
    auto os = open_out(path);
    flush(os, buf);
}

}  // namespace trido::io
