#include "micle/model.hpp"

#include <cmath>
#include <cstring>

#include "micle/io.hpp"

namespace micle {

using nlohmann::json;

std::vector<std::size_t> EncoderConfig::resolved_widths() const {
    check_dim(!widths.empty() && widths.size() == blocks_per_stage.size(),
              "encoder config: widths and blocks_per_stage must be non-empty and equal length");
    std::vector<std::size_t> out;
    out.reserve(widths.size());
    for (std::size_t w : widths) {
        auto scaled = static_cast<std::size_t>(
            std::lround(width_multiplier * static_cast<double>(w)));
        check_dim(scaled >= 1, "encoder config: width multiplier collapses a stage to zero");
        out.push_back(scaled);
    }
    return out;
}

json EncoderConfig::to_json() const {
    json j;
    j["widths"] = widths;
    j["blocks_per_stage"] = blocks_per_stage;
    j["input_channels"] = input_channels;
    j["input_height"] = input_height;
    j["input_width"] = input_width;
    j["width_multiplier"] = width_multiplier;
    j["residual"] = residual;
    j["projection_hidden"] = projection_hidden;
    j["projection_dim"] = projection_dim;
    return j;
}

EncoderConfig EncoderConfig::from_json(const json& j) {
    EncoderConfig c;
    c.widths = j.at("widths").get<std::vector<std::size_t>>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<std::size_t>>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.input_height = j.at("input_height").get<std::size_t>();
    c.input_width = j.at("input_width").get<std::size_t>();
    c.width_multiplier = j.at("width_multiplier").get<double>();
    c.residual = j.at("residual").get<bool>();
    c.projection_hidden = j.at("projection_hidden").get<std::size_t>();
    c.projection_dim = j.at("projection_dim").get<std::size_t>();
    return c;
}

std::string stage_name(StageTag s) {
    switch (s) {
        case StageTag::simclr: return "simclr";
        case StageTag::micle: return "micle";
        case StageTag::finetune: return "finetune";
    }
    return "simclr";
}

StageTag stage_from_name(const std::string& s) {
    if (s == "simclr") return StageTag::simclr;
    if (s == "micle") return StageTag::micle;
    if (s == "finetune") return StageTag::finetune;
    throw ValidationError("unknown stage tag: " + s);
}

namespace {

// He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in).
TensorF he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<float> data(numel(shape));
    for (auto& v : data) v = static_cast<float>(rng.uniform(-limit, limit));
    return TensorF::from_data(shape, std::move(data), true);
}

void init_projection(Model<float>& m, Rng& rng) {
    const std::size_t d = m.config.feature_dim();
    const std::size_t hidden =
        m.config.projection_hidden == 0 ? d : m.config.projection_hidden;
    const std::size_t out = m.config.projection_dim;
    m.params.add("proj.w1", he_uniform({d, hidden}, d, rng));
    m.params.add("proj.b1", TensorF::zeros({hidden}, true));
    m.params.add("proj.w2", he_uniform({hidden, out}, hidden, rng));
    m.params.add("proj.b2", TensorF::zeros({out}, true));
    m.has_projection = true;
}

}  // namespace

Model<float> build_encoder(const EncoderConfig& config, std::uint64_t init_seed) {
    // Probe the spatial contract early so bad configs fail at build time.
    std::size_t h = config.input_height, w = config.input_width;
    for (std::size_t s = 0; s < config.widths.size(); ++s) {
        check_dim(h >= 2 && w >= 2,
                  "encoder config produces non-positive spatial extent at stage " +
                      std::to_string(s));
        h /= 2;
        w /= 2;
    }

    Model<float> m;
    m.config = config;
    Rng rng(hash_combine(init_seed, hash_str("encoder_init")));
    const auto widths = config.resolved_widths();
    std::size_t in_ch = config.input_channels;
    for (std::size_t s = 0; s < widths.size(); ++s) {
        for (std::size_t b = 0; b < config.blocks_per_stage[s]; ++b) {
            const Shape shape = {widths[s], in_ch, 3, 3};
            const std::size_t fan_in = in_ch * 9;
            m.params.add("encoder.stage" + std::to_string(s) + ".conv" + std::to_string(b) + ".w",
                         he_uniform(shape, fan_in, rng));
            in_ch = widths[s];
        }
    }
    init_projection(m, rng);
    return m;
}

Model<float> attach_classifier(const Model<float>& encoder, std::size_t num_classes,
                               std::uint64_t init_seed) {
    if (num_classes < 2) {
        throw ValidationError("classifier requires at least 2 classes, got " +
                              std::to_string(num_classes));
    }
    Model<float> m;
    m.config = encoder.config;
    // Keep encoder parameters (shared values, fresh leaf tensors), drop proj.*.
    for (const auto& name : encoder.params.order) {
        if (name.rfind("proj.", 0) == 0) continue;
        const auto& t = encoder.params.at(name);
        m.params.add(name, TensorF::from_data(t.shape(), t.value(), true));
    }
    Rng rng(hash_combine(init_seed, hash_str("classifier_init")));
    const std::size_t d = m.config.feature_dim();
    m.params.add("classifier.w", he_uniform({d, num_classes}, d, rng));
    m.params.add("classifier.b", TensorF::zeros({num_classes}, true));
    m.has_classifier = true;
    m.num_classes = num_classes;
    return m;
}

Model<double> to_double(const Model<float>& m) {
    Model<double> out;
    out.config = m.config;
    out.has_projection = m.has_projection;
    out.has_classifier = m.has_classifier;
    out.num_classes = m.num_classes;
    for (const auto& name : m.params.order) {
        const auto& t = m.params.at(name);
        std::vector<double> data(t.value().begin(), t.value().end());
        out.params.add(name, TensorD::from_data(t.shape(), std::move(data), true));
    }
    return out;
}

namespace {

constexpr char kCkptMagic[4] = {'M', 'C', 'K', '1'};

template <typename T>
void put_raw(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

void put_blob_table(std::vector<std::uint8_t>& out, const std::vector<NamedBlob>& blobs) {
    put_raw(out, static_cast<std::uint32_t>(blobs.size()));
    for (const auto& b : blobs) {
        put_raw(out, static_cast<std::uint32_t>(b.name.size()));
        out.insert(out.end(), b.name.begin(), b.name.end());
        const auto rt1 = rt1_encode(b.shape, b.data);
        put_raw(out, static_cast<std::uint64_t>(rt1.size()));
        out.insert(out.end(), rt1.begin(), rt1.end());
    }
}

struct Reader {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t off = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (off + n > len) throw ValidationError("truncated checkpoint: " + path);
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p + off, sizeof(T));
        off += sizeof(T);
        return v;
    }
    std::string get_str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p + off), n);
        off += n;
        return s;
    }
};

std::vector<NamedBlob> get_blob_table(Reader& r) {
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedBlob> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedBlob b;
        const auto name_len = r.get<std::uint32_t>();
        b.name = r.get_str(name_len);
        const auto blob_len = r.get<std::uint64_t>();
        r.need(blob_len);
        Rt1Blob rt1 = rt1_decode(r.p + r.off, blob_len);
        r.off += blob_len;
        if (rt1.dtype != Dtype::f32) {
            throw ValidationError("checkpoint blob '" + b.name + "' is not float32");
        }
        b.shape = std::move(rt1.shape);
        b.data = std::move(rt1.f32);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCkptMagic, kCkptMagic + 4);
    put_raw(out, ckpt.version);
    json meta = ckpt.config;
    meta["stage"] = stage_name(ckpt.stage);
    const std::string cfg = meta.dump();
    put_raw(out, static_cast<std::uint64_t>(cfg.size()));
    out.insert(out.end(), cfg.begin(), cfg.end());
    put_blob_table(out, ckpt.params);
    put_blob_table(out, ckpt.opt_state);
    put_raw(out, static_cast<std::uint64_t>(ckpt.rng_state.size()));
    out.insert(out.end(), ckpt.rng_state.begin(), ckpt.rng_state.end());
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = read_file(path);
    Reader r{bytes.data(), bytes.size(), 0, path};
    r.need(4);
    if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0) {
        throw ValidationError("not a checkpoint file (bad magic): " + path);
    }
    r.off = 4;
    Checkpoint ckpt;
    ckpt.version = r.get<std::uint32_t>();
    if (ckpt.version != 1) {
        throw ValidationError("unsupported checkpoint version " + std::to_string(ckpt.version) +
                              " in " + path);
    }
    const auto cfg_len = r.get<std::uint64_t>();
    const std::string cfg = r.get_str(cfg_len);
    try {
        ckpt.config = json::parse(cfg);
    } catch (const json::exception& e) {
        throw ValidationError("checkpoint config snapshot is not valid JSON: " + path);
    }
    ckpt.stage = stage_from_name(ckpt.config.at("stage").get<std::string>());
    ckpt.config.erase("stage");
    ckpt.params = get_blob_table(r);
    ckpt.opt_state = get_blob_table(r);
    const auto rng_len = r.get<std::uint64_t>();
    r.need(rng_len);
    ckpt.rng_state.assign(bytes.begin() + r.off, bytes.begin() + r.off + rng_len);
    r.off += rng_len;
    if (r.off != bytes.size()) {
        throw ValidationError("trailing bytes in checkpoint: " + path);
    }
    return ckpt;
}

Checkpoint checkpoint_from_model(const Model<float>& model, StageTag stage) {
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.config["encoder"] = model.config.to_json();
    ckpt.config["has_projection"] = model.has_projection;
    ckpt.config["has_classifier"] = model.has_classifier;
    ckpt.config["num_classes"] = model.num_classes;
    for (const auto& name : model.params.order) {
        const auto& t = model.params.at(name);
        ckpt.params.push_back({name, t.shape(), t.value()});
    }
    return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
    Model<float> m;
    m.config = EncoderConfig::from_json(ckpt.config.at("encoder"));
    m.has_projection = ckpt.config.at("has_projection").get<bool>();
    m.has_classifier = ckpt.config.at("has_classifier").get<bool>();
    m.num_classes = ckpt.config.at("num_classes").get<std::size_t>();
    // Rebuild from config to know the expected parameter names and shapes.
    Model<float> expect = build_encoder(m.config, 0);
    std::vector<std::string> want = expect.params.order;
    if (!m.has_projection) {
        std::erase_if(want, [](const std::string& n) { return n.rfind("proj.", 0) == 0; });
    }
    if (m.has_classifier) {
        want.push_back("classifier.w");
        want.push_back("classifier.b");
    }
    std::map<std::string, const NamedBlob*> by_name;
    for (const auto& b : ckpt.params) by_name[b.name] = &b;
    for (const auto& name : want) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw ValidationError("checkpoint missing parameter '" + name + "'");
        }
        Shape expect_shape;
        if (name == "classifier.w") {
            expect_shape = {m.config.feature_dim(), m.num_classes};
        } else if (name == "classifier.b") {
            expect_shape = {m.num_classes};
        } else {
            expect_shape = expect.params.at(name).shape();
        }
        if (it->second->shape != expect_shape) {
            throw ValidationError("checkpoint parameter '" + name + "' has shape " +
                                  shape_str(it->second->shape) + ", config expects " +
                                  shape_str(expect_shape));
        }
        m.params.add(name, TensorF::from_data(it->second->shape, it->second->data, true));
    }
    return m;
}

}  // namespace micle
