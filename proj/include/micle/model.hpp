#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "micle/ops.hpp"
#include "micle/rng.hpp"
#include "micle/tensor.hpp"

namespace micle {

// Desk-scale convolutional encoder: per stage, 3x3 convs (stride 1, pad 1)
// with ReLU, then 2x2 max pooling; global average pooling at the end.
// Normalization-free; optional residual joins scaled by 1/sqrt(2).
struct EncoderConfig {
    std::vector<std::size_t> widths = {32, 64, 128};
    std::vector<std::size_t> blocks_per_stage = {2, 2, 2};
    std::size_t input_channels = 3;
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    double width_multiplier = 1.0;
    bool residual = false;
    std::size_t projection_hidden = 0;  // 0 -> feature_dim
    std::size_t projection_dim = 128;

    std::vector<std::size_t> resolved_widths() const;
    std::size_t feature_dim() const { return resolved_widths().back(); }

    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
};

// Named parameter leaves in a fixed creation order.
template <typename T>
struct Params {
    std::vector<std::string> order;
    std::map<std::string, Tensor<T>> tensors;

    Tensor<T>& at(const std::string& name) {
        auto it = tensors.find(name);
        check_dim(it != tensors.end(), "missing parameter: " + name);
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = tensors.find(name);
        check_dim(it != tensors.end(), "missing parameter: " + name);
        return it->second;
    }
    void add(const std::string& name, Tensor<T> t) {
        order.push_back(name);
        tensors.emplace(name, std::move(t));
    }
    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& [k, v] : tensors) n += v.size();
        return n;
    }
    void zero_grad() {
        for (auto& [k, v] : tensors) v.zero_grad();
    }
};

enum class StageTag { simclr, micle, finetune };
std::string stage_name(StageTag s);
StageTag stage_from_name(const std::string& s);

template <typename T>
struct Model {
    EncoderConfig config;
    Params<T> params;
    bool has_projection = false;
    bool has_classifier = false;
    std::size_t num_classes = 0;

    // N x C x H x W -> N x feature_dim
    Tensor<T> encode(const Tensor<T>& x) const;
    // N x feature_dim -> N x projection_dim (not normalized; the loss does that)
    Tensor<T> project(const Tensor<T>& h) const;
    // N x feature_dim -> N x num_classes logits
    Tensor<T> classify(const Tensor<T>& h) const;
};

// He-uniform seeded initialization; parameters created in a fixed order.
Model<float> build_encoder(const EncoderConfig& config, std::uint64_t init_seed);

// Drops the projection head and attaches a fresh affine classifier on h.
Model<float> attach_classifier(const Model<float>& encoder, std::size_t num_classes,
                               std::uint64_t init_seed);

Model<double> to_double(const Model<float>& m);

// ---- templated forward ----

namespace detail_model {

template <typename T>
Tensor<T> encoder_forward(const EncoderConfig& cfg, const Params<T>& params, const Tensor<T>& x) {
    check_dim(x.rank() == 4, "encoder input must be NxCxHxW, got " + shape_str(x.shape()));
    check_dim(x.dim(1) == cfg.input_channels,
              "encoder expects " + std::to_string(cfg.input_channels) + " channels, got " +
                  std::to_string(x.dim(1)));
    const auto widths = cfg.resolved_widths();
    Tensor<T> cur = x;
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    for (std::size_t s = 0; s < widths.size(); ++s) {
        for (std::size_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            const std::string name =
                "encoder.stage" + std::to_string(s) + ".conv" + std::to_string(b) + ".w";
            const bool same_width = cur.dim(1) == widths[s];
            Tensor<T> y = relu(conv2d(cur, params.at(name), 1, 1));
            if (cfg.residual && same_width) {
                y = scale(add(cur, y), inv_sqrt2);
            }
            cur = y;
        }
        check_dim(cur.dim(2) >= 2 && cur.dim(3) >= 2,
                  "encoder config produces non-positive spatial extent at stage " +
                      std::to_string(s));
        cur = maxpool2d(cur, 2, 2);
    }
    return global_avg_pool(cur);
}

}  // namespace detail_model

template <typename T>
Tensor<T> Model<T>::encode(const Tensor<T>& x) const {
    return detail_model::encoder_forward(config, params, x);
}

template <typename T>
Tensor<T> Model<T>::project(const Tensor<T>& h) const {
    check_dim(has_projection, "model has no projection head");
    Tensor<T> z = linear(h, params.at("proj.w1"), params.at("proj.b1"));
    z = relu(z);
    return linear(z, params.at("proj.w2"), params.at("proj.b2"));
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& h) const {
    check_dim(has_classifier, "model has no classifier head");
    return linear(h, params.at("classifier.w"), params.at("classifier.b"));
}

// ---- checkpoint container (MCK1) ----
// magic "MCK1", u32 version, u64 json length + bytes, u32 param count,
// entries of {u32 name length, name, u64 blob length, RT1 bytes}, u32
// optimizer entry count in the same format, u64 RNG blob length + bytes.

struct NamedBlob {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::uint32_t version = 1;
    StageTag stage = StageTag::simclr;
    nlohmann::json config;  // encoder config + head/task snapshot
    std::vector<NamedBlob> params;
    std::vector<NamedBlob> opt_state;
    std::vector<std::uint8_t> rng_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_model(const Model<float>& model, StageTag stage);
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace micle
