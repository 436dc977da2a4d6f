#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "micle/gradcheck.hpp"
#include "micle/io.hpp"
#include "micle/model.hpp"

using namespace micle;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_config() {
    EncoderConfig c;
    c.widths = {4, 6};
    c.blocks_per_stage = {1, 2};
    c.input_channels = 3;
    c.input_height = 8;
    c.input_width = 8;
    c.projection_dim = 5;
    c.projection_hidden = 0;
    return c;
}

TensorF random_batch(const EncoderConfig& c, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> data(n * c.input_channels * c.input_height * c.input_width);
    for (auto& v : data) v = static_cast<float>(rng.u01());
    return TensorF::from_data({n, c.input_channels, c.input_height, c.input_width},
                              std::move(data));
}

}  // namespace

TEST_CASE("same init seed gives identical parameters; different seeds differ") {
    const auto cfg = small_config();
    auto a = build_encoder(cfg, 7);
    auto b = build_encoder(cfg, 7);
    auto c = build_encoder(cfg, 8);
    REQUIRE(a.params.order == b.params.order);
    bool all_equal = true, any_diff = false;
    for (const auto& name : a.params.order) {
        all_equal = all_equal && a.params.at(name).value() == b.params.at(name).value();
        any_diff = any_diff || a.params.at(name).value() != c.params.at(name).value();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("encoder output shape matches feature_dim; zero input stays finite") {
    EncoderConfig cfg;  // default desk-scale config, 3x32x32 -> 128
    auto m = build_encoder(cfg, 1);
    auto h = m.encode(random_batch(cfg, 2, 3));
    CHECK(h.shape() == Shape{2, 128});
    CHECK(cfg.feature_dim() == 128);

    auto zero = TensorF::zeros({1, 3, 32, 32});
    auto hz = m.encode(zero);
    for (float v : hz.value()) CHECK(std::isfinite(v));
}

TEST_CASE("parameter count is a pure function of the config") {
    // default config: convs 10080 + 55296 + 221184, projection 33024
    EncoderConfig cfg;
    auto m = build_encoder(cfg, 0);
    CHECK(m.params.count_scalars() == 286560 + 33024);

    auto small = build_encoder(small_config(), 0);
    // stage0: 4*3*9=108; stage1: 6*4*9=216 + 6*6*9=324; proj: 6*6+6+6*5+5=77
    CHECK(small.params.count_scalars() == 108 + 216 + 324 + 77);
}

TEST_CASE("width multiplier scales the parameter count") {
    EncoderConfig cfg = small_config();
    cfg.width_multiplier = 2.0;
    CHECK(cfg.feature_dim() == 12);
    auto m = build_encoder(cfg, 0);
    // stage0: 8*3*9=216; stage1: 12*8*9=864 + 12*12*9=1296; proj: 12*12+12+12*5+5=221
    CHECK(m.params.count_scalars() == 216 + 864 + 1296 + 221);
}

TEST_CASE("projection head: shape, zero weights, gradient flow") {
    const auto cfg = small_config();
    auto m = build_encoder(cfg, 5);
    auto h = TensorF::from_data({3, 6}, std::vector<float>(18, 0.5f));
    auto z = m.project(h);
    CHECK(z.shape() == Shape{3, 5});

    for (const auto& name : {"proj.w1", "proj.w2"}) {
        auto& t = m.params.at(name);
        std::fill(t.value().begin(), t.value().end(), 0.0f);
    }
    for (const auto& name : {"proj.b1", "proj.b2"}) {
        auto& t = m.params.at(name);
        std::fill(t.value().begin(), t.value().end(), 0.0f);
    }
    auto z0 = m.project(h);
    for (float v : z0.value()) CHECK(v == 0.0f);

    // gradient flows to both layers
    Model<double> md = to_double(build_encoder(cfg, 5));
    Rng rng(2);
    std::vector<double> hv(2 * 6);
    for (auto& v : hv) v = rng.uniform(-1, 1);
    auto hd = TensorD::from_data({2, 6}, hv);
    auto rep = finite_difference_check(
        [&](const std::vector<TensorD>& l) {
            auto z1 = linear(hd, l[0], l[1]);
            auto z2 = linear(relu(z1), l[2], l[3]);
            return sum(mul(z2, z2));
        },
        {md.params.at("proj.w1"), md.params.at("proj.b1"), md.params.at("proj.w2"),
         md.params.at("proj.b2")});
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("attach_classifier drops the projection head and keeps encoder outputs") {
    const auto cfg = small_config();
    auto pre = build_encoder(cfg, 11);
    auto x = random_batch(cfg, 2, 21);
    const auto h_before = pre.encode(x).value();

    auto clf = attach_classifier(pre, 4, 12);
    CHECK(clf.has_classifier);
    CHECK_FALSE(clf.params.tensors.count("proj.w1"));
    CHECK(clf.num_classes == 4);
    const auto h_after = clf.encode(x).value();
    CHECK(h_before == h_after);

    auto logits = clf.classify(clf.encode(x));
    CHECK(logits.shape() == Shape{2, 4});

    CHECK_THROWS_AS(attach_classifier(pre, 1, 0), ValidationError);
}

TEST_CASE("27-class logits and softmax normalization") {
    const auto cfg = small_config();
    auto clf = attach_classifier(build_encoder(cfg, 1), 27, 2);
    auto x = random_batch(cfg, 3, 9);
    auto logits = clf.classify(clf.encode(x));
    CHECK(logits.shape() == Shape{3, 27});
    const auto probs = softmax_rows(logits.value(), 3, 27);
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0;
        for (std::size_t c = 0; c < 27; ++c) row += probs[i * 27 + c];
        CHECK(row == doctest::Approx(1.0));
    }
}

TEST_CASE("multilabel head gives independent per-class probabilities") {
    const auto cfg = small_config();
    auto clf = attach_classifier(build_encoder(cfg, 1), 5, 2);
    auto x = random_batch(cfg, 2, 9);
    const auto probs = sigmoid_rows(clf.classify(clf.encode(x)).value());
    for (double p : probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("float32 and float64 forwards agree within 1e-3 relative") {
    const auto cfg = small_config();
    auto m32 = build_encoder(cfg, 31);
    auto m64 = to_double(m32);
    auto x32 = random_batch(cfg, 2, 77);
    std::vector<double> xd(x32.value().begin(), x32.value().end());
    auto x64 = TensorD::from_data(x32.shape(), xd);
    const auto h32 = m32.encode(x32).value();
    const auto h64 = m64.encode(x64).value();
    for (std::size_t i = 0; i < h32.size(); ++i) {
        const double rel = std::abs(h32[i] - h64[i]) / std::max(1e-6, std::abs(h64[i]));
        CHECK(rel < 1e-3);
    }
}

TEST_CASE("residual joins scale by 1/sqrt(2) and stay shape-correct") {
    EncoderConfig cfg = small_config();
    cfg.residual = true;
    auto m = build_encoder(cfg, 3);
    auto h = m.encode(random_batch(cfg, 2, 5));
    CHECK(h.shape() == Shape{2, 6});
}

TEST_CASE("bad spatial config fails at build time") {
    EncoderConfig cfg;
    cfg.widths = {4, 4, 4, 4, 4, 4};
    cfg.blocks_per_stage = {1, 1, 1, 1, 1, 1};
    cfg.input_height = 8;
    cfg.input_width = 8;
    CHECK_THROWS_AS(build_encoder(cfg, 0), DimensionError);
}

TEST_CASE("checkpoint round-trip is byte identical and preserves the stage tag") {
    const auto dir = fs::temp_directory_path() / "micle_ckpt_test";
    fs::create_directories(dir);
    const auto cfg = small_config();
    auto m = build_encoder(cfg, 13);
    Checkpoint ckpt = checkpoint_from_model(m, StageTag::micle);
    ckpt.opt_state.push_back({"encoder.stage0.conv0.w", {108}, std::vector<float>(108, 0.25f)});
    ckpt.rng_state = {1, 2, 3, 4};

    const std::string p1 = (dir / "a.mck").string();
    const std::string p2 = (dir / "b.mck").string();
    save_checkpoint(p1, ckpt);
    Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.stage == StageTag::micle);
    CHECK(loaded.rng_state == ckpt.rng_state);
    CHECK(loaded.opt_state.size() == 1);
    save_checkpoint(p2, loaded);
    CHECK(read_file(p1) == read_file(p2));

    // model reconstruction preserves values and behavior
    Model<float> back = model_from_checkpoint(loaded);
    auto x = random_batch(cfg, 2, 55);
    CHECK(back.encode(x).value() == m.encode(x).value());
    fs::remove_all(dir);
}

TEST_CASE("checkpoint load rejects wrong shapes and missing parameters") {
    const auto dir = fs::temp_directory_path() / "micle_ckpt_bad";
    fs::create_directories(dir);
    const auto cfg = small_config();
    auto m = build_encoder(cfg, 13);
    Checkpoint ckpt = checkpoint_from_model(m, StageTag::simclr);

    // shape mismatch against the config
    Checkpoint bad = ckpt;
    bad.params[0].shape = {1, 1, 3, 3};
    bad.params[0].data.assign(9, 0.0f);
    CHECK_THROWS_WITH_AS(model_from_checkpoint(bad), doctest::Contains("shape"),
                         ValidationError);

    // missing parameter
    Checkpoint missing = ckpt;
    missing.params.erase(missing.params.begin());
    CHECK_THROWS_WITH_AS(model_from_checkpoint(missing), doctest::Contains("missing"),
                         ValidationError);

    // version check
    const std::string p = (dir / "v.mck").string();
    save_checkpoint(p, ckpt);
    auto bytes = read_file(p);
    bytes[4] = 9;  // version field
    write_file(p, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("version"), ValidationError);
    fs::remove_all(dir);
}
