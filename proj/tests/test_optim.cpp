#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "micle/optim.hpp"

using namespace micle;

namespace {

Params<float> one_param(const std::string& name, std::vector<float> w, std::vector<float> g) {
    Params<float> p;
    const std::size_t n = w.size();
    auto t = TensorF::from_data({n}, std::move(w), true);
    TensorF::ensure_grad(*t.node());
    std::copy(g.begin(), g.end(), t.node()->grad.begin());
    p.add(name, std::move(t));
    return p;
}

}  // namespace

TEST_CASE("lars trust ratio arithmetic: ||w||=2, ||g||=1, wd=0, eta=1e-3 -> r=0.002") {
    // one step with momentum 0 and lr 1: update = r * g
    auto params = one_param("layer.w", {2.0f, 0.0f}, {1.0f, 0.0f});
    OptimState state;
    LarsConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    cfg.trust_coefficient = 1e-3;
    lars_step(params, state, cfg, 1.0);
    const auto& w = params.at("layer.w").value();
    CHECK(w[0] == doctest::Approx(2.0 - 0.002 * 1.0));
    CHECK(w[1] == 0.0f);
}

TEST_CASE("zero gradient and zero weight decay leave parameters unchanged") {
    auto params = one_param("layer.w", {1.0f, -2.0f, 3.0f}, {0.0f, 0.0f, 0.0f});
    OptimState state;
    LarsConfig cfg;
    cfg.weight_decay = 0.0;
    lars_step(params, state, cfg, 0.5);
    CHECK(params.at("layer.w").value() == std::vector<float>{1.0f, -2.0f, 3.0f});
}

TEST_CASE("excluded parameters skip adaptation") {
    // with exclusion, r = 1: update = lr * g
    auto params = one_param("proj.b1", {2.0f, 0.0f}, {1.0f, 0.0f});
    OptimState state;
    LarsConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    lars_step(params, state, cfg, 0.25);
    CHECK(params.at("proj.b1").value()[0] == doctest::Approx(2.0 - 0.25));
}

TEST_CASE("LARS with r forced to 1 is bitwise identical to SGD momentum") {
    Rng rng(5);
    std::vector<float> w(32), g(32);
    for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : g) v = static_cast<float>(rng.uniform(-1, 1));
    auto pa = one_param("layer.w", w, g);
    auto pb = one_param("layer.w", w, g);
    REQUIRE(pa.at("layer.w").value() == pb.at("layer.w").value());

    OptimState sa, sb;
    LarsConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 1e-4;
    cfg.exclude_from_adaptation = {"layer"};  // matches everything here -> r = 1
    for (int step = 0; step < 10; ++step) {
        lars_step(pa, sa, cfg, 0.05);
        sgd_momentum_step(pb, sb, 0.05, 0.9, 1e-4);
    }
    CHECK(pa.at("layer.w").value() == pb.at("layer.w").value());
    CHECK(sa.momentum.at("layer.w") == sb.momentum.at("layer.w"));
}

TEST_CASE("sgd: momentum 0 and wd 0 is plain gradient descent") {
    auto params = one_param("w", {1.0f}, {0.5f});
    OptimState state;
    sgd_momentum_step(params, state, 0.1, 0.0, 0.0);
    CHECK(params.at("w").value()[0] == doctest::Approx(1.0 - 0.1 * 0.5));
}

TEST_CASE("sgd: constant gradient, momentum 0.9 -> second update is lr*1.9*g") {
    auto params = one_param("w", {0.0f}, {1.0f});
    OptimState state;
    const double lr = 0.01;
    sgd_momentum_step(params, state, lr, 0.9, 0.0);
    const float after_first = params.at("w").value()[0];
    CHECK(after_first == doctest::Approx(-lr));
    // restore the same gradient (grad buffers persist on the leaf)
    sgd_momentum_step(params, state, lr, 0.9, 0.0);
    const float second_update = params.at("w").value()[0] - after_first;
    CHECK(second_update == doctest::Approx(-lr * 1.9));
}

TEST_CASE("sgd on a quadratic bowl strictly decreases the norm") {
    // f(w) = 0.5*||w||^2, grad = w
    std::vector<float> w = {3.0f, -4.0f};
    Params<float> params = one_param("w", w, w);
    OptimState state;
    double prev = 5.0;
    for (int i = 0; i < 30; ++i) {
        auto& t = params.at("w");
        // refresh grad = w
        TensorF::ensure_grad(*t.node());
        std::copy(t.value().begin(), t.value().end(), t.node()->grad.begin());
        sgd_momentum_step(params, state, 0.2, 0.0, 0.0);
        double norm = std::hypot(t.value()[0], t.value()[1]);
        CHECK(norm < prev);
        prev = norm;
    }
    CHECK(prev < 0.01);
}

TEST_CASE("non-finite gradients are rejected with the parameter name") {
    auto params = one_param("enc.w", {1.0f}, {std::numeric_limits<float>::infinity()});
    OptimState state;
    LarsConfig cfg;
    CHECK_THROWS_WITH_AS(lars_step(params, state, cfg, 0.1), doctest::Contains("enc.w"),
                         NumericError);
}

TEST_CASE("schedule: warmup ramp and cosine endpoints") {
    Schedule s{1000, 100, ScheduleKind::warmup_cosine};
    CHECK(schedule_lr(s, 0) == 0.0);
    CHECK(schedule_lr(s, 50) == doctest::Approx(0.5));
    CHECK(schedule_lr(s, 100) == doctest::Approx(1.0));
    CHECK(schedule_lr(s, 1000) == doctest::Approx(0.0));
    CHECK(schedule_lr(s, 550) == doctest::Approx(0.5));
    CHECK_THROWS_AS(schedule_lr(s, 1001), UsageError);

    Schedule c{1000, 0, ScheduleKind::constant};
    CHECK(schedule_lr(c, 0) == 1.0);
    CHECK(schedule_lr(c, 999) == 1.0);
}

TEST_CASE("sweep grid: 28 points, exact endpoints, one zero weight decay") {
    const auto sweep = build_sweep();
    CHECK(sweep.size() == 28);
    double min_lr = 1e9, max_lr = 0;
    std::size_t zero_wd = 0;
    std::set<double> lrs, wds;
    for (const auto& p : sweep) {
        min_lr = std::min(min_lr, p.lr);
        max_lr = std::max(max_lr, p.lr);
        if (p.weight_decay == 0.0) ++zero_wd;
        lrs.insert(p.lr);
        wds.insert(p.weight_decay);
    }
    CHECK(min_lr == doctest::Approx(std::pow(10.0, -3.5)).epsilon(1e-12));
    CHECK(max_lr == doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-12));
    CHECK(lrs.size() == 7);
    CHECK(wds.size() == 4);
    CHECK(zero_wd == 7);  // one zero-wd entry per learning rate
    CHECK(wds.count(1e-5) == 1);
    CHECK(wds.count(1e-4) == 1);
    CHECK(wds.count(1e-3) == 1);
}

TEST_CASE("optimizer state round-trips through blobs") {
    OptimState s;
    s.momentum["a"] = {1.0f, 2.0f};
    s.momentum["b"] = {3.0f};
    const auto blobs = s.to_blobs();
    OptimState back = OptimState::from_blobs(blobs);
    CHECK(back.momentum == s.momentum);
}
