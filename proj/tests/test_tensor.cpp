#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "micle/gradcheck.hpp"
#include "micle/ops.hpp"
#include "micle/rng.hpp"

using namespace micle;

namespace {

std::vector<double> randu(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed product") {
    auto i2 = TensorD::from_data({2, 2}, {1, 0, 0, 1});
    auto c = matmul(i2, i2);
    CHECK(c.value() == std::vector<double>{1, 0, 0, 1});

    auto a = TensorD::from_data({2, 2}, {1, 2, 3, 4});
    auto b = TensorD::from_data({2, 1}, {1, 1});
    auto y = matmul(a, b);
    CHECK(y.value()[0] == 3.0);
    CHECK(y.value()[1] == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = TensorD::zeros({2, 3});
    auto b = TensorD::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    auto a = TensorD::from_data({3, 4}, randu(rng, 12), true);
    auto b = TensorD::from_data({4, 2}, randu(rng, 8), true);
    auto rep = finite_difference_check(
        [](const std::vector<TensorD>& l) { return sum(matmul(l[0], l[1])); }, {a, b});
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("conv2d identity kernel and hand computation") {
    Rng rng(5);
    auto x = TensorD::from_data({1, 1, 3, 3}, randu(rng, 9));
    auto w = TensorD::from_data({1, 1, 1, 1}, {1.0});
    auto y = conv2d(x, w, 1, 0);
    CHECK(y.value() == x.value());

    auto x2 = TensorD::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w2 = TensorD::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
    auto y2 = conv2d(x2, w2, 1, 0);
    CHECK(y2.value()[0] == 10.0);
    CHECK(y2.shape() == Shape{1, 1, 1, 1});
}

TEST_CASE("conv2d output extent formula with stride and padding") {
    auto x = TensorD::zeros({1, 1, 5, 7});
    auto w = TensorD::zeros({2, 1, 3, 3});
    auto y = conv2d(x, w, 2, 1);
    CHECK(y.shape() == Shape{1, 2, 3, 4});  // (5+2-3)/2+1, (7+2-3)/2+1
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    auto x = TensorD::zeros({1, 1, 2, 2});
    auto w = TensorD::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w, 1, 0), DimensionError);
}

TEST_CASE("conv2d gradients wrt input and kernel") {
    Rng rng(17);
    auto x = TensorD::from_data({2, 2, 5, 4}, randu(rng, 2 * 2 * 5 * 4), true);
    auto w = TensorD::from_data({3, 2, 3, 3}, randu(rng, 54), true);
    auto mask = TensorD::from_data({2, 3, 3, 2}, randu(rng, 36));
    auto rep = finite_difference_check(
        [&](const std::vector<TensorD>& l) {
            return sum(mul(conv2d(l[0], l[1], 2, 1), mask));
        },
        {x, w});
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("elementwise examples") {
    auto x = TensorD::from_data({3}, {-1, 0, 2});
    CHECK(relu(x).value() == std::vector<double>{0, 0, 2});
    CHECK(micle::exp(TensorD::from_data({1}, {0.0})).value()[0] == 1.0);
    CHECK(sub_scalar(TensorD::from_data({2}, {3, 4}), 1.0).value() ==
          std::vector<double>{2, 3});
    CHECK_THROWS_AS(micle::log(TensorD::from_data({1}, {0.0})), DomainError);
    CHECK_THROWS_AS(micle::log(TensorD::from_data({1}, {-2.0})), DomainError);
    CHECK_THROWS_AS(add(TensorD::zeros({2}), TensorD::zeros({3})), DimensionError);
}

TEST_CASE("pooling examples and argmax tie routing") {
    auto c = TensorD::full({1, 2, 3, 3}, 0.7);
    auto g = global_avg_pool(c);
    CHECK(g.shape() == Shape{1, 2});
    CHECK(g.value()[0] == doctest::Approx(0.7));

    auto x = TensorD::from_data({1, 1, 2, 2}, {1, 2, 3, 4}, true);
    auto y = maxpool2d(x, 2, 2);
    CHECK(y.value()[0] == 4.0);
    sum(y).backward();
    CHECK(x.grad() == std::vector<double>{0, 0, 0, 1});

    // ties route to the first occurrence in row-major scan order
    auto t = TensorD::from_data({1, 1, 2, 2}, {5, 5, 5, 5}, true);
    sum(maxpool2d(t, 2, 2)).backward();
    CHECK(t.grad() == std::vector<double>{1, 0, 0, 0});

    CHECK_THROWS_AS(maxpool2d(TensorD::zeros({1, 1, 2, 2}), 3, 1), DimensionError);
}

TEST_CASE("l2_normalize examples and zero-row guard") {
    auto v = TensorD::from_data({1, 2}, {3, 4});
    auto n = l2_normalize(v, 1e-12);
    CHECK(n.value()[0] == doctest::Approx(0.6));
    CHECK(n.value()[1] == doctest::Approx(0.8));

    auto u = TensorD::from_data({1, 2}, {1, 0});
    CHECK(l2_normalize(u, 1e-12).value() == std::vector<double>{1, 0});

    auto z = TensorD::from_data({1, 2}, {0, 0});
    auto nz = l2_normalize(z, 1e-6);
    CHECK(nz.value() == std::vector<double>{0, 0});
}

TEST_CASE("backward basics: ones, 2x, accumulation across calls") {
    auto x = TensorD::from_data({3}, {1, 2, 3}, true);
    auto s = sum(x);
    s.backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    auto y = TensorD::from_data({3}, {1, 2, 3}, true);
    sum(mul(y, y)).backward();
    CHECK(y.grad() == std::vector<double>{2, 4, 6});

    // repeated backward accumulates into leaves
    auto z = TensorD::from_data({2}, {1, 1}, true);
    auto l = sum(z);
    l.backward();
    l.backward();
    CHECK(z.grad() == std::vector<double>{2, 2});
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = TensorD::from_data({2}, {1, 2}, true);
    auto y = relu(x);
    CHECK_THROWS_AS(y.backward(), ValidationError);
}

TEST_CASE("two-consumer accumulation matches the analytic sum rule") {
    // f = sum(x*x) + sum(x) -> df/dx = 2x + 1
    auto x = TensorD::from_data({3}, {0.5, -1.5, 2.0}, true);
    auto f = add(sum(mul(x, x)), sum(x));
    f.backward();
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2 * x.value()[i] + 1));
    }
}

TEST_CASE("three-layer network parameters pass finite differences") {
    Rng rng(23);
    auto x = TensorD::from_data({2, 4}, randu(rng, 8));
    auto w1 = TensorD::from_data({4, 5}, randu(rng, 20), true);
    auto b1 = TensorD::from_data({5}, randu(rng, 5), true);
    auto w2 = TensorD::from_data({5, 4}, randu(rng, 20), true);
    auto b2 = TensorD::from_data({4}, randu(rng, 4), true);
    auto w3 = TensorD::from_data({4, 2}, randu(rng, 8), true);
    auto b3 = TensorD::from_data({2}, randu(rng, 2), true);
    auto rep = finite_difference_check(
        [&](const std::vector<TensorD>& l) {
            auto h1 = relu(linear(x, l[0], l[1]));
            auto h2 = relu(linear(h1, l[2], l[3]));
            auto out = linear(h2, l[4], l[5]);
            return sum(mul(out, out));
        },
        {w1, b1, w2, b2, w3, b3});
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.checked == 20 + 5 + 20 + 4 + 8 + 2);
}

TEST_CASE("sum_value_sorted is permutation invariant bitwise") {
    Rng rng(3);
    auto vals = randu(rng, 64);
    auto x = TensorD::from_data({64}, vals);
    const double s1 = sum_value_sorted(x).item();
    Rng perm(9);
    perm.shuffle(vals);
    const double s2 = sum_value_sorted(TensorD::from_data({64}, vals)).item();
    CHECK(s1 == s2);
}
