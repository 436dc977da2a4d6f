#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "micle/io.hpp"
#include "micle/rng.hpp"

using namespace micle;
namespace fs = std::filesystem;

TEST_CASE("rng streams are deterministic and seed-sensitive") {
    Rng a(42), b(42), c(43);
    bool all_equal_ab = true, any_diff_ac = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        all_equal_ab = all_equal_ab && (x == b.next_u64());
        any_diff_ac = any_diff_ac || (x != c.next_u64());
    }
    CHECK(all_equal_ab);
    CHECK(any_diff_ac);
}

TEST_CASE("uniform below n is in range and roughly uniform") {
    Rng rng(7);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
    for (int c : counts) CHECK(std::abs(c - 10000) < 600);
}

TEST_CASE("derive_seed separates slots, views, epochs, and stages") {
    const auto base = derive_seed(1, 0, "bag_a", 0, "simclr", 0);
    CHECK(base != derive_seed(1, 0, "bag_a", 0, "simclr", 1));
    CHECK(base != derive_seed(1, 1, "bag_a", 0, "simclr", 0));
    CHECK(base != derive_seed(1, 0, "bag_b", 0, "simclr", 0));
    CHECK(base != derive_seed(1, 0, "bag_a", 1, "simclr", 0));
    CHECK(base != derive_seed(1, 0, "bag_a", 0, "micle", 0));
    CHECK(base == derive_seed(1, 0, "bag_a", 0, "simclr", 0));
}

TEST_CASE("RT1 round-trips exactly for both dtypes") {
    const auto dir = fs::temp_directory_path() / "micle_rt1_test";
    fs::create_directories(dir);
    Rng rng(9);
    std::vector<float> f(24);
    for (auto& v : f) v = static_cast<float>(rng.uniform(-5, 5));
    rt1_write((dir / "a.rt1").string(), {2, 3, 4}, f);
    auto blob = rt1_read((dir / "a.rt1").string());
    CHECK(blob.dtype == Dtype::f32);
    CHECK(blob.shape == Shape{2, 3, 4});
    CHECK(blob.f32 == f);

    std::vector<double> d(6);
    for (auto& v : d) v = rng.uniform(-5, 5);
    rt1_write((dir / "b.rt1").string(), {6}, d);
    auto blob2 = rt1_read((dir / "b.rt1").string());
    CHECK(blob2.dtype == Dtype::f64);
    CHECK(blob2.f64 == d);

    // encode -> decode -> encode is byte identical
    const auto bytes1 = rt1_encode(Shape{6}, d);
    auto decoded = rt1_decode(bytes1.data(), bytes1.size());
    const auto bytes2 = rt1_encode(decoded.shape, decoded.f64);
    CHECK(bytes1 == bytes2);
    fs::remove_all(dir);
}

TEST_CASE("RT1 rejects corrupt headers") {
    std::vector<std::uint8_t> junk = {'R', 'T', '2', 0, 0, 1};
    CHECK_THROWS_AS(rt1_decode(junk.data(), junk.size()), ValidationError);
    std::vector<std::uint8_t> short_buf = {'R', 'T', '1', 0};
    CHECK_THROWS_AS(rt1_decode(short_buf.data(), short_buf.size()), ValidationError);
}

TEST_CASE("PPM and PGM decode with linear rescale") {
    const auto dir = fs::temp_directory_path() / "micle_pnm_test";
    fs::create_directories(dir);

    // All-zero P5 image decodes to zeros.
    {
        Image img;
        img.channels = 1;
        img.height = 2;
        img.width = 3;
        img.data.assign(6, 0.0f);
        write_pgm((dir / "z.pgm").string(), img);
        const Image back = decode_image((dir / "z.pgm").string());
        CHECK(back.channels == 1);
        CHECK(back.data == std::vector<float>(6, 0.0f));
    }
    // P6 pixel (255,0,0) -> (1,0,0); value 128 -> 128/255.
    {
        Image img;
        img.channels = 3;
        img.height = 1;
        img.width = 2;
        img.data = {1.0f, 128.0f / 255.0f, 0.0f, 0.0f, 0.0f, 0.0f};
        write_ppm((dir / "c.ppm").string(), img);
        const Image back = decode_image((dir / "c.ppm").string());
        CHECK(back.at(0, 0, 0) == 1.0f);
        CHECK(back.at(1, 0, 0) == 0.0f);
        CHECK(back.at(2, 0, 0) == 0.0f);
        CHECK(back.at(0, 0, 1) == doctest::Approx(128.0 / 255.0));
    }
    fs::remove_all(dir);
}

TEST_CASE("PPM encode/decode round-trips within 1/255 per channel") {
    const auto dir = fs::temp_directory_path() / "micle_pnm_roundtrip";
    fs::create_directories(dir);
    Rng rng(31);
    Image img;
    img.channels = 3;
    img.height = 5;
    img.width = 4;
    img.data.resize(60);
    for (auto& v : img.data) v = static_cast<float>(rng.u01());
    write_ppm((dir / "r.ppm").string(), img);
    const Image back = decode_image((dir / "r.ppm").string());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        CHECK(std::abs(back.data[i] - img.data[i]) <= 1.0f / 255.0f);
    }
    fs::remove_all(dir);
}

TEST_CASE("RT1 images must be rank 3 in [0,1]") {
    const auto dir = fs::temp_directory_path() / "micle_rt1_img";
    fs::create_directories(dir);
    rt1_write((dir / "bad_range.rt1").string(), {1, 1, 2}, std::vector<float>{0.5f, 1.5f});
    CHECK_THROWS_AS(decode_image((dir / "bad_range.rt1").string()), ValidationError);
    rt1_write((dir / "ok.rt1").string(), {1, 1, 2}, std::vector<float>{0.5f, 1.0f});
    const Image img = decode_image((dir / "ok.rt1").string());
    CHECK(img.channels == 1);
    CHECK(img.data == std::vector<float>{0.5f, 1.0f});
    fs::remove_all(dir);
}

TEST_CASE("unsupported format is rejected") {
    const auto dir = fs::temp_directory_path() / "micle_badfmt";
    fs::create_directories(dir);
    write_file((dir / "x.bin").string(), {0x89, 'P', 'N', 'G'});
    CHECK_THROWS_AS(decode_image((dir / "x.bin").string()), ValidationError);
    fs::remove_all(dir);
}
