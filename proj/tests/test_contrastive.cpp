#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "micle/contrastive.hpp"
#include "micle/gradcheck.hpp"

using namespace micle;
namespace fs = std::filesystem;

namespace {

std::vector<double> randu(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

struct TempCorpus {
    fs::path dir;
    Manifest manifest;
    explicit TempCorpus(const char* name, CorpusSpec spec)
        : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        spec.out_dir = dir.string();
        manifest = generate_synthetic_corpus(spec);
    }
    ~TempCorpus() { fs::remove_all(dir); }
};

CorpusSpec tiny_spec() {
    CorpusSpec spec;
    spec.num_classes = 2;
    spec.bags_per_class = 8;
    spec.views_min = 1;
    spec.views_max = 3;
    spec.image_height = 12;
    spec.image_width = 12;
    spec.seed = 3;
    return spec;
}

}  // namespace

TEST_CASE("epoch sampler covers every item exactly once per epoch") {
    EpochSampler sampler(10, 5);
    std::multiset<std::size_t> seen;
    for (int b = 0; b < 5; ++b) {
        for (std::size_t i : sampler.next_batch(2)) seen.insert(i);
    }
    CHECK(sampler.epoch() == 0);
    CHECK(seen.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);

    // incomplete batch is dropped: 10 items, batch 3 -> 3 batches then reshuffle
    EpochSampler s2(10, 5);
    for (int b = 0; b < 3; ++b) s2.next_batch(3);
    CHECK(s2.epoch() == 0);
    s2.next_batch(3);
    CHECK(s2.epoch() == 1);
}

TEST_CASE("simclr batches pair two augmentations of one image") {
    TempCorpus corpus("micle_test_simclr", tiny_spec());
    AugmentPipeline pipe = preset_build("derm_pretrain", 8, 8);
    SimclrBatchBuilder builder(corpus.manifest, pipe, 99);
    ImageCache cache;
    PairBatch batch = builder.next(4, cache);
    CHECK(batch.views.shape() == Shape{8, 3, 8, 8});
    REQUIRE(batch.provenance.size() == 8);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& a = batch.provenance[2 * k];
        const auto& b = batch.provenance[2 * k + 1];
        CHECK(a.bag_id == b.bag_id);
        CHECK(a.image_index == b.image_index);  // same source image
        CHECK(a.sample_seed != b.sample_seed);  // two independent draws
    }
}

TEST_CASE("simclr epoch coverage: every train image appears once per epoch") {
    TempCorpus corpus("micle_test_cov", tiny_spec());
    AugmentPipeline pipe = preset_build("micle_partial", 8, 8);
    SimclrBatchBuilder builder(corpus.manifest, pipe, 7);
    const std::size_t items = builder.item_count();
    const std::size_t batch_pairs = 4;
    const std::size_t full_batches = items / batch_pairs;
    ImageCache cache;
    std::map<std::pair<std::string, std::size_t>, int> seen;
    for (std::size_t b = 0; b < full_batches; ++b) {
        PairBatch batch = builder.next(batch_pairs, cache);
        for (std::size_t k = 0; k < batch.num_pairs(); ++k) {
            seen[{batch.provenance[2 * k].bag_id, batch.provenance[2 * k].image_index}]++;
        }
    }
    // all sampled sources are distinct within the epoch
    for (const auto& [key, count] : seen) CHECK(count == 1);
    CHECK(seen.size() == full_batches * batch_pairs);
}

TEST_CASE("different epochs with the same global seed draw different augmentations") {
    TempCorpus corpus("micle_test_epochaug", tiny_spec());
    AugmentPipeline pipe = preset_build("derm_pretrain", 8, 8);
    // one bag's worth: batch == items -> each next() is one epoch
    SimclrBatchBuilder builder(corpus.manifest, pipe, 7);
    ImageCache cache;
    const std::size_t n = builder.item_count();
    PairBatch e0 = builder.next(n, cache);
    PairBatch e1 = builder.next(n, cache);
    std::set<std::uint64_t> s0, s1;
    for (const auto& p : e0.provenance) s0.insert(p.sample_seed);
    for (const auto& p : e1.provenance) s1.insert(p.sample_seed);
    for (std::uint64_t s : s1) CHECK_FALSE(s0.count(s));
}

TEST_CASE("micle batches: M=1 repeats the image, M>=2 takes distinct images") {
    TempCorpus corpus("micle_test_micle", tiny_spec());
    std::map<std::string, std::size_t> views;
    for (const auto& b : corpus.manifest.bags) views[b.bag_id] = b.views();
    AugmentPipeline pipe = preset_build("micle_partial", 8, 8);
    MicleBatchBuilder builder(corpus.manifest, pipe, 13);
    ImageCache cache;
    bool saw_single = false, saw_multi = false;
    for (int it = 0; it < 30; ++it) {
        PairBatch batch = builder.next(4, cache);
        for (std::size_t k = 0; k < batch.num_pairs(); ++k) {
            const auto& a = batch.provenance[2 * k];
            const auto& b = batch.provenance[2 * k + 1];
            CHECK(a.bag_id == b.bag_id);
            if (views.at(a.bag_id) == 1) {
                CHECK(a.image_index == b.image_index);
                CHECK(a.sample_seed != b.sample_seed);
                saw_single = true;
            } else {
                CHECK(a.image_index != b.image_index);
                saw_multi = true;
            }
        }
    }
    CHECK(saw_single);
    CHECK(saw_multi);
}

TEST_CASE("micle pair selection is uniform over unordered pairs for M=3") {
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    Rng rng(123);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto [a, b] = micle_select_images(3, rng);
        CHECK(a != b);
        if (a > b) std::swap(a, b);
        counts[{a, b}]++;
    }
    REQUIRE(counts.size() == 3);
    for (const auto& [pair, count] : counts) {
        CHECK(std::abs(count / double(draws) - 1.0 / 3.0) < 0.02);
    }
}

TEST_CASE("nt_xent hand example: two aligned pairs at tau=1") {
    // z1=z2=(1,0), z3=z4=(0,1): every term is -ln(e/(e+2))
    TensorD z = TensorD::from_data({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    const double loss = nt_xent_loss(z, {1.0, 1e-8}).item();
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
    CHECK(loss == doctest::Approx(0.551445).epsilon(1e-5));
    CHECK(nt_xent_oracle(z.value(), 4, 2, 1.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("nt_xent: N=1 batch is exactly zero; scaling invariance") {
    TensorD z = TensorD::from_data({2, 3}, {0.3, -1.2, 0.5, 2.0, 0.1, -0.4});
    CHECK(nt_xent_loss(z, {0.5, 1e-8}).item() == 0.0);

    Rng rng(6);
    auto data = randu(rng, 8 * 4);
    auto scaled = data;
    for (auto& v : scaled) v *= 3.0;
    const double a = nt_xent_loss(TensorD::from_data({8, 4}, data), {0.5, 1e-8}).item();
    const double b = nt_xent_loss(TensorD::from_data({8, 4}, scaled), {0.5, 1e-8}).item();
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("nt_xent input validation") {
    TensorD z = TensorD::from_data({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    CHECK_THROWS_AS(nt_xent_loss(z, {0.0, 1e-8}), ValidationError);
    CHECK_THROWS_AS(nt_xent_loss(z, {-1.0, 1e-8}), ValidationError);
    TensorD bad = TensorD::from_data({2, 2}, {1, 0, std::nan(""), 1});
    CHECK_THROWS_AS(nt_xent_loss(bad, {0.5, 1e-8}), NumericError);
    CHECK_THROWS_AS(nt_xent_loss(TensorD::from_data({3, 2}, {1, 0, 0, 1, 1, 1}), {0.5, 1e-8}),
                    DimensionError);
}

TEST_CASE("nt_xent matches the oracle across the temperature grid") {
    Rng rng(14);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(7);
        const std::size_t d = 2 + rng.below(15);
        const double tau = std::vector<double>{0.1, 0.5, 1.0}[rng.below(3)];
        auto data = randu(rng, 2 * n * d, -2.0, 2.0);
        const double fast = nt_xent_loss(TensorD::from_data({2 * n, d}, data), {tau, 1e-8}).item();
        const double slow = nt_xent_oracle(data, 2 * n, d, tau);
        worst = std::max(worst, std::abs(fast - slow));
    }
    CHECK(worst < 1e-10);
}

TEST_CASE("oracle symmetry: permuting pair order leaves the total unchanged") {
    Rng rng(15);
    const std::size_t n = 4, d = 5;
    auto data = randu(rng, 2 * n * d);
    const double base = nt_xent_oracle(data, 2 * n, d, 0.5);
    // swap pair 0 and pair 2 (rows 0,1 <-> 4,5)
    auto perm = data;
    for (std::size_t j = 0; j < d; ++j) {
        std::swap(perm[0 * d + j], perm[4 * d + j]);
        std::swap(perm[1 * d + j], perm[5 * d + j]);
    }
    CHECK(nt_xent_oracle(perm, 2 * n, d, 0.5) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("nt_xent gradient matches finite differences") {
    Rng rng(16);
    auto z = TensorD::from_data({6, 4}, randu(rng, 24), true);
    auto rep = finite_difference_check(
        [](const std::vector<TensorD>& l) { return nt_xent_loss(l[0], {0.5, 1e-8}); }, {z});
    CHECK(rep.max_rel_err < 1e-4);

    auto z2 = TensorD::from_data({8, 3}, randu(rng, 24), true);
    auto rep2 = finite_difference_check(
        [](const std::vector<TensorD>& l) { return nt_xent_loss(l[0], {0.1, 1e-8}); }, {z2});
    CHECK(rep2.max_rel_err < 1e-4);
}

TEST_CASE("loss is nonnegative and mode-agnostic at the embedding level") {
    // nt_xent only sees z and the pair layout; batches built by either
    // builder evaluate through the identical code path. Check L >= 0 over
    // random embeddings.
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        const std::size_t n = 2 + rng.below(5);
        auto z = TensorD::from_data({2 * n, 6}, randu(rng, 2 * n * 6, -3, 3));
        CHECK(nt_xent_loss(z, {0.5, 1e-8}).item() >= 0.0);
    }
}
