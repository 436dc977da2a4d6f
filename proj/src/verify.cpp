#include "micle/verify.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "micle/contrastive.hpp"
#include "micle/data.hpp"
#include "micle/eval.hpp"
#include "micle/gradcheck.hpp"
#include "micle/model.hpp"
#include "micle/rng.hpp"

namespace micle {

namespace {

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

CriterionResult verify_loss_oracle() {
    Timer timer;
    Rng rng(20260801);
    const double temps[] = {0.1, 0.5, 1.0};
    double max_diff = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.below(7);   // pairs in {2..8}
        const std::size_t d = 2 + rng.below(15);  // dims in {2..16}
        const double tau = temps[rng.below(3)];
        const std::size_t two_n = 2 * n;
        auto data = random_vec(rng, two_n * d, -2.0, 2.0);
        TensorD z = TensorD::from_data({two_n, d}, data);
        const double loss = nt_xent_loss(z, {tau, 1e-8}).item();
        const double oracle = nt_xent_oracle(data, two_n, d, tau);
        max_diff = std::max(max_diff, std::abs(loss - oracle));
    }
    CriterionResult r;
    r.name = "loss oracle equivalence (1000 batches, tau grid)";
    r.pass = max_diff < 1e-10;
    std::ostringstream os;
    os << "max |loss - oracle| = " << max_diff;
    r.detail = os.str();
    r.seconds = timer.seconds();
    return r;
}

namespace {

struct OpCheck {
    std::string name;
    double max_rel_err = 0.0;
};

// Draws a tensor whose entries stay away from ReLU/log/pool kinks as needed.
TensorD leaf(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
    return TensorD::from_data(shape, random_vec(rng, numel(shape), lo, hi), true);
}

double check_op(const std::string& name, int configs,
                const std::function<double(Rng&)>& one_config) {
    double worst = 0.0;
    Rng rng(hash_str(name));
    for (int i = 0; i < configs; ++i) worst = std::max(worst, one_config(rng));
    return worst;
}

}  // namespace

CriterionResult verify_gradients() {
    Timer timer;
    std::vector<OpCheck> checks;
    const int kConfigs = 100;

    checks.push_back({"matmul", check_op("matmul", kConfigs, [](Rng& rng) {
        const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
        auto a = leaf(rng, {m, k});
        auto b = leaf(rng, {k, n});
        auto w = TensorD::from_data({m, n}, random_vec(rng, m * n));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(matmul(L[0], L[1]), w));
                   },
                   {a, b})
            .max_rel_err;
    })});

    checks.push_back({"matmul_nt", check_op("matmul_nt", kConfigs, [](Rng& rng) {
        const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
        auto a = leaf(rng, {m, k});
        auto b = leaf(rng, {n, k});
        auto w = TensorD::from_data({m, n}, random_vec(rng, m * n));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(matmul_nt(L[0], L[1]), w));
                   },
                   {a, b})
            .max_rel_err;
    })});

    checks.push_back({"linear", check_op("linear", kConfigs, [](Rng& rng) {
        const std::size_t n = 1 + rng.below(4), d = 1 + rng.below(4), f = 1 + rng.below(4);
        auto x = leaf(rng, {n, d});
        auto w = leaf(rng, {d, f});
        auto b = leaf(rng, {f});
        auto mask = TensorD::from_data({n, f}, random_vec(rng, n * f));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(linear(L[0], L[1], L[2]), mask));
                   },
                   {x, w, b})
            .max_rel_err;
    })});

    checks.push_back({"conv2d", check_op("conv2d", kConfigs, [](Rng& rng) {
        const std::size_t n = 1, c = 1 + rng.below(2), f = 1 + rng.below(2);
        const std::size_t h = 3 + rng.below(3), w = 3 + rng.below(3);
        const std::size_t kh = 1 + rng.below(std::min<std::size_t>(3, h));
        const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
        auto x = leaf(rng, {n, c, h, w});
        auto wt = leaf(rng, {f, c, kh, kh});
        const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
        const std::size_t wo = (w + 2 * pad - kh) / stride + 1;
        auto mask = TensorD::from_data({n, f, ho, wo}, random_vec(rng, n * f * ho * wo));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(conv2d(L[0], L[1], stride, pad), mask));
                   },
                   {x, wt})
            .max_rel_err;
    })});

    checks.push_back({"relu", check_op("relu", kConfigs, [](Rng& rng) {
        // keep entries away from the kink at 0
        const std::size_t n = 4 + rng.below(12);
        std::vector<double> data(n);
        for (auto& v : data) {
            v = rng.uniform(0.05, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
        }
        auto x = TensorD::from_data({n}, data, true);
        auto w = TensorD::from_data({n}, random_vec(rng, n));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) { return sum(mul(relu(L[0]), w)); }, {x})
            .max_rel_err;
    })});

    checks.push_back({"add_mul_scale", check_op("add_mul_scale", kConfigs, [](Rng& rng) {
        const std::size_t n = 2 + rng.below(8);
        auto a = leaf(rng, {n});
        auto b = leaf(rng, {n});
        const double c = rng.uniform(-2.0, 2.0);
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(scale(add(L[0], L[1]), c), L[1]));
                   },
                   {a, b})
            .max_rel_err;
    })});

    checks.push_back({"exp_log_sub_scalar", check_op("exp_log", kConfigs, [](Rng& rng) {
        const std::size_t n = 2 + rng.below(8);
        auto x = leaf(rng, {n}, 0.2, 2.0);
        const double c = rng.uniform(-0.1, 0.1);
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(micle::exp(scale(micle::log(sub_scalar(L[0], c)), 0.5)));
                   },
                   {x})
            .max_rel_err;
    })});

    checks.push_back({"maxpool2d", check_op("maxpool2d", kConfigs, [](Rng& rng) {
        const std::size_t n = 1, c = 1 + rng.below(2);
        const std::size_t h = 4 + rng.below(3), w = 4 + rng.below(3);
        const std::size_t k = 2 + rng.below(2);
        // distinct values keep the argmax stable under perturbation
        std::vector<double> data(n * c * h * w);
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] = static_cast<double>(i % 97) * 0.07 + rng.uniform(0.0, 0.01);
        }
        auto x = TensorD::from_data({n, c, h, w}, data, true);
        const std::size_t ho = (h - k) / 2 + 1, wo = (w - k) / 2 + 1;
        auto mask = TensorD::from_data({n, c, ho, wo}, random_vec(rng, n * c * ho * wo));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(maxpool2d(L[0], k, 2), mask));
                   },
                   {x})
            .max_rel_err;
    })});

    checks.push_back({"global_avg_pool", check_op("gap", kConfigs, [](Rng& rng) {
        const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(4);
        const std::size_t h = 2 + rng.below(4), w = 2 + rng.below(4);
        auto x = leaf(rng, {n, c, h, w});
        auto mask = TensorD::from_data({n, c}, random_vec(rng, n * c));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(global_avg_pool(L[0]), mask));
                   },
                   {x})
            .max_rel_err;
    })});

    checks.push_back({"l2_normalize", check_op("l2n", kConfigs, [](Rng& rng) {
        const std::size_t n = 1 + rng.below(4), d = 2 + rng.below(6);
        auto x = leaf(rng, {n, d}, 0.3, 1.5);
        auto mask = TensorD::from_data({n, d}, random_vec(rng, n * d));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(l2_normalize(L[0], 1e-9), mask));
                   },
                   {x})
            .max_rel_err;
    })});

    checks.push_back({"row_logsumexp_masked", check_op("lse", kConfigs, [](Rng& rng) {
        const std::size_t n = 2 + rng.below(4), d = 3 + rng.below(5);
        auto x = leaf(rng, {n, d}, -2.0, 2.0);
        std::vector<double> mask(n * d, 1.0);
        for (std::size_t i = 0; i < n; ++i) mask[i * d + rng.below(d)] = 0.0;
        auto w = TensorD::from_data({n}, random_vec(rng, n));
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return sum(mul(row_logsumexp_masked(L[0], mask), w));
                   },
                   {x})
            .max_rel_err;
    })});

    checks.push_back({"softmax_cross_entropy", check_op("sce", kConfigs, [](Rng& rng) {
        const std::size_t n = 2 + rng.below(4), c = 2 + rng.below(5);
        auto x = leaf(rng, {n, c}, -2.0, 2.0);
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = rng.below(c);
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) {
                       return softmax_cross_entropy(L[0], labels);
                   },
                   {x})
            .max_rel_err;
    })});

    checks.push_back({"sigmoid_bce", check_op("bce", kConfigs, [](Rng& rng) {
        const std::size_t n = 2 + rng.below(4), c = 2 + rng.below(5);
        auto x = leaf(rng, {n, c}, -2.0, 2.0);
        std::vector<double> targets(n * c);
        for (auto& t : targets) t = rng.bernoulli(0.5) ? 1.0 : 0.0;
        return finite_difference_check(
                   [&](const std::vector<TensorD>& L) { return sigmoid_bce(L[0], targets); },
                   {x})
            .max_rel_err;
    })});

    // End-to-end: NT-Xent through a small encoder + projection head, all
    // parameters checked against central differences. A draw can land a
    // preactivation or pool tie within h of a kink, where finite differences
    // are invalid; such draws show gross errors, so take the best of a few
    // independent draws. A genuine backward defect persists across all of
    // them.
    checks.push_back({"ntxent_through_encoder", check_op("e2e", kConfigs, [](Rng& rng) {
        EncoderConfig cfg;
        cfg.widths = {3, 4};
        cfg.blocks_per_stage = {1, 1};
        cfg.input_channels = 2;
        cfg.input_height = 6;
        cfg.input_width = 6;
        cfg.projection_dim = 2;
        cfg.projection_hidden = 3;
        double best = 1.0;
        for (int attempt = 0; attempt < 8; ++attempt) {
            Model<double> m = to_double(build_encoder(cfg, rng.next_u64()));
            const std::size_t two_n = 4;
            auto x = TensorD::from_data({two_n, 2, 6, 6},
                                        random_vec(rng, two_n * 2 * 6 * 6, 0.05, 1.0));
            auto forward = [&](const std::vector<TensorD>& leaves) {
                Params<double> p;
                std::size_t i = 0;
                for (const auto& name : m.params.order) p.add(name, leaves[i++]);
                Model<double> probe;
                probe.config = m.config;
                probe.params = std::move(p);
                probe.has_projection = true;
                TensorD z = probe.project(probe.encode(x));
                return nt_xent_loss(z, {0.5, 1e-8});
            };
            std::vector<TensorD> leaves;
            for (const auto& name : m.params.order) leaves.push_back(m.params.at(name));
            best = std::min(best, finite_difference_check(forward, leaves, 1e-5).max_rel_err);
            if (best < 1e-6) break;
        }
        return best;
    })});

    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : checks) {
        if (c.max_rel_err > worst) {
            worst = c.max_rel_err;
            worst_name = c.name;
        }
    }
    CriterionResult r;
    r.name = "gradient suite (finite differences, 100 configs per op)";
    r.pass = worst < 1e-4;
    std::ostringstream os;
    os << "max rel err = " << worst << " (" << worst_name << ")";
    r.detail = os.str();
    r.seconds = timer.seconds();
    return r;
}

CriterionResult verify_sampler() {
    Timer timer;
    std::ostringstream os;
    bool pass = true;

    // Uniformity over unordered pairs, M = 3, 10k draws.
    {
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
        Rng rng(991);
        const int draws = 10000;
        for (int i = 0; i < draws; ++i) {
            auto [a, b] = micle_select_images(3, rng);
            if (a > b) std::swap(a, b);
            counts[{a, b}]++;
        }
        if (counts.size() != 3) pass = false;
        for (const auto& [pair, count] : counts) {
            const double freq = static_cast<double>(count) / draws;
            if (std::abs(freq - 1.0 / 3.0) > 0.02) pass = false;
        }
        os << "pair freqs:";
        for (const auto& [pair, count] : counts) {
            os << " (" << pair.first << "," << pair.second
               << ")=" << static_cast<double>(count) / draws;
        }
    }
    // M = 1 always selects the single image twice; M >= 2 always distinct.
    {
        Rng rng(992);
        for (int i = 0; i < 1000; ++i) {
            auto [a, b] = micle_select_images(1, rng);
            if (a != 0 || b != 0) pass = false;
            for (std::size_t m = 2; m <= 6; ++m) {
                auto [c, d] = micle_select_images(m, rng);
                if (c == d || c >= m || d >= m) pass = false;
            }
        }
    }
    // Builder-level: same-bag positives, distinct images for M >= 2, same
    // image twice for M = 1, across real batches on a tiny corpus.
    {
        namespace fs = std::filesystem;
        const std::string dir = (fs::temp_directory_path() / "micle_verify_sampler").string();
        CorpusSpec spec;
        spec.num_classes = 2;
        spec.bags_per_class = 6;
        spec.views_min = 1;
        spec.views_max = 3;
        spec.image_height = 12;
        spec.image_width = 12;
        spec.seed = 7;
        spec.out_dir = dir;
        Manifest manifest = generate_synthetic_corpus(spec);
        std::map<std::string, std::size_t> bag_views;
        for (const auto& b : manifest.bags) bag_views[b.bag_id] = b.views();
        AugmentPipeline pipe = preset_build("micle_partial", 8, 8);
        MicleBatchBuilder builder(manifest, pipe, 5);
        ImageCache cache;
        for (int it = 0; it < 50; ++it) {
            PairBatch batch = builder.next(4, cache);
            for (std::size_t k = 0; k < batch.num_pairs(); ++k) {
                const auto& a = batch.provenance[2 * k];
                const auto& b = batch.provenance[2 * k + 1];
                if (a.bag_id != b.bag_id) pass = false;
                const std::size_t m = bag_views.at(a.bag_id);
                if (m == 1 && a.image_index != b.image_index) pass = false;
                if (m >= 2 && a.image_index == b.image_index) pass = false;
            }
        }
        fs::remove_all(dir);
    }

    CriterionResult r;
    r.name = "multi-instance sampler properties";
    r.pass = pass;
    r.detail = os.str();
    r.seconds = timer.seconds();
    return r;
}

CriterionResult verify_loss_invariants() {
    Timer timer;
    bool pass = true;
    std::ostringstream os;
    Rng rng(41);

    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(6);
        const std::size_t d = 2 + rng.below(8);
        const std::size_t two_n = 2 * n;
        const double tau = 0.1 + rng.u01() * 0.9;
        auto data = random_vec(rng, two_n * d, -2.0, 2.0);
        TensorD z = TensorD::from_data({two_n, d}, data);
        const double base = nt_xent_loss(z, {tau, 1e-8}).item();
        if (!(base >= 0.0)) pass = false;

        // pair permutation
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        Rng(rng.next_u64()).shuffle(perm);
        std::vector<double> permuted(two_n * d);
        for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t r2 = 0; r2 < 2; ++r2) {
                std::copy(data.begin() + (2 * perm[k] + r2) * d,
                          data.begin() + (2 * perm[k] + r2 + 1) * d,
                          permuted.begin() + (2 * k + r2) * d);
            }
        }
        const double p1 = nt_xent_loss(TensorD::from_data({two_n, d}, permuted), {tau, 1e-8}).item();
        if (p1 != base) pass = false;

        // within-pair swap
        std::vector<double> swapped = data;
        const std::size_t k = rng.below(n);
        for (std::size_t j = 0; j < d; ++j) {
            std::swap(swapped[(2 * k) * d + j], swapped[(2 * k + 1) * d + j]);
        }
        const double p2 = nt_xent_loss(TensorD::from_data({two_n, d}, swapped), {tau, 1e-8}).item();
        if (p2 != base) pass = false;

        // per-vector positive rescaling (float32 tolerance)
        std::vector<float> scaled32(two_n * d), base32(two_n * d);
        for (std::size_t i = 0; i < two_n; ++i) {
            const float s = static_cast<float>(rng.uniform(0.25, 4.0));
            for (std::size_t j = 0; j < d; ++j) {
                base32[i * d + j] = static_cast<float>(data[i * d + j]);
                scaled32[i * d + j] = base32[i * d + j] * s;
            }
        }
        const float f1 =
            nt_xent_loss(TensorF::from_data({two_n, d}, base32), {tau, 1e-8}).item();
        const float f2 =
            nt_xent_loss(TensorF::from_data({two_n, d}, scaled32), {tau, 1e-8}).item();
        if (std::abs(f1 - f2) > 1e-6 * std::max(1.0f, std::abs(f1))) pass = false;
    }

    // N=1 yields exactly zero.
    {
        Rng r2(99);
        for (int i = 0; i < 50; ++i) {
            TensorD z = TensorD::from_data({2, 3}, random_vec(r2, 6, -3.0, 3.0));
            if (nt_xent_loss(z, {0.5, 1e-8}).item() != 0.0) pass = false;
        }
    }
    // Perfect alignment with orthogonal negatives at tau = 0.1 drives L below 0.01.
    {
        const std::size_t n = 4, d = 8;
        std::vector<double> z(2 * n * d, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            z[(2 * k) * d + k] = 1.0;
            z[(2 * k + 1) * d + k] = 1.0;
        }
        const double l = nt_xent_loss(TensorD::from_data({2 * n, d}, z), {0.1, 1e-8}).item();
        os << "aligned-orthogonal L(tau=0.1) = " << l;
        if (!(l < 0.01)) pass = false;
    }

    CriterionResult r;
    r.name = "loss invariants (nonnegativity, permutation, rescaling, N=1)";
    r.pass = pass;
    r.detail = os.str();
    r.seconds = timer.seconds();
    return r;
}

namespace {

double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::uint64_t half = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i]) {
            ++np;
        } else {
            ++nn;
        }
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) half += 2;
            else if (scores[i] == scores[j]) half += 1;
        }
    }
    return static_cast<double>(half) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

}  // namespace

CriterionResult verify_metric_oracles() {
    Timer timer;
    bool pass = true;
    std::ostringstream os;
    Rng rng(5150);

    // roc_auc vs brute force, exact equality, with tie-rich score grids.
    double checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 2 + rng.below(99);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool has_pos = false, has_neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.below(64)) / 64.0;  // grid forces ties
            labels[i] = rng.bernoulli(0.5) ? 1 : 0;
            (labels[i] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        const double fast = roc_auc(scores, labels);
        const double brute = brute_force_auc(scores, labels);
        if (fast != brute) {
            pass = false;
            os << "auc mismatch at trial " << trial << ": " << fast << " vs " << brute << "; ";
        }
        // strictly increasing transform leaves AUC unchanged, exactly
        std::vector<double> transformed(n);
        for (std::size_t i = 0; i < n; ++i) transformed[i] = 2.0 * scores[i] + 1.0;
        if (roc_auc(transformed, labels) != fast) {
            pass = false;
            os << "monotone-transform violation at trial " << trial << "; ";
        }
        ++checked;
    }
    os << "auc cases checked: " << checked;

    // top-k fixtures: 3 examples ranked (1st, 3rd, 4th) -> top-3 = 2/3.
    {
        PredictionSet p;
        p.task_kind = TaskKind::multiclass;
        p.num_classes = 5;
        auto mk = [&](std::vector<double> s, std::size_t label) {
            Prediction pr;
            pr.bag_id = "b" + std::to_string(p.items.size());
            pr.scores = std::move(s);
            pr.label = label;
            p.items.push_back(pr);
        };
        mk({0.9, 0.05, 0.03, 0.01, 0.01}, 0);   // rank 1
        mk({0.4, 0.3, 0.2, 0.08, 0.02}, 2);      // rank 3
        mk({0.4, 0.3, 0.2, 0.08, 0.02}, 3);      // rank 4
        if (topk_accuracy(p, 3) != 2.0 / 3.0) pass = false;
        if (topk_accuracy(p, 1) != 1.0 / 3.0) pass = false;
        if (topk_accuracy(p, 5) != 1.0) pass = false;
        // macro sensitivity: class 0 -> 1.0, class 2 -> 1.0 (top3), class 3 -> 0
        const auto sens = topk_sensitivity(p, 3);
        if (sens.classes_averaged != 3) pass = false;
        if (std::abs(sens.macro - (1.0 + 1.0 + 0.0) / 3.0) > 1e-15) pass = false;
    }
    // monotonicity of top-k in k on random sets
    {
        Rng r2(77);
        PredictionSet p;
        p.task_kind = TaskKind::multiclass;
        p.num_classes = 6;
        for (int i = 0; i < 50; ++i) {
            Prediction pr;
            pr.bag_id = "r" + std::to_string(i);
            pr.scores = random_vec(r2, 6, 0.0, 1.0);
            pr.label = r2.below(6);
            p.items.push_back(pr);
        }
        double prev = 0.0;
        for (std::size_t k = 1; k <= 6; ++k) {
            const double acc = topk_accuracy(p, k);
            if (acc + 1e-15 < prev) pass = false;
            prev = acc;
        }
        if (topk_accuracy(p, 6) != 1.0) pass = false;
    }

    CriterionResult r;
    r.name = "metric oracles (AUC pair counting, top-k fixtures, transforms)";
    r.pass = pass;
    r.detail = os.str();
    r.seconds = timer.seconds();
    return r;
}

CriterionResult verify_bootstrap() {
    Timer timer;
    bool pass = true;
    std::ostringstream os;

    auto accuracy = [](const PredictionSet& p) { return topk_accuracy(p, 1); };

    // determinism per seed
    {
        Rng rng(31);
        PredictionSet p;
        p.task_kind = TaskKind::multiclass;
        p.num_classes = 2;
        for (int i = 0; i < 100; ++i) {
            Prediction pr;
            pr.bag_id = "b" + std::to_string(i);
            pr.label = rng.below(2);
            pr.scores = {rng.u01(), rng.u01()};
            p.items.push_back(pr);
        }
        const auto a = bootstrap_ci(p, accuracy, 1000, 7);
        const auto b = bootstrap_ci(p, accuracy, 1000, 7);
        if (a.ci_low != b.ci_low || a.ci_high != b.ci_high || a.point != b.point) pass = false;
    }
    // degenerate: constant metric -> zero-width interval equal to the point
    {
        PredictionSet p;
        p.task_kind = TaskKind::multiclass;
        p.num_classes = 2;
        for (int i = 0; i < 40; ++i) {
            Prediction pr;
            pr.bag_id = "c" + std::to_string(i);
            pr.label = 0;
            pr.scores = {0.9, 0.1};
            p.items.push_back(pr);
        }
        const auto b = bootstrap_ci(p, accuracy, 500, 3);
        if (!(b.point == 1.0 && b.ci_low == 1.0 && b.ci_high == 1.0)) pass = false;
    }
    // coverage: Bernoulli(0.7) accuracy, n=200, 100 trials, >= 90 contain 0.7
    {
        int contain = 0;
        for (int trial = 0; trial < 100; ++trial) {
            Rng rng(1000 + trial);
            PredictionSet p;
            p.task_kind = TaskKind::multiclass;
            p.num_classes = 2;
            for (int i = 0; i < 200; ++i) {
                Prediction pr;
                pr.bag_id = "t" + std::to_string(i);
                pr.label = 0;
                const bool correct = rng.bernoulli(0.7);
                pr.scores = correct ? std::vector<double>{1.0, 0.0}
                                    : std::vector<double>{0.0, 1.0};
                p.items.push_back(pr);
            }
            const auto b = bootstrap_ci(p, accuracy, 1000, 555 + trial);
            if (b.ci_low <= 0.7 && 0.7 <= b.ci_high) ++contain;
        }
        os << "coverage: " << contain << "/100";
        if (contain < 90) pass = false;
    }

    CriterionResult r;
    r.name = "bootstrap intervals (determinism, degeneracy, coverage)";
    r.pass = pass;
    r.detail = os.str();
    r.seconds = timer.seconds();
    return r;
}

std::vector<CriterionResult> run_verify_suite() {
    return {
        verify_loss_oracle(),   verify_gradients(), verify_sampler(),
        verify_loss_invariants(), verify_metric_oracles(), verify_bootstrap(),
    };
}

}  // namespace micle
