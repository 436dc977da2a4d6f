#include "micle/contrastive.hpp"

#include <cmath>

#include "micle/parallel.hpp"

namespace micle {

EpochSampler::EpochSampler(std::size_t count, std::uint64_t global_seed)
    : count_(count), seed_(global_seed) {
    check_dim(count > 0, "sampler over empty item set");
    reshuffle();
}

void EpochSampler::reshuffle() {
    order_.resize(count_);
    for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
    Rng rng(hash_combine(seed_, epoch_));
    rng.shuffle(order_);
    cursor_ = 0;
}

std::vector<std::size_t> EpochSampler::next_batch(std::size_t n) {
    check_dim(n >= 1 && n <= count_, "batch size " + std::to_string(n) +
                                         " exceeds item count " + std::to_string(count_));
    if (cursor_ + n > count_) {
        // Final incomplete batch dropped; a new epoch begins.
        ++epoch_;
        reshuffle();
    }
    std::vector<std::size_t> out(order_.begin() + cursor_, order_.begin() + cursor_ + n);
    cursor_ += n;
    return out;
}

namespace {

TensorF stack_views(std::vector<Image>&& views) {
    const std::size_t n = views.size();
    const std::size_t c = views[0].channels, h = views[0].height, w = views[0].width;
    std::vector<float> data(n * c * h * w);
    for (std::size_t i = 0; i < n; ++i) {
        check_dim(views[i].channels == c && views[i].height == h && views[i].width == w,
                  "augmented views disagree in shape");
        std::copy(views[i].data.begin(), views[i].data.end(), data.begin() + i * c * h * w);
    }
    return TensorF::from_data({n, c, h, w}, std::move(data));
}

}  // namespace

SimclrBatchBuilder::SimclrBatchBuilder(const Manifest& manifest, AugmentPipeline pipeline,
                                       std::uint64_t global_seed, Split split)
    : pipeline_(std::move(pipeline)),
      global_seed_(global_seed),
      sampler_(1, 0)  // replaced below once items are known
{
    for (const auto& bag : manifest.bags) {
        if (bag.split != split) continue;
        for (std::size_t i = 0; i < bag.image_refs.size(); ++i) {
            items_.push_back({bag.bag_id, i, bag.image_refs[i]});
        }
    }
    check_dim(!items_.empty(), "manifest split has no images");
    sampler_ = EpochSampler(items_.size(), hash_combine(global_seed_, hash_str("simclr_epochs")));
}

PairBatch SimclrBatchBuilder::next(std::size_t num_pairs, ImageCache& cache) {
    check_dim(num_pairs >= 2, "contrastive batches need at least 2 pairs");
    const auto picks = sampler_.next_batch(num_pairs);
    const std::uint64_t epoch = sampler_.epoch();  // after any epoch advance
    PairBatch batch;
    batch.provenance.resize(2 * num_pairs);
    std::vector<Image> views(2 * num_pairs);
    // Decode serially (cache is not thread-safe), augment in parallel.
    std::vector<const Image*> sources(num_pairs);
    for (std::size_t k = 0; k < num_pairs; ++k) sources[k] = &cache.get(items_[picks[k]].path);
    parallel_for(num_pairs, num_pairs * 2000000ull, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
            const auto& item = items_[picks[k]];
            for (std::size_t slot = 0; slot < 2; ++slot) {
                const std::uint64_t seed = derive_seed(global_seed_, epoch, item.bag_id,
                                                       item.image_index, "simclr", slot);
                views[2 * k + slot] = augment_apply(pipeline_, *sources[k], seed);
                batch.provenance[2 * k + slot] = {item.bag_id, item.image_index, seed};
            }
        }
    });
    batch.views = stack_views(std::move(views));
    return batch;
}

MicleBatchBuilder::MicleBatchBuilder(const Manifest& manifest, AugmentPipeline pipeline,
                                     std::uint64_t global_seed, Split split)
    : manifest_copy_(manifest),
      pipeline_(std::move(pipeline)),
      global_seed_(global_seed),
      sampler_(1, 0) {
    for (const auto& bag : manifest_copy_.bags) {
        if (bag.split == split) bags_.push_back(&bag);
    }
    check_dim(!bags_.empty(), "manifest split has no bags");
    sampler_ = EpochSampler(bags_.size(), hash_combine(global_seed_, hash_str("micle_epochs")));
}

PairBatch MicleBatchBuilder::next(std::size_t num_pairs, ImageCache& cache) {
    check_dim(num_pairs >= 2, "contrastive batches need at least 2 pairs");
    const auto picks = sampler_.next_batch(num_pairs);
    const std::uint64_t epoch = sampler_.epoch();  // after any epoch advance
    PairBatch batch;
    batch.provenance.resize(2 * num_pairs);
    std::vector<Image> views(2 * num_pairs);
    struct Pick {
        const Bag* bag;
        std::size_t first;
        std::size_t second;
    };
    std::vector<Pick> chosen(num_pairs);
    for (std::size_t k = 0; k < num_pairs; ++k) {
        const Bag* bag = bags_[picks[k]];
        Rng pick_rng(derive_seed(global_seed_, epoch, bag->bag_id, 0, "micle_pick"));
        const auto [a, b] = micle_select_images(bag->views(), pick_rng);
        chosen[k] = {bag, a, b};
    }
    std::vector<std::pair<const Image*, const Image*>> sources(num_pairs);
    for (std::size_t k = 0; k < num_pairs; ++k) {
        sources[k] = {&cache.get(chosen[k].bag->image_refs[chosen[k].first]),
                      &cache.get(chosen[k].bag->image_refs[chosen[k].second])};
    }
    parallel_for(num_pairs, num_pairs * 2000000ull, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
            const auto& pick = chosen[k];
            const std::size_t idx[2] = {pick.first, pick.second};
            const Image* src[2] = {sources[k].first, sources[k].second};
            for (std::size_t slot = 0; slot < 2; ++slot) {
                const std::uint64_t seed = derive_seed(global_seed_, epoch, pick.bag->bag_id,
                                                       idx[slot], "micle", slot);
                views[2 * k + slot] = augment_apply(pipeline_, *src[slot], seed);
                batch.provenance[2 * k + slot] = {pick.bag->bag_id, idx[slot], seed};
            }
        }
    });
    batch.views = stack_views(std::move(views));
    return batch;
}

std::pair<std::size_t, std::size_t> micle_select_images(std::size_t m, Rng& rng) {
    check_dim(m >= 1, "bag must hold at least one image");
    if (m < 2) return {0, 0};
    // Uniform over ordered pairs of distinct indices, hence uniform over
    // unordered pairs.
    const auto a = static_cast<std::size_t>(rng.below(m));
    auto b = static_cast<std::size_t>(rng.below(m - 1));
    if (b >= a) ++b;
    return {a, b};
}

double nt_xent_oracle(const std::vector<double>& z, std::size_t two_n, std::size_t d,
                      double temperature, double eps) {
    check_dim(z.size() == two_n * d, "oracle input size mismatch");
    check_dim(two_n >= 2 && two_n % 2 == 0, "oracle needs an even row count >= 2");
    // Row-normalize.
    std::vector<double> zn(z.size());
    for (std::size_t i = 0; i < two_n; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += z[i * d + j] * z[i * d + j];
        const double r = std::max(std::sqrt(ss), eps);
        for (std::size_t j = 0; j < d; ++j) zn[i * d + j] = z[i * d + j] / r;
    }
    // Full similarity matrix.
    std::vector<double> sim(two_n * two_n);
    for (std::size_t i = 0; i < two_n; ++i) {
        for (std::size_t j = 0; j < two_n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += zn[i * d + k] * zn[j * d + k];
            sim[i * two_n + j] = s;
        }
    }
    auto loss_term = [&](std::size_t i, std::size_t j) {
        double denom = 0.0;
        for (std::size_t k = 0; k < two_n; ++k) {
            if (k == i) continue;
            denom += std::exp(sim[i * two_n + k] / temperature);
        }
        return -std::log(std::exp(sim[i * two_n + j] / temperature) / denom);
    };
    double total = 0.0;
    const std::size_t n = two_n / 2;
    for (std::size_t k = 0; k < n; ++k) {
        total += loss_term(2 * k, 2 * k + 1) + loss_term(2 * k + 1, 2 * k);
    }
    return total / static_cast<double>(two_n);
}

}  // namespace micle
