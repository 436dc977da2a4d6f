#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "micle/augment.hpp"
#include "micle/data.hpp"
#include "micle/ops.hpp"
#include "micle/rng.hpp"
#include "micle/tensor.hpp"

namespace micle {

struct ViewProvenance {
    std::string bag_id;
    std::size_t image_index = 0;  // index into the bag's image list
    std::uint64_t sample_seed = 0;
};

// Views at 0-indexed positions (2k, 2k+1) form positive pair k. Both members
// come from the same bag; in MICLe mode their image indices differ when the
// bag has two or more images, in SimCLR mode they are equal.
struct PairBatch {
    TensorF views;  // 2N x C x H x W
    std::vector<ViewProvenance> provenance;

    std::size_t num_pairs() const { return provenance.size() / 2; }
};

// Without-replacement iteration over item indices; reshuffles per epoch with
// seed hash(global_seed, epoch) and drops the final incomplete batch.
class EpochSampler {
public:
    EpochSampler(std::size_t count, std::uint64_t global_seed);

    // Indices for the next batch of n (n <= count required).
    std::vector<std::size_t> next_batch(std::size_t n);
    std::uint64_t epoch() const { return epoch_; }

private:
    void reshuffle();

    std::size_t count_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

// SimCLR batches: each sampled image augmented twice. The sampling unit is
// the individual image, flattened across bags.
class SimclrBatchBuilder {
public:
    SimclrBatchBuilder(const Manifest& manifest, AugmentPipeline pipeline,
                       std::uint64_t global_seed, Split split = Split::train);

    PairBatch next(std::size_t num_pairs, ImageCache& cache);
    std::size_t item_count() const { return items_.size(); }
    std::uint64_t epoch() const { return sampler_.epoch(); }

private:
    struct Item {
        std::string bag_id;
        std::size_t image_index;
        std::string path;
    };
    std::vector<Item> items_;
    AugmentPipeline pipeline_;
    std::uint64_t global_seed_;
    EpochSampler sampler_;
};

// MICLe batches: per sampled bag, two distinct images when M >= 2 (uniform
// over unordered pairs), the single image twice when M = 1.
class MicleBatchBuilder {
public:
    MicleBatchBuilder(const Manifest& manifest, AugmentPipeline pipeline,
                      std::uint64_t global_seed, Split split = Split::train);

    PairBatch next(std::size_t num_pairs, ImageCache& cache);
    std::size_t bag_count() const { return bags_.size(); }
    std::uint64_t epoch() const { return sampler_.epoch(); }

private:
    std::vector<const Bag*> bags_;
    Manifest manifest_copy_;  // keeps Bag pointers alive
    AugmentPipeline pipeline_;
    std::uint64_t global_seed_;
    EpochSampler sampler_;
};

// Image pair for a bag of M images: a uniformly random unordered pair of
// distinct indices when M >= 2, the single image twice when M = 1.
std::pair<std::size_t, std::size_t> micle_select_images(std::size_t m, Rng& rng);

struct NTXentConfig {
    double temperature = 0.1;
    double eps = 1e-8;  // l2 normalization guard
};

// Temperature-scaled contrastive loss over a 2N x d embedding batch laid out
// in (2k, 2k+1) pairs. Cosine similarity via row normalization; each row's
// denominator spans all other rows; log-sum-exp uses max subtraction. The
// trainer rejects N=1 batches (no learning signal) but the function itself
// evaluates them (exactly zero).
template <typename T>
Tensor<T> nt_xent_loss(const Tensor<T>& z, const NTXentConfig& cfg) {
    if (!(cfg.temperature > 0.0)) {
        throw ValidationError("temperature must be positive, got " +
                              std::to_string(cfg.temperature));
    }
    check_dim(z.rank() == 2, "nt_xent_loss expects 2N x d embeddings");
    const std::size_t two_n = z.dim(0);
    check_dim(two_n >= 2 && two_n % 2 == 0,
              "nt_xent_loss needs an even number of rows >= 2, got " + std::to_string(two_n));
    for (T v : z.value()) {
        if (!std::isfinite(v)) throw NumericError("nt_xent_loss: non-finite embedding value");
    }
    Tensor<T> zn = l2_normalize(z, static_cast<T>(cfg.eps));
    Tensor<T> logits = scale(matmul_nt(zn, zn), static_cast<T>(1.0 / cfg.temperature));
    std::vector<T> mask(two_n * two_n, T(1));
    for (std::size_t i = 0; i < two_n; ++i) mask[i * two_n + i] = T(0);
    Tensor<T> denom = row_logsumexp_masked(logits, mask);
    std::vector<std::size_t> rows(two_n), cols(two_n);
    for (std::size_t i = 0; i < two_n; ++i) {
        rows[i] = i;
        cols[i] = i ^ 1;  // partner within the pair
    }
    Tensor<T> pos = select_entries(logits, rows, cols);
    Tensor<T> per_view = add(denom, scale(pos, T(-1)));
    // Value-sorted reduction keeps the total bitwise invariant under pair
    // permutations and within-pair swaps.
    return scale(sum_value_sorted(per_view), static_cast<T>(1.0 / static_cast<double>(two_n)));
}

// Direct O((2N)^2 d) float64 evaluation of the same quantity without
// stability tricks. Verification oracle; independent of the autodiff path.
double nt_xent_oracle(const std::vector<double>& z, std::size_t two_n, std::size_t d,
                      double temperature, double eps = 1e-8);

}  // namespace micle
