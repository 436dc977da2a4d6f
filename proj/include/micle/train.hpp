#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "micle/contrastive.hpp"
#include "micle/eval.hpp"
#include "micle/model.hpp"
#include "micle/optim.hpp"

namespace micle {

// One training stage. Desk-scale defaults; the paper-scale step counts
// (150k / 100k / 30k) stay available through config files.
struct StageConfig {
    StageTag stage = StageTag::simclr;
    std::string manifest_path;
    std::string preset;  // augmentation preset; empty -> stage default
    std::size_t steps = 2000;
    std::size_t batch_size = 64;  // pairs for pretraining, images for fine-tuning
    double temperature = 0.1;
    LarsConfig lars;  // pretraining optimizer
    double sgd_lr = 0.03;
    double sgd_momentum = 0.9;
    double sgd_weight_decay = 0.0;
    Schedule schedule{0, 0, ScheduleKind::warmup_cosine};  // total filled from steps when 0
    std::string init_checkpoint;
    bool from_scratch = false;  // allow a MICLe stage without an init checkpoint
    std::size_t eval_every = 0;  // 0 = final evaluation only
    std::uint64_t seed = 42;
    std::string out_dir;  // empty = no files written
    EncoderConfig encoder;
    double label_fraction = 1.0;  // fine-tuning
    bool sweep = false;           // fine-tuning hyperparameter grid
};

struct TrainLog {
    struct Row {
        std::size_t step;
        double lr;
        double loss;
        double walltime_ms;
    };
    std::vector<Row> rows;
    std::vector<std::pair<std::size_t, nlohmann::json>> evals;

    void append(std::size_t step, double lr, double loss, double walltime_ms);
    // CSV `step,lr,loss,walltime_ms`; loss printed with max round-trip
    // precision so logs are reproducible bit-for-bit apart from walltime.
    void write_csv(const std::string& path) const;
    void write_evals(const std::string& path) const;
};

struct PretrainResult {
    Checkpoint checkpoint;
    TrainLog log;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Stage 1: SimCLR over train-split images, labels ignored.
PretrainResult pretrain_simclr(const StageConfig& cfg);

// Stage 2: multi-instance pairs, initialized from a stage-1 (or stage-2)
// checkpoint unless from_scratch is set.
PretrainResult pretrain_micle(const StageConfig& cfg);

struct FinetuneResult {
    Checkpoint checkpoint;
    TrainLog log;
    MetricsReport validation_report;
    MetricsReport test_report;
    double selection_value = 0.0;  // validation selection metric of the kept model
    SweepPoint chosen{0.0, 0.0};
};

// Stage 3: classifier head on h, SGD momentum 0.9. With sweep=true runs the
// 28-point grid and keeps the best validation selection metric.
FinetuneResult finetune(const StageConfig& cfg);

// Mean cosine distance between embeddings h of images in the same bag,
// averaged over bags with two or more images in the split.
double multiview_alignment(const Model<float>& model, const Manifest& manifest, Split split);

struct LabelEfficiencyRow {
    std::string init;
    double fraction;
    std::uint64_t seed;
    std::string metric;
    double value;
};

// For each (init checkpoint, fraction, seed): fine-tune and evaluate on test.
// inits maps a name to a checkpoint path; empty path = random initialization.
std::vector<LabelEfficiencyRow> label_efficiency_sweep(
    const StageConfig& base, const std::vector<std::pair<std::string, std::string>>& inits,
    const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds);

void write_curve_csv(const std::string& path, const std::vector<LabelEfficiencyRow>& rows);

}  // namespace micle
