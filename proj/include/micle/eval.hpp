#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "micle/data.hpp"
#include "micle/model.hpp"

namespace micle {

struct Prediction {
    std::string bag_id;
    std::vector<double> scores;  // length num_classes
    std::size_t label = 0;       // multiclass
    std::vector<int> label_bits;  // multilabel
    std::string group;
};

struct PredictionSet {
    TaskKind task_kind = TaskKind::multiclass;
    std::size_t num_classes = 0;
    std::vector<Prediction> items;
};

// Fraction of examples whose true label is among the k highest scores; ties
// rank the lower class index first.
double topk_accuracy(const PredictionSet& preds, std::size_t k);

struct TopkSensitivityResult {
    std::vector<double> per_class;      // NaN for absent classes
    double macro = 0.0;                 // average over classes with >= 1 example
    std::size_t classes_averaged = 0;
};
TopkSensitivityResult topk_sensitivity(const PredictionSet& preds, std::size_t k);

// Mann-Whitney AUC with half credit for ties, computed exactly: the numerator
// is accumulated in units of half-pairs so sort-based and brute-force
// evaluations produce identical doubles.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MeanAucResult {
    double mean = 0.0;
    std::vector<double> per_class;          // NaN for skipped classes
    std::vector<std::size_t> skipped;       // classes without both label values
};
MeanAucResult mean_auc(const PredictionSet& preds);

using MetricFn = std::function<double(const PredictionSet&)>;

struct BootstrapResult {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t replicates = 0;  // successful replicates
    std::size_t degenerate = 0;  // skipped (metric undefined on the resample)
};

// Percentile bootstrap: resample examples with replacement per replicate; the
// 95% interval takes the order statistics at 0-based positions
// floor(0.025*R) and min(ceil(0.975*R), R-1) of the ascending replicate list.
BootstrapResult bootstrap_ci(const PredictionSet& preds, const MetricFn& metric,
                             std::size_t replicates, std::uint64_t seed);

struct PairedSignificanceResult {
    double delta = 0.0;  // metric(a) - metric(b) on the full sets
    double ci_low = 0.0;
    double ci_high = 0.0;
    bool significant_at_05 = false;
    std::size_t replicates = 0;
    std::size_t degenerate = 0;
};

// Resamples the same example indices for both models per replicate;
// significant when the 95% interval of the delta excludes zero.
PairedSignificanceResult paired_significance(const PredictionSet& a, const PredictionSet& b,
                                             const MetricFn& metric, std::size_t replicates,
                                             std::uint64_t seed);

struct MetricEntry {
    double point = 0.0;
    std::optional<double> ci_low;
    std::optional<double> ci_high;
    std::size_t replicates = 0;
    std::map<std::string, double> per_group;
};

struct MetricsReport {
    std::map<std::string, MetricEntry> metrics;
    std::size_t num_examples = 0;
    nlohmann::json extra;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

// Deterministic inference over one split; multi-image bags are scored by the
// mean of per-image probability vectors.
PredictionSet predict(const Model<float>& model, const Manifest& manifest, Split split);

struct EvalOptions {
    Split split = Split::test;
    std::string group_by;                   // "group" enables the per-group breakdown
    std::size_t repeats = 1;                // re-runs of inference
    std::size_t bootstrap_replicates = 0;   // 0 disables intervals
    std::uint64_t bootstrap_seed = 42;
};

MetricsReport evaluate_predictions(const PredictionSet& preds, const EvalOptions& options);
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const Manifest& manifest,
                                  const EvalOptions& options);

// Named metric for selection/compare: "top1_accuracy", "top3_accuracy",
// "mean_auc", ...
MetricFn metric_by_name(const std::string& name);
// The validation-selection metric per task: top-1 accuracy for multiclass,
// mean AUC for multilabel.
std::string selection_metric_name(TaskKind kind);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace micle
