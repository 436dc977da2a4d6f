#include "micle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "micle/augment.hpp"
#include "micle/rng.hpp"

namespace micle {

using nlohmann::json;

namespace {

// Class order of one prediction row: descending score, lower index first on ties.
std::vector<std::size_t> ranked_classes(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

bool in_topk(const Prediction& p, std::size_t k) {
    const auto order = ranked_classes(p.scores);
    for (std::size_t i = 0; i < k; ++i) {
        if (order[i] == p.label) return true;
    }
    return false;
}

}  // namespace

double topk_accuracy(const PredictionSet& preds, std::size_t k) {
    check_dim(preds.task_kind == TaskKind::multiclass, "topk_accuracy needs multiclass scores");
    if (preds.items.empty()) throw UndefinedMetricError("topk_accuracy on empty prediction set");
    if (k == 0 || k > preds.num_classes) {
        throw UsageError("top-k with k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(preds.num_classes) + "]");
    }
    std::size_t hits = 0;
    for (const auto& p : preds.items) {
        if (in_topk(p, k)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.items.size());
}

TopkSensitivityResult topk_sensitivity(const PredictionSet& preds, std::size_t k) {
    check_dim(preds.task_kind == TaskKind::multiclass, "topk_sensitivity needs multiclass scores");
    if (preds.items.empty()) {
        throw UndefinedMetricError("topk_sensitivity on empty prediction set");
    }
    std::vector<std::size_t> total(preds.num_classes, 0), hit(preds.num_classes, 0);
    for (const auto& p : preds.items) {
        ++total[p.label];
        if (in_topk(p, k)) ++hit[p.label];
    }
    TopkSensitivityResult out;
    out.per_class.assign(preds.num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    for (std::size_t c = 0; c < preds.num_classes; ++c) {
        if (total[c] == 0) continue;  // absent classes are excluded from the macro average
        out.per_class[c] = static_cast<double>(hit[c]) / static_cast<double>(total[c]);
        sum += out.per_class[c];
        ++out.classes_averaged;
    }
    if (out.classes_averaged == 0) throw UndefinedMetricError("no class present in predictions");
    out.macro = sum / static_cast<double>(out.classes_averaged);
    return out;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_dim(scores.size() == labels.size(), "roc_auc input length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedMetricError("roc_auc undefined: needs both a positive and a negative");
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Walk ascending score groups; count strict wins and ties in half-pair
    // units so the result is exact.
    std::uint64_t half_pairs = 0;  // 2*wins + ties
    std::uint64_t neg_below = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        std::uint64_t pos_here = 0, neg_here = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? pos_here : neg_here)++;
            ++j;
        }
        half_pairs += 2 * pos_here * neg_below + pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    return static_cast<double>(half_pairs) /
           (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MeanAucResult mean_auc(const PredictionSet& preds) {
    check_dim(preds.task_kind == TaskKind::multilabel, "mean_auc needs multilabel predictions");
    if (preds.items.empty()) throw UndefinedMetricError("mean_auc on empty prediction set");
    MeanAucResult out;
    out.per_class.assign(preds.num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < preds.num_classes; ++c) {
        std::vector<double> scores;
        std::vector<int> labels;
        scores.reserve(preds.items.size());
        labels.reserve(preds.items.size());
        for (const auto& p : preds.items) {
            scores.push_back(p.scores[c]);
            labels.push_back(p.label_bits[c]);
        }
        try {
            out.per_class[c] = roc_auc(scores, labels);
            sum += out.per_class[c];
            ++used;
        } catch (const UndefinedMetricError&) {
            out.skipped.push_back(c);
        }
    }
    if (used == 0) throw UndefinedMetricError("mean_auc: every class is degenerate");
    out.mean = sum / static_cast<double>(used);
    return out;
}

namespace {

struct PercentileInterval {
    double lo, hi;
};

// 0-based order statistics at floor(0.025*R) and min(ceil(0.975*R), R-1).
PercentileInterval percentile_95(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t r = values.size();
    const auto lo_idx = static_cast<std::size_t>(std::floor(0.025 * static_cast<double>(r)));
    auto hi_idx = static_cast<std::size_t>(std::ceil(0.975 * static_cast<double>(r)));
    if (hi_idx >= r) hi_idx = r - 1;
    return {values[lo_idx], values[hi_idx]};
}

PredictionSet resample(const PredictionSet& preds, const std::vector<std::size_t>& indices) {
    PredictionSet out;
    out.task_kind = preds.task_kind;
    out.num_classes = preds.num_classes;
    out.items.reserve(indices.size());
    for (std::size_t i : indices) out.items.push_back(preds.items[i]);
    return out;
}

std::vector<std::size_t> replicate_indices(std::size_t n, std::uint64_t seed,
                                           std::size_t replicate) {
    Rng rng(hash_combine(seed, replicate));
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = static_cast<std::size_t>(rng.below(n));
    return idx;
}

}  // namespace

BootstrapResult bootstrap_ci(const PredictionSet& preds, const MetricFn& metric,
                             std::size_t replicates, std::uint64_t seed) {
    check_dim(!preds.items.empty(), "bootstrap over empty prediction set");
    check_dim(replicates >= 1, "bootstrap needs at least one replicate");
    BootstrapResult out;
    out.point = metric(preds);
    std::vector<double> values;
    values.reserve(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
        const auto idx = replicate_indices(preds.items.size(), seed, r);
        try {
            values.push_back(metric(resample(preds, idx)));
        } catch (const UndefinedMetricError&) {
            ++out.degenerate;
        }
    }
    if (out.degenerate * 2 > replicates) {
        throw NumericError("bootstrap degenerate on " + std::to_string(out.degenerate) + " of " +
                           std::to_string(replicates) + " replicates");
    }
    out.replicates = values.size();
    const auto ci = percentile_95(std::move(values));
    out.ci_low = ci.lo;
    out.ci_high = ci.hi;
    return out;
}

PairedSignificanceResult paired_significance(const PredictionSet& a, const PredictionSet& b,
                                             const MetricFn& metric, std::size_t replicates,
                                             std::uint64_t seed) {
    check_dim(a.items.size() == b.items.size(), "paired_significance: prediction counts differ");
    for (std::size_t i = 0; i < a.items.size(); ++i) {
        if (a.items[i].bag_id != b.items[i].bag_id) {
            throw ValidationError("paired_significance: bag_id mismatch at index " +
                                  std::to_string(i) + " ('" + a.items[i].bag_id + "' vs '" +
                                  b.items[i].bag_id + "')");
        }
    }
    PairedSignificanceResult out;
    out.delta = metric(a) - metric(b);
    std::vector<double> deltas;
    deltas.reserve(replicates);
    for (std::size_t r = 0; r < replicates; ++r) {
        const auto idx = replicate_indices(a.items.size(), seed, r);
        try {
            deltas.push_back(metric(resample(a, idx)) - metric(resample(b, idx)));
        } catch (const UndefinedMetricError&) {
            ++out.degenerate;
        }
    }
    if (out.degenerate * 2 > replicates) {
        throw NumericError("paired bootstrap degenerate on most replicates");
    }
    out.replicates = deltas.size();
    const auto ci = percentile_95(std::move(deltas));
    out.ci_low = ci.lo;
    out.ci_high = ci.hi;
    out.significant_at_05 = (ci.lo > 0.0 || ci.hi < 0.0);
    return out;
}

json MetricsReport::to_json() const {
    json j;
    j["num_examples"] = num_examples;
    json ms = json::object();
    for (const auto& [name, e] : metrics) {
        json me;
        me["point"] = e.point;
        if (e.ci_low) me["ci_low"] = *e.ci_low;
        if (e.ci_high) me["ci_high"] = *e.ci_high;
        if (e.replicates) me["replicates"] = e.replicates;
        if (!e.per_group.empty()) me["per_group"] = e.per_group;
        ms[name] = me;
    }
    j["metrics"] = ms;
    if (!extra.is_null()) j["extra"] = extra;
    return j;
}

MetricsReport MetricsReport::from_json(const json& j) {
    MetricsReport r;
    r.num_examples = j.at("num_examples").get<std::size_t>();
    for (const auto& [name, me] : j.at("metrics").items()) {
        MetricEntry e;
        e.point = me.at("point").get<double>();
        if (me.contains("ci_low")) e.ci_low = me.at("ci_low").get<double>();
        if (me.contains("ci_high")) e.ci_high = me.at("ci_high").get<double>();
        if (me.contains("replicates")) e.replicates = me.at("replicates").get<std::size_t>();
        if (me.contains("per_group")) {
            e.per_group = me.at("per_group").get<std::map<std::string, double>>();
        }
        r.metrics[name] = e;
    }
    if (j.contains("extra")) r.extra = j.at("extra");
    return r;
}

PredictionSet predict(const Model<float>& model, const Manifest& manifest, Split split) {
    check_dim(model.has_classifier, "predict requires a classifier head");
    if (model.num_classes != manifest.num_classes()) {
        throw ValidationError("class-count mismatch: checkpoint has " +
                              std::to_string(model.num_classes) + ", manifest has " +
                              std::to_string(manifest.num_classes()));
    }
    const auto bags = manifest.split_bags(split);
    check_dim(!bags.empty(), "manifest split '" + split_name(split) + "' is empty");

    PredictionSet preds;
    preds.task_kind = manifest.task_kind;
    preds.num_classes = manifest.num_classes();

    const std::size_t in_c = model.config.input_channels;
    const std::size_t in_h = model.config.input_height;
    const std::size_t in_w = model.config.input_width;

    // Flatten (bag, image) pairs, run in chunks, average per bag.
    struct Ref {
        std::size_t bag;
        const std::string* path;
    };
    std::vector<Ref> refs;
    for (std::size_t b = 0; b < bags.size(); ++b) {
        for (const auto& p : bags[b]->image_refs) refs.push_back({b, &p});
    }
    std::vector<std::vector<double>> bag_scores(bags.size(),
                                                std::vector<double>(preds.num_classes, 0.0));

    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < refs.size(); start += chunk) {
        const std::size_t count = std::min(chunk, refs.size() - start);
        std::vector<float> data(count * in_c * in_h * in_w);
        for (std::size_t i = 0; i < count; ++i) {
            Image img = decode_image(*refs[start + i].path);
            check_dim(img.channels == in_c, "image channel count mismatch at inference");
            if (img.height != in_h || img.width != in_w) {
                img = resize_bilinear(img, in_h, in_w);
            }
            std::copy(img.data.begin(), img.data.end(), data.begin() + i * in_c * in_h * in_w);
        }
        TensorF x = TensorF::from_data({count, in_c, in_h, in_w}, std::move(data));
        TensorF logits = model.classify(model.encode(x));
        const std::vector<float> prob =
            manifest.task_kind == TaskKind::multiclass
                ? softmax_rows(logits.value(), count, preds.num_classes)
                : sigmoid_rows(logits.value());
        for (std::size_t i = 0; i < count; ++i) {
            auto& acc = bag_scores[refs[start + i].bag];
            for (std::size_t c = 0; c < preds.num_classes; ++c) {
                acc[c] += prob[i * preds.num_classes + c];
            }
        }
    }
    for (std::size_t b = 0; b < bags.size(); ++b) {
        Prediction p;
        p.bag_id = bags[b]->bag_id;
        p.label = bags[b]->label;
        p.label_bits = bags[b]->label_bits;
        p.group = bags[b]->group;
        p.scores.resize(preds.num_classes);
        const double m = static_cast<double>(bags[b]->views());
        for (std::size_t c = 0; c < preds.num_classes; ++c) p.scores[c] = bag_scores[b][c] / m;
        preds.items.push_back(std::move(p));
    }
    return preds;
}

namespace {

void add_metric(MetricsReport& report, const PredictionSet& preds, const EvalOptions& options,
                const std::string& name, const MetricFn& fn) {
    MetricEntry e;
    if (options.bootstrap_replicates > 0) {
        const auto b = bootstrap_ci(preds, fn, options.bootstrap_replicates,
                                    options.bootstrap_seed);
        e.point = b.point;
        e.ci_low = b.ci_low;
        e.ci_high = b.ci_high;
        e.replicates = b.replicates;
    } else {
        e.point = fn(preds);
    }
    if (!options.group_by.empty()) {
        std::map<std::string, PredictionSet> groups;
        for (const auto& p : preds.items) {
            auto& g = groups[p.group.empty() ? "(none)" : p.group];
            g.task_kind = preds.task_kind;
            g.num_classes = preds.num_classes;
            g.items.push_back(p);
        }
        for (const auto& [gname, gpreds] : groups) {
            try {
                e.per_group[gname] = fn(gpreds);
            } catch (const UndefinedMetricError&) {
                // group too small for this metric; omitted from the breakdown
            }
        }
    }
    report.metrics[name] = std::move(e);
}

}  // namespace

MetricsReport evaluate_predictions(const PredictionSet& preds, const EvalOptions& options) {
    MetricsReport report;
    report.num_examples = preds.items.size();
    if (preds.task_kind == TaskKind::multiclass) {
        add_metric(report, preds, options, "top1_accuracy",
                   [](const PredictionSet& p) { return topk_accuracy(p, 1); });
        const std::size_t k3 = std::min<std::size_t>(3, preds.num_classes);
        add_metric(report, preds, options, "top3_accuracy",
                   [k3](const PredictionSet& p) { return topk_accuracy(p, k3); });
        add_metric(report, preds, options, "top1_sensitivity",
                   [](const PredictionSet& p) { return topk_sensitivity(p, 1).macro; });
        add_metric(report, preds, options, "top3_sensitivity",
                   [k3](const PredictionSet& p) { return topk_sensitivity(p, k3).macro; });
        // One-vs-rest macro AUC.
        add_metric(report, preds, options, "auc_macro", [](const PredictionSet& p) {
            double sum = 0.0;
            std::size_t used = 0;
            for (std::size_t c = 0; c < p.num_classes; ++c) {
                std::vector<double> scores;
                std::vector<int> labels;
                for (const auto& item : p.items) {
                    scores.push_back(item.scores[c]);
                    labels.push_back(item.label == c ? 1 : 0);
                }
                try {
                    sum += roc_auc(scores, labels);
                    ++used;
                } catch (const UndefinedMetricError&) {
                }
            }
            if (used == 0) throw UndefinedMetricError("auc_macro: all classes degenerate");
            return sum / static_cast<double>(used);
        });
    } else {
        add_metric(report, preds, options, "mean_auc",
                   [](const PredictionSet& p) { return mean_auc(p).mean; });
        const auto detail = mean_auc(preds);
        report.extra["auc_skipped_classes"] = detail.skipped;
        for (std::size_t c = 0; c < preds.num_classes; ++c) {
            if (std::isnan(detail.per_class[c])) continue;
            MetricEntry e;
            e.point = detail.per_class[c];
            report.metrics["auc_class_" + std::to_string(c)] = e;
        }
    }
    return report;
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const Manifest& manifest,
                                  const EvalOptions& options) {
    if (ckpt.stage != StageTag::finetune) {
        throw ValidationError("evaluate_checkpoint requires a finetune-stage checkpoint, got '" +
                              stage_name(ckpt.stage) + "'");
    }
    Model<float> model = model_from_checkpoint(ckpt);
    check_dim(options.repeats >= 1, "repeats must be >= 1");
    PredictionSet preds = predict(model, manifest, options.split);
    double repeat_max_diff = 0.0;
    for (std::size_t r = 1; r < options.repeats; ++r) {
        PredictionSet again = predict(model, manifest, options.split);
        for (std::size_t i = 0; i < preds.items.size(); ++i) {
            for (std::size_t c = 0; c < preds.num_classes; ++c) {
                repeat_max_diff = std::max(repeat_max_diff,
                                           std::abs(preds.items[i].scores[c] -
                                                    again.items[i].scores[c]));
            }
        }
        preds = std::move(again);
    }
    MetricsReport report = evaluate_predictions(preds, options);
    report.extra["split"] = split_name(options.split);
    report.extra["repeats"] = options.repeats;
    if (options.repeats > 1) report.extra["repeat_max_score_diff"] = repeat_max_diff;
    return report;
}

MetricFn metric_by_name(const std::string& name) {
    if (name == "top1_accuracy") {
        return [](const PredictionSet& p) { return topk_accuracy(p, 1); };
    }
    if (name == "top3_accuracy") {
        return [](const PredictionSet& p) {
            return topk_accuracy(p, std::min<std::size_t>(3, p.num_classes));
        };
    }
    if (name == "top1_sensitivity") {
        return [](const PredictionSet& p) { return topk_sensitivity(p, 1).macro; };
    }
    if (name == "mean_auc") {
        return [](const PredictionSet& p) { return mean_auc(p).mean; };
    }
    throw UsageError("unknown metric: " + name);
}

std::string selection_metric_name(TaskKind kind) {
    return kind == TaskKind::multiclass ? "top1_accuracy" : "mean_auc";
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    check_dim(xs.size() == ys.size() && xs.size() >= 2, "spearman needs paired samples");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
            for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
            i = j;
        }
        return r;
    };
    const auto rx = ranks(xs);
    const auto ry = ranks(ys);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) throw UndefinedMetricError("spearman undefined: constant ranks");
    return cov / std::sqrt(vx * vy);
}

}  // namespace micle
