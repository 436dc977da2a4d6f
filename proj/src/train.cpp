#include "micle/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "micle/augment.hpp"

namespace micle {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

constexpr double kAbortLossThreshold = 1e4;

std::vector<std::uint8_t> rng_state_blob(std::uint64_t seed, std::uint64_t steps_done) {
    // With counter-based seed derivation, (seed, step) is the full RNG state.
    std::vector<std::uint8_t> out(16);
    std::memcpy(out.data(), &seed, 8);
    std::memcpy(out.data() + 8, &steps_done, 8);
    return out;
}

void write_stage_outputs(const StageConfig& cfg, const Checkpoint& ckpt, const TrainLog& log,
                         const std::string& ckpt_name) {
    if (cfg.out_dir.empty()) return;
    fs::create_directories(cfg.out_dir);
    save_checkpoint((fs::path(cfg.out_dir) / ckpt_name).string(), ckpt);
    log.write_csv((fs::path(cfg.out_dir) / "trainlog.csv").string());
    log.write_evals((fs::path(cfg.out_dir) / "evals.jsonl").string());
}

Model<float> init_pretrain_model(const StageConfig& cfg) {
    if (!cfg.init_checkpoint.empty()) {
        Checkpoint init = load_checkpoint(cfg.init_checkpoint);
        if (cfg.stage == StageTag::micle && init.stage == StageTag::finetune) {
            throw ValidationError(
                "micle stage expects an init checkpoint from stage simclr or micle, got '" +
                stage_name(init.stage) + "'");
        }
        Model<float> m = model_from_checkpoint(init);
        check_dim(m.has_projection, "pretraining init checkpoint lacks a projection head");
        return m;
    }
    if (cfg.stage == StageTag::micle && !cfg.from_scratch) {
        throw ValidationError("micle stage requires init_checkpoint or the from-scratch flag");
    }
    return build_encoder(cfg.encoder, cfg.seed);
}

// Contrastive loss on one deterministic validation batch; logged at eval points.
double validation_contrastive_loss(const Manifest& manifest, const StageConfig& cfg,
                                   const AugmentPipeline& pipeline, const Model<float>& model,
                                   ImageCache& cache) {
    std::size_t val_items = 0;
    for (const auto& b : manifest.bags) {
        if (b.split == Split::validation) val_items += b.image_refs.size();
    }
    if (val_items < 2) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = std::min(cfg.batch_size, val_items);
    SimclrBatchBuilder builder(manifest, pipeline, hash_combine(cfg.seed, hash_str("valbatch")),
                               Split::validation);
    PairBatch batch = builder.next(std::max<std::size_t>(2, n), cache);
    TensorF z = model.project(model.encode(batch.views));
    return nt_xent_loss(z, {cfg.temperature, 1e-8}).item();
}

template <typename NextBatch>
PretrainResult pretrain_loop(const StageConfig& cfg, const Manifest& manifest,
                             const AugmentPipeline& pipeline, Model<float> model,
                             ImageCache& cache, NextBatch&& next_batch) {
    check_dim(cfg.batch_size >= 2, "pretraining needs a batch of at least 2 pairs");
    Schedule schedule = cfg.schedule;
    if (schedule.total_steps == 0) {
        schedule.total_steps = std::max<std::size_t>(cfg.steps, 1);
        // default warmup: 5% of total steps
        schedule.warmup_steps = cfg.steps / 20;
    }
    OptimState opt;
    PretrainResult result;
    const NTXentConfig loss_cfg{cfg.temperature, 1e-8};
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double t0 = now_ms();
        PairBatch batch = next_batch();
        TensorF z = model.project(model.encode(batch.views));
        TensorF loss = nt_xent_loss(z, loss_cfg);
        const double loss_v = loss.item();
        if (!std::isfinite(loss_v) || loss_v > kAbortLossThreshold) {
            Checkpoint snap = checkpoint_from_model(model, cfg.stage);
            snap.opt_state = opt.to_blobs();
            snap.rng_state = rng_state_blob(cfg.seed, step);
            write_stage_outputs(cfg, snap, result.log, "diagnostic.mck");
            throw NumericError("training diverged at step " + std::to_string(step) + " (loss " +
                               std::to_string(loss_v) + ")");
        }
        if (step == 0) result.initial_loss = loss_v;
        result.final_loss = loss_v;
        model.params.zero_grad();
        loss.backward();
        const double lr_t = cfg.lars.base_lr * schedule_lr(schedule, step);
        lars_step(model.params, opt, cfg.lars, lr_t);
        result.log.append(step, lr_t, loss_v, now_ms() - t0);
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps) {
            const double val = validation_contrastive_loss(manifest, cfg, pipeline, model, cache);
            json rec;
            rec["val_contrastive_loss"] = val;
            result.log.evals.emplace_back(step + 1, rec);
            Checkpoint mid = checkpoint_from_model(model, cfg.stage);
            mid.opt_state = opt.to_blobs();
            mid.rng_state = rng_state_blob(cfg.seed, step + 1);
            if (!cfg.out_dir.empty()) {
                fs::create_directories(cfg.out_dir);
                save_checkpoint(
                    (fs::path(cfg.out_dir) / ("checkpoint_step" + std::to_string(step + 1) + ".mck"))
                        .string(),
                    mid);
            }
        }
    }
    result.checkpoint = checkpoint_from_model(model, cfg.stage);
    result.checkpoint.opt_state = opt.to_blobs();
    result.checkpoint.rng_state = rng_state_blob(cfg.seed, cfg.steps);
    write_stage_outputs(cfg, result.checkpoint, result.log, "checkpoint.mck");
    return result;
}

}  // namespace

void TrainLog::append(std::size_t step, double lr, double loss, double walltime_ms) {
    if (!rows.empty()) {
        check_dim(step > rows.back().step, "train log steps must be strictly increasing");
    }
    rows.push_back({step, lr, loss, walltime_ms});
}

void TrainLog::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write train log: " + path);
    out << "step,lr,loss,walltime_ms\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.step << "," << r.lr << "," << r.loss << "," << r.walltime_ms << "\n";
    }
}

void TrainLog::write_evals(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write eval log: " + path);
    for (const auto& [step, rec] : evals) {
        json line = rec;
        line["step"] = step;
        out << line.dump() << "\n";
    }
}

PretrainResult pretrain_simclr(const StageConfig& cfg) {
    check_dim(cfg.stage == StageTag::simclr, "pretrain_simclr config must carry stage simclr");
    Manifest manifest = load_manifest(cfg.manifest_path);
    const std::string preset = cfg.preset.empty() ? "derm_pretrain" : cfg.preset;
    AugmentPipeline pipeline =
        preset_build(preset, cfg.encoder.input_height, cfg.encoder.input_width);
    Model<float> model = init_pretrain_model(cfg);
    ImageCache cache;
    SimclrBatchBuilder builder(manifest, pipeline, cfg.seed);
    check_dim(cfg.batch_size <= builder.item_count(),
              "batch of " + std::to_string(cfg.batch_size) + " pairs exceeds the " +
                  std::to_string(builder.item_count()) + " train images");
    return pretrain_loop(cfg, manifest, pipeline, std::move(model), cache,
                         [&]() { return builder.next(cfg.batch_size, cache); });
}

PretrainResult pretrain_micle(const StageConfig& cfg) {
    check_dim(cfg.stage == StageTag::micle, "pretrain_micle config must carry stage micle");
    Manifest manifest = load_manifest(cfg.manifest_path);
    const std::string preset = cfg.preset.empty() ? "micle_partial" : cfg.preset;
    AugmentPipeline pipeline =
        preset_build(preset, cfg.encoder.input_height, cfg.encoder.input_width);
    Model<float> model = init_pretrain_model(cfg);
    ImageCache cache;
    MicleBatchBuilder builder(manifest, pipeline, cfg.seed);
    check_dim(cfg.batch_size <= builder.bag_count(),
              "batch of " + std::to_string(cfg.batch_size) + " bags exceeds the " +
                  std::to_string(builder.bag_count()) + " train bags");
    return pretrain_loop(cfg, manifest, pipeline, std::move(model), cache,
                         [&]() { return builder.next(cfg.batch_size, cache); });
}

namespace {

struct LabeledItem {
    const Bag* bag;
    std::size_t image_index;
};

FinetuneResult finetune_single(const StageConfig& cfg, const Manifest& manifest, double lr,
                               double weight_decay) {
    check_dim(cfg.batch_size >= 1, "fine-tuning needs a positive batch size");
    Model<float> model;
    if (!cfg.init_checkpoint.empty()) {
        Checkpoint init = load_checkpoint(cfg.init_checkpoint);
        Model<float> pre = model_from_checkpoint(init);
        model = attach_classifier(pre, manifest.num_classes(), cfg.seed);
    } else {
        model = attach_classifier(build_encoder(cfg.encoder, cfg.seed), manifest.num_classes(),
                                  cfg.seed);
    }

    std::vector<LabeledItem> items;
    for (const auto& bag : manifest.bags) {
        if (bag.split != Split::train) continue;
        for (std::size_t i = 0; i < bag.image_refs.size(); ++i) items.push_back({&bag, i});
    }
    check_dim(!items.empty(), "no labeled train images");
    const std::size_t batch = std::min(cfg.batch_size, items.size());

    const std::string preset = cfg.preset.empty() ? "finetune" : cfg.preset;
    AugmentPipeline pipeline =
        preset_build(preset, cfg.encoder.input_height, cfg.encoder.input_width);

    EpochSampler sampler(items.size(), hash_combine(cfg.seed, hash_str("finetune_epochs")));
    ImageCache cache;
    OptimState opt;
    Schedule schedule = cfg.schedule;
    if (schedule.total_steps == 0) {
        schedule.total_steps = std::max<std::size_t>(cfg.steps, 1);
        schedule.warmup_steps = 0;
        schedule.kind = ScheduleKind::constant;
    }

    FinetuneResult result;
    const std::string sel_metric = selection_metric_name(manifest.task_kind);
    double best_val = -std::numeric_limits<double>::infinity();
    std::optional<Checkpoint> best_ckpt;

    const std::size_t c_in = cfg.encoder.input_channels;
    const std::size_t h_in = cfg.encoder.input_height;
    const std::size_t w_in = cfg.encoder.input_width;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double t0 = now_ms();
        const auto picks = sampler.next_batch(batch);
        const std::uint64_t epoch = sampler.epoch();  // after any epoch advance
        std::vector<float> data(batch * c_in * h_in * w_in);
        std::vector<std::size_t> labels(batch);
        std::vector<float> targets;
        if (manifest.task_kind == TaskKind::multilabel) {
            targets.resize(batch * manifest.num_classes());
        }
        // Decode serially (the cache is not thread-safe), augment in parallel.
        std::vector<const Image*> sources(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            const auto& item = items[picks[i]];
            sources[i] = &cache.get(item.bag->image_refs[item.image_index]);
            labels[i] = item.bag->label;
            if (manifest.task_kind == TaskKind::multilabel) {
                for (std::size_t c = 0; c < manifest.num_classes(); ++c) {
                    targets[i * manifest.num_classes() + c] =
                        static_cast<float>(item.bag->label_bits[c]);
                }
            }
        }
        parallel_for(batch, batch * 2000000ull, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                const auto& item = items[picks[i]];
                const std::uint64_t seed = derive_seed(cfg.seed, epoch, item.bag->bag_id,
                                                       item.image_index, "finetune", 0);
                Image aug = augment_apply(pipeline, *sources[i], seed);
                std::copy(aug.data.begin(), aug.data.end(), data.begin() + i * c_in * h_in * w_in);
            }
        });
        TensorF x = TensorF::from_data({batch, c_in, h_in, w_in}, std::move(data));
        TensorF logits = model.classify(model.encode(x));
        TensorF loss = manifest.task_kind == TaskKind::multiclass
                           ? softmax_cross_entropy(logits, labels)
                           : sigmoid_bce(logits, targets);
        const double loss_v = loss.item();
        if (!std::isfinite(loss_v) || loss_v > kAbortLossThreshold) {
            throw NumericError("fine-tuning diverged at step " + std::to_string(step) +
                               " (loss " + std::to_string(loss_v) + ")");
        }
        model.params.zero_grad();
        loss.backward();
        const double lr_t = lr * schedule_lr(schedule, step);
        sgd_momentum_step(model.params, opt, lr_t, cfg.sgd_momentum, weight_decay);
        result.log.append(step, lr_t, loss_v, now_ms() - t0);

        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            PredictionSet val = predict(model, manifest, Split::validation);
            MetricsReport rep = evaluate_predictions(val, {});
            const double v = rep.metrics.at(sel_metric).point;
            json rec;
            rec["validation_" + sel_metric] = v;
            result.log.evals.emplace_back(step + 1, rec);
            if (v > best_val) {
                best_val = v;
                best_ckpt = checkpoint_from_model(model, StageTag::finetune);
                best_ckpt->opt_state = opt.to_blobs();
                best_ckpt->rng_state = rng_state_blob(cfg.seed, step + 1);
            }
        }
    }

    Checkpoint final_ckpt = checkpoint_from_model(model, StageTag::finetune);
    final_ckpt.opt_state = opt.to_blobs();
    final_ckpt.rng_state = rng_state_blob(cfg.seed, cfg.steps);
    {
        // Model selection: best validation checkpoint when periodic evaluation
        // ran, else the final one.
        PredictionSet val = predict(model, manifest, Split::validation);
        const double final_val = evaluate_predictions(val, {}).metrics.at(sel_metric).point;
        if (!best_ckpt || final_val > best_val) {
            best_val = final_val;
            best_ckpt = final_ckpt;
        }
    }
    result.checkpoint = *best_ckpt;
    result.selection_value = best_val;

    Model<float> selected = model_from_checkpoint(result.checkpoint);
    result.validation_report =
        evaluate_predictions(predict(selected, manifest, Split::validation), {});
    result.test_report = evaluate_predictions(predict(selected, manifest, Split::test), {});
    result.chosen = {lr, weight_decay};
    return result;
}

}  // namespace

FinetuneResult finetune(const StageConfig& cfg) {
    check_dim(cfg.stage == StageTag::finetune, "finetune config must carry stage finetune");
    Manifest manifest = load_manifest(cfg.manifest_path);
    if (cfg.label_fraction < 1.0) {
        manifest = subset_by_fraction(manifest, cfg.label_fraction, cfg.seed);
    } else if (!(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0)) {
        throw UsageError("label fraction must be in (0,1], got " +
                         std::to_string(cfg.label_fraction));
    }

    FinetuneResult best;
    if (cfg.sweep) {
        bool have = false;
        for (const auto& point : build_sweep()) {
            StageConfig sub = cfg;
            sub.sweep = false;
            sub.out_dir.clear();
            FinetuneResult r;
            try {
                r = finetune_single(sub, manifest, point.lr, point.weight_decay);
            } catch (const NumericError&) {
                continue;  // diverged grid points are skipped, not fatal
            }
            if (!have || r.selection_value > best.selection_value) {
                best = std::move(r);
                have = true;
            }
        }
        if (!have) throw NumericError("every sweep point diverged");
    } else {
        best = finetune_single(cfg, manifest, cfg.sgd_lr, cfg.sgd_weight_decay);
    }

    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.mck").string(), best.checkpoint);
        best.log.write_csv((fs::path(cfg.out_dir) / "trainlog.csv").string());
        best.log.write_evals((fs::path(cfg.out_dir) / "evals.jsonl").string());
        std::ofstream rep((fs::path(cfg.out_dir) / "metrics.json").string(), std::ios::trunc);
        json j;
        j["validation"] = best.validation_report.to_json();
        j["test"] = best.test_report.to_json();
        j["chosen_lr"] = best.chosen.lr;
        j["chosen_weight_decay"] = best.chosen.weight_decay;
        rep << j.dump(2) << "\n";
    }
    return best;
}

double multiview_alignment(const Model<float>& model, const Manifest& manifest, Split split) {
    const auto bags = manifest.split_bags(split);
    const std::size_t c_in = model.config.input_channels;
    const std::size_t h_in = model.config.input_height;
    const std::size_t w_in = model.config.input_width;
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto* bag : bags) {
        const std::size_t m = bag->views();
        if (m < 2) continue;
        std::vector<float> data(m * c_in * h_in * w_in);
        for (std::size_t i = 0; i < m; ++i) {
            Image img = decode_image(bag->image_refs[i]);
            if (img.height != h_in || img.width != w_in) img = resize_bilinear(img, h_in, w_in);
            std::copy(img.data.begin(), img.data.end(), data.begin() + i * c_in * h_in * w_in);
        }
        TensorF h = model.encode(TensorF::from_data({m, c_in, h_in, w_in}, std::move(data)));
        const std::size_t d = h.dim(1);
        // mean pairwise cosine distance within the bag
        double bag_sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = i + 1; j < m; ++j) {
                double dot = 0, ni = 0, nj = 0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double a = h.value()[i * d + k];
                    const double b = h.value()[j * d + k];
                    dot += a * b;
                    ni += a * a;
                    nj += b * b;
                }
                const double denom = std::sqrt(ni) * std::sqrt(nj);
                bag_sum += denom > 0 ? 1.0 - dot / denom : 1.0;
                ++pairs;
            }
        }
        total += bag_sum / static_cast<double>(pairs);
        ++counted;
    }
    check_dim(counted > 0, "no multi-image bags in split");
    return total / static_cast<double>(counted);
}

std::vector<LabelEfficiencyRow> label_efficiency_sweep(
    const StageConfig& base, const std::vector<std::pair<std::string, std::string>>& inits,
    const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds) {
    check_dim(!inits.empty() && !fractions.empty() && !seeds.empty(),
              "label efficiency sweep needs inits, fractions, and seeds");
    for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) {
            throw UsageError("label fraction must be in (0,1], got " + std::to_string(f));
        }
    }
    std::vector<LabelEfficiencyRow> rows;
    for (const auto& [init_name, init_path] : inits) {
        for (double fraction : fractions) {
            for (std::uint64_t seed : seeds) {
                StageConfig cfg = base;
                cfg.stage = StageTag::finetune;
                cfg.init_checkpoint = init_path;
                cfg.label_fraction = fraction;
                cfg.seed = seed;
                cfg.out_dir.clear();
                cfg.sweep = false;
                FinetuneResult r = finetune(cfg);
                for (const auto& [metric, entry] : r.test_report.metrics) {
                    rows.push_back({init_name, fraction, seed, metric, entry.point});
                }
            }
        }
    }
    return rows;
}

void write_curve_csv(const std::string& path, const std::vector<LabelEfficiencyRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write curve CSV: " + path);
    out << "init,fraction,seed,metric,value\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.init << "," << r.fraction << "," << r.seed << "," << r.metric << "," << r.value
            << "\n";
    }
}

}  // namespace micle
