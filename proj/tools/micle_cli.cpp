#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "micle/config.hpp"
#include "micle/contrastive.hpp"
#include "micle/data.hpp"
#include "micle/eval.hpp"
#include "micle/train.hpp"
#include "micle/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// exit codes: 0 ok, 1 usage, 2 validation, 3 numeric/divergence
constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kNumeric = 3;

void print_metrics_table(const micle::MetricsReport& report) {
    std::printf("%-24s %12s %12s %12s\n", "metric", "point", "ci_low", "ci_high");
    for (const auto& [name, e] : report.metrics) {
        if (e.ci_low && e.ci_high) {
            std::printf("%-24s %12.4f %12.4f %12.4f\n", name.c_str(), e.point, *e.ci_low,
                        *e.ci_high);
        } else {
            std::printf("%-24s %12.4f %12s %12s\n", name.c_str(), e.point, "-", "-");
        }
        for (const auto& [group, value] : e.per_group) {
            std::printf("  %-22s %12.4f\n", (name + "[" + group + "]").c_str(), value);
        }
    }
}

// Flag overrides are merged into the document before resolution so
// stage-dependent defaults and the echoed config both see them.
micle::RunConfig load_config_with_overrides(const std::string& path, const std::string& stage,
                                            std::optional<std::uint64_t> seed,
                                            std::optional<std::string> init,
                                            std::optional<double> fraction, bool sweep,
                                            std::optional<std::string> out_dir) {
    std::ifstream in(path);
    if (!in) throw micle::UsageError("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw micle::ValidationError("config parse error in " + path + ": " + e.what());
    }
    doc["stage"]["stage"] = stage;
    if (seed) doc["seed"] = *seed;
    if (init) doc["stage"]["init_checkpoint"] = *init;
    if (fraction) {
        if (!(*fraction > 0.0 && *fraction <= 1.0)) {
            throw micle::UsageError("--fraction must be in (0,1], got " +
                                    std::to_string(*fraction));
        }
        doc["data"]["label_fraction"] = *fraction;
    }
    if (sweep) doc["stage"]["sweep"] = true;
    if (out_dir) doc["out_dir"] = *out_dir;
    micle::RunConfig cfg = micle::parse_run_config(doc);
    micle::echo_resolved_config(cfg);
    return cfg;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-instance contrastive pretraining and evaluation"};
    app.require_subcommand(1);

    // gencorpus
    auto* gen = app.add_subcommand("gencorpus", "render a synthetic multi-view corpus");
    std::string gen_spec_path, gen_out;
    gen->add_option("--spec", gen_spec_path, "corpus spec JSON");
    gen->add_option("--out", gen_out, "output directory")->required();

    // pretrain / micle / finetune share a config file
    std::string cfg_path, init_ckpt, out_dir_flag;
    std::uint64_t seed_flag = 0;
    bool seed_given = false;
    double fraction_flag = 1.0;
    bool fraction_given = false;
    bool sweep_flag = false;

    auto add_common = [&](CLI::App* sub, bool with_init) {
        sub->add_option("--config", cfg_path, "run config JSON")->required();
        sub->add_option_function<std::uint64_t>(
               "--seed", [&](std::uint64_t v) { seed_flag = v; seed_given = true; },
               "override the config seed");
        sub->add_option("--out", out_dir_flag, "override the output directory");
        if (with_init) sub->add_option("--init", init_ckpt, "initial checkpoint");
    };

    auto* pre = app.add_subcommand("pretrain", "stage 1: contrastive pretraining");
    add_common(pre, true);
    auto* mic = app.add_subcommand("micle", "stage 2: multi-instance pretraining");
    add_common(mic, true);
    auto* fin = app.add_subcommand("finetune", "stage 3: supervised fine-tuning");
    add_common(fin, true);
    fin->add_option_function<double>(
        "--fraction", [&](double v) { fraction_flag = v; fraction_given = true; },
        "label fraction in (0,1]");
    fin->add_flag("--sweep", sweep_flag, "run the 28-point lr/weight-decay grid");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint on a manifest");
    std::string ev_ckpt, ev_manifest, ev_group_by, ev_split = "test", ev_out;
    std::size_t ev_bootstrap = 0, ev_repeats = 1;
    std::uint64_t ev_seed = 42;
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--manifest", ev_manifest)->required();
    ev->add_option("--split", ev_split, "train|validation|test (default test)");
    ev->add_option("--group-by", ev_group_by, "per-group breakdown column (group)");
    ev->add_option("--bootstrap", ev_bootstrap, "bootstrap replicate count (0 = off)");
    ev->add_option("--bootstrap-seed", ev_seed);
    ev->add_option("--repeats", ev_repeats, "inference repetitions");
    ev->add_option("--out", ev_out, "write the MetricsReport JSON here");

    // compare
    auto* cmp = app.add_subcommand("compare", "paired bootstrap significance of two checkpoints");
    std::string cmp_a, cmp_b, cmp_manifest, cmp_metric = "top1_accuracy", cmp_split = "test",
                cmp_out;
    std::size_t cmp_replicates = 1000;
    std::uint64_t cmp_seed = 42;
    cmp->add_option("--ckpt-a", cmp_a)->required();
    cmp->add_option("--ckpt-b", cmp_b)->required();
    cmp->add_option("--manifest", cmp_manifest)->required();
    cmp->add_option("--metric", cmp_metric);
    cmp->add_option("--split", cmp_split);
    cmp->add_option("--replicates", cmp_replicates);
    cmp->add_option("--seed", cmp_seed);
    cmp->add_option("--out", cmp_out, "write the comparison JSON here");

    // sweep-labels
    auto* swl = app.add_subcommand("sweep-labels", "label-efficiency curves");
    std::string swl_inits, swl_fractions = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
                swl_seeds = "42", swl_out;
    swl->add_option("--config", cfg_path, "run config JSON")->required();
    swl->add_option("--inits", swl_inits,
                    "comma list of name=ckpt (name=random for no init)")
        ->required();
    swl->add_option("--fractions", swl_fractions, "comma list of label fractions");
    swl->add_option("--seeds", swl_seeds, "comma list of fine-tuning seeds");
    swl->add_option("--out", swl_out, "curve CSV path")->required();

    // verify
    auto* ver = app.add_subcommand("verify", "run the oracle/gradient/property suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return kUsage;
    }

    try {
        if (gen->parsed()) {
            json spec_doc = json::object();
            if (!gen_spec_path.empty()) {
                std::ifstream in(gen_spec_path);
                if (!in) throw micle::UsageError("cannot open corpus spec: " + gen_spec_path);
                spec_doc = json::parse(in);
            }
            micle::CorpusSpec spec = micle::parse_corpus_spec(spec_doc, gen_out);
            micle::Manifest manifest = micle::generate_synthetic_corpus(spec);
            std::printf("corpus: %zu bags, %zu classes -> %s\n", manifest.bags.size(),
                        manifest.num_classes(), gen_out.c_str());
            return 0;
        }

        auto seed_opt = seed_given ? std::optional<std::uint64_t>(seed_flag) : std::nullopt;
        auto init_opt = init_ckpt.empty() ? std::nullopt : std::optional<std::string>(init_ckpt);
        auto out_opt =
            out_dir_flag.empty() ? std::nullopt : std::optional<std::string>(out_dir_flag);
        auto frac_opt = fraction_given ? std::optional<double>(fraction_flag) : std::nullopt;

        if (pre->parsed()) {
            micle::RunConfig cfg = load_config_with_overrides(cfg_path, "simclr", seed_opt,
                                                              init_opt, std::nullopt, false,
                                                              out_opt);
            micle::PretrainResult r = micle::pretrain_simclr(cfg.stage_config);
            std::printf("simclr pretraining: %zu steps, loss %.4f -> %.4f\n",
                        cfg.stage_config.steps, r.initial_loss, r.final_loss);
            std::printf("checkpoint: %s\n",
                        (fs::path(cfg.out_dir) / "checkpoint.mck").string().c_str());
            return 0;
        }
        if (mic->parsed()) {
            micle::RunConfig cfg = load_config_with_overrides(cfg_path, "micle", seed_opt,
                                                              init_opt, std::nullopt, false,
                                                              out_opt);
            micle::PretrainResult r = micle::pretrain_micle(cfg.stage_config);
            std::printf("micle pretraining: %zu steps, loss %.4f -> %.4f\n",
                        cfg.stage_config.steps, r.initial_loss, r.final_loss);
            std::printf("checkpoint: %s\n",
                        (fs::path(cfg.out_dir) / "checkpoint.mck").string().c_str());
            return 0;
        }
        if (fin->parsed()) {
            micle::RunConfig cfg = load_config_with_overrides(cfg_path, "finetune", seed_opt,
                                                              init_opt, frac_opt, sweep_flag,
                                                              out_opt);
            micle::FinetuneResult r = micle::finetune(cfg.stage_config);
            std::printf("fine-tuning done (lr %.5g, wd %.5g); validation selection %.4f\n",
                        r.chosen.lr, r.chosen.weight_decay, r.selection_value);
            std::printf("validation:\n");
            print_metrics_table(r.validation_report);
            std::printf("test:\n");
            print_metrics_table(r.test_report);
            return 0;
        }
        if (ev->parsed()) {
            micle::Checkpoint ckpt = micle::load_checkpoint(ev_ckpt);
            micle::Manifest manifest = micle::load_manifest(ev_manifest);
            micle::EvalOptions options;
            options.split = micle::split_from_name(ev_split);
            options.group_by = ev_group_by;
            options.repeats = ev_repeats;
            options.bootstrap_replicates = ev_bootstrap;
            options.bootstrap_seed = ev_seed;
            micle::MetricsReport report = micle::evaluate_checkpoint(ckpt, manifest, options);
            print_metrics_table(report);
            if (!ev_out.empty()) {
                std::ofstream out(ev_out, std::ios::trunc);
                out << report.to_json().dump(2) << "\n";
            }
            return 0;
        }
        if (cmp->parsed()) {
            micle::Checkpoint a = micle::load_checkpoint(cmp_a);
            micle::Checkpoint b = micle::load_checkpoint(cmp_b);
            micle::Manifest manifest = micle::load_manifest(cmp_manifest);
            const micle::Split split = micle::split_from_name(cmp_split);
            micle::PredictionSet pa =
                micle::predict(micle::model_from_checkpoint(a), manifest, split);
            micle::PredictionSet pb =
                micle::predict(micle::model_from_checkpoint(b), manifest, split);
            micle::PairedSignificanceResult r = micle::paired_significance(
                pa, pb, micle::metric_by_name(cmp_metric), cmp_replicates, cmp_seed);
            std::printf("%-24s %12s %12s %12s %12s\n", "metric", "delta", "ci_low", "ci_high",
                        "significant");
            std::printf("%-24s %12.4f %12.4f %12.4f %12s\n", cmp_metric.c_str(), r.delta,
                        r.ci_low, r.ci_high, r.significant_at_05 ? "yes" : "no");
            if (!cmp_out.empty()) {
                json j;
                j["metric"] = cmp_metric;
                j["delta"] = r.delta;
                j["ci_low"] = r.ci_low;
                j["ci_high"] = r.ci_high;
                j["significant_at_05"] = r.significant_at_05;
                j["replicates"] = r.replicates;
                std::ofstream out(cmp_out, std::ios::trunc);
                out << j.dump(2) << "\n";
            }
            return 0;
        }
        if (swl->parsed()) {
            micle::RunConfig cfg = load_config_with_overrides(
                cfg_path, "finetune", std::nullopt, std::nullopt, std::nullopt, false,
                std::nullopt);
            std::vector<std::pair<std::string, std::string>> inits;
            std::stringstream ss(swl_inits);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos) {
                    throw micle::UsageError("--inits entries must be name=path, got '" + tok +
                                            "'");
                }
                std::string name = tok.substr(0, eq);
                std::string path = tok.substr(eq + 1);
                if (path == "random") path.clear();
                inits.emplace_back(name, path);
            }
            const auto rows = micle::label_efficiency_sweep(
                cfg.stage_config, inits, parse_double_list(swl_fractions),
                parse_u64_list(swl_seeds));
            micle::write_curve_csv(swl_out, rows);
            std::printf("label-efficiency curve: %zu rows -> %s\n", rows.size(),
                        swl_out.c_str());
            return 0;
        }
        if (ver->parsed()) {
            const auto results = micle::run_verify_suite();
            bool all = true;
            for (const auto& r : results) {
                std::printf("[%s] %-55s %6.1fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                            r.seconds, r.detail.c_str());
                all = all && r.pass;
            }
            return all ? 0 : kNumeric;
        }
    } catch (const micle::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const micle::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const micle::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    }
    return 0;
}
