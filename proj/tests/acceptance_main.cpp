// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one [PASS]/[FAIL] line per criterion. Exit code 0 only when all
// pass. Individual criteria can be selected by number on the command line.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "micle/config.hpp"
#include "micle/contrastive.hpp"
#include "micle/data.hpp"
#include "micle/eval.hpp"
#include "micle/train.hpp"
#include "micle/verify.hpp"

using namespace micle;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int number;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string cli_binary() {
    const char* env = std::getenv("MICLE_BIN");
    if (env) return env;
    return "./micle";
}

int run_cmd(const std::string& cmd) {
    const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(status);
}

fs::path work_dir() {
    static fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "micle_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// ---- training configs used by the experiment criteria (7, 8, 9) ----

EncoderConfig acceptance_encoder() {
    // Lighter than the library default so the ordering experiment fits the
    // runtime budget; trained identically across the three initializations.
    EncoderConfig e;
    e.widths = {16, 32, 64};
    e.blocks_per_stage = {1, 1, 1};
    e.input_channels = 3;
    e.input_height = 32;
    e.input_width = 32;
    e.projection_dim = 64;
    e.projection_hidden = 64;
    return e;
}

StageConfig pretrain_config(const std::string& manifest, StageTag stage,
                            const std::string& init, std::uint64_t seed) {
    StageConfig cfg;
    cfg.stage = stage;
    cfg.manifest_path = manifest;
    cfg.encoder = acceptance_encoder();
    cfg.batch_size = 64;
    cfg.temperature = 0.1;
    cfg.seed = seed;
    cfg.init_checkpoint = init;
    if (stage == StageTag::simclr) {
        cfg.steps = 2000;
        cfg.lars.base_lr = 0.2;
    } else {
        cfg.steps = 1000;
        cfg.lars.base_lr = 0.1;
    }
    cfg.lars.weight_decay = 1e-6;
    return cfg;
}

StageConfig finetune_config(const std::string& manifest, const std::string& init,
                            double fraction, std::uint64_t seed) {
    StageConfig cfg;
    cfg.stage = StageTag::finetune;
    cfg.manifest_path = manifest;
    cfg.encoder = acceptance_encoder();
    cfg.batch_size = 32;
    cfg.steps = 600;
    cfg.sgd_lr = 0.01;
    cfg.sgd_weight_decay = 1e-4;
    cfg.schedule.kind = ScheduleKind::constant;
    cfg.seed = seed;
    cfg.init_checkpoint = init;
    cfg.label_fraction = fraction;
    cfg.eval_every = 150;
    return cfg;
}

// Pretrains stage 1 + stage 2 once on the default corpus; reused by 8 and 9.
struct PretrainedPair {
    std::string manifest;
    std::string simclr_ckpt;
    std::string micle_ckpt;
};

const PretrainedPair& shared_pretrained() {
    static PretrainedPair cached = [] {
        PretrainedPair out;
        const fs::path dir = work_dir() / "ordering";
        fs::create_directories(dir);
        CorpusSpec spec;  // default: 8 classes, 50 bags/class, views 2..4
        spec.seed = 42;
        spec.out_dir = (dir / "corpus").string();
        generate_synthetic_corpus(spec);
        out.manifest = (dir / "corpus" / "manifest.jsonl").string();

        StageConfig s1 = pretrain_config(out.manifest, StageTag::simclr, "", 42);
        const PretrainResult r1 = pretrain_simclr(s1);
        out.simclr_ckpt = (dir / "simclr.mck").string();
        save_checkpoint(out.simclr_ckpt, r1.checkpoint);

        StageConfig s2 = pretrain_config(out.manifest, StageTag::micle, out.simclr_ckpt, 42);
        const PretrainResult r2 = pretrain_micle(s2);
        out.micle_ckpt = (dir / "micle.mck").string();
        save_checkpoint(out.micle_ckpt, r2.checkpoint);
        return out;
    }();
    return cached;
}

// ---- criteria ----

Criterion from_verify(int number, const CriterionResult& r, double budget_s) {
    Criterion c;
    c.number = number;
    c.name = r.name;
    c.pass = r.pass && r.seconds < budget_s;
    std::ostringstream os;
    os << r.detail << " [" << r.seconds << "s, budget " << budget_s << "s]";
    c.detail = os.str();
    c.seconds = r.seconds;
    return c;
}

Criterion criterion_7() {
    Criterion c;
    c.number = 7;
    c.name = "pipeline determinism (two identical runs, MICLE_THREADS=2)";
    const double t0 = now_s();
    const fs::path dir = work_dir() / "det";
    fs::create_directories(dir);

    CorpusSpec spec;
    spec.num_classes = 3;
    spec.bags_per_class = 8;
    spec.views_min = 2;
    spec.views_max = 3;
    spec.image_height = 20;
    spec.image_width = 20;
    spec.seed = 5;
    spec.out_dir = (dir / "corpus").string();
    generate_synthetic_corpus(spec);

    nlohmann::json cfg;
    cfg["data"]["manifest"] = (dir / "corpus" / "manifest.jsonl").string();
    cfg["model"]["widths"] = {6, 8};
    cfg["model"]["blocks_per_stage"] = {1, 1};
    cfg["model"]["input_size"] = {16, 16};
    cfg["model"]["projection_dim"] = 8;
    cfg["stage"]["steps"] = 6;
    cfg["stage"]["batch_size"] = 4;
    cfg["stage"]["eval_every"] = 3;
    cfg["optim"]["base_lr"] = 0.05;
    std::ofstream((dir / "cfg.json").string()) << cfg.dump();

    const std::string bin = "MICLE_THREADS=2 " + cli_binary();
    const std::string cfg_path = (dir / "cfg.json").string();
    auto run_pipeline = [&](const std::string& tag) -> bool {
        const std::string base = (dir / tag).string();
        if (run_cmd(bin + " pretrain --config " + cfg_path + " --seed 7 --out " + base + "/s1"))
            return false;
        if (run_cmd(bin + " micle --config " + cfg_path + " --seed 7 --init " + base +
                    "/s1/checkpoint.mck --out " + base + "/s2"))
            return false;
        if (run_cmd(bin + " finetune --config " + cfg_path + " --seed 7 --init " + base +
                    "/s2/checkpoint.mck --out " + base + "/s3"))
            return false;
        return true;
    };
    if (!run_pipeline("a") || !run_pipeline("b")) {
        c.detail = "pipeline run failed";
        c.seconds = now_s() - t0;
        return c;
    }

    auto file_bytes = [](const fs::path& p) { return read_file(p.string()); };
    auto csv_without_walltime = [](const fs::path& p) {
        std::ifstream in(p);
        std::string line, out;
        while (std::getline(in, line)) {
            const auto last_comma = line.rfind(',');
            out += line.substr(0, last_comma);
            out += '\n';
        }
        return out;
    };

    bool ok = true;
    std::string why;
    for (const std::string stage : {"s1", "s2", "s3"}) {
        const fs::path a = dir / "a" / stage;
        const fs::path b = dir / "b" / stage;
        if (file_bytes(a / "checkpoint.mck") != file_bytes(b / "checkpoint.mck")) {
            ok = false;
            why += stage + " checkpoint differs; ";
        }
        if (csv_without_walltime(a / "trainlog.csv") != csv_without_walltime(b / "trainlog.csv")) {
            ok = false;
            why += stage + " trainlog differs; ";
        }
        if (fs::exists(a / "evals.jsonl") &&
            file_bytes(a / "evals.jsonl") != file_bytes(b / "evals.jsonl")) {
            ok = false;
            why += stage + " evals differ; ";
        }
    }
    c.pass = ok;
    c.detail = ok ? "checkpoints and logs byte-identical across both runs"
                  : why + "(walltime column excluded from the log comparison)";
    c.seconds = now_s() - t0;
    return c;
}

Criterion criterion_8() {
    Criterion c;
    c.number = 8;
    c.name = "desk-scale ordering: micle-init > simclr-init > random-init at 10% labels";
    const double t0 = now_s();
    const auto& pre = shared_pretrained();
    const fs::path dir = work_dir() / "ordering";

    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::map<std::string, std::vector<double>> accs;
    std::map<std::string, double> best_val;
    std::map<std::string, Checkpoint> best_ckpt;
    const std::vector<std::pair<std::string, std::string>> inits = {
        {"micle", pre.micle_ckpt}, {"simclr", pre.simclr_ckpt}, {"random", ""}};

    for (const auto& [name, ckpt] : inits) {
        for (std::uint64_t seed : seeds) {
            StageConfig cfg = finetune_config(pre.manifest, ckpt, 0.1, seed);
            const FinetuneResult r = finetune(cfg);
            accs[name].push_back(r.test_report.metrics.at("top1_accuracy").point);
            if (!best_val.count(name) || r.selection_value > best_val[name]) {
                best_val[name] = r.selection_value;
                best_ckpt[name] = r.checkpoint;
            }
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const double m_micle = mean(accs["micle"]);
    const double m_simclr = mean(accs["simclr"]);
    const double m_random = mean(accs["random"]);

    // paired bootstrap: best micle-init vs best random-init model on test
    Manifest manifest = load_manifest(pre.manifest);
    const PredictionSet pm =
        predict(model_from_checkpoint(best_ckpt["micle"]), manifest, Split::test);
    const PredictionSet pr =
        predict(model_from_checkpoint(best_ckpt["random"]), manifest, Split::test);
    const auto sig = paired_significance(
        pm, pr, [](const PredictionSet& p) { return topk_accuracy(p, 1); }, 1000, 42);

    const bool ordering = m_micle > m_simclr && m_simclr > m_random;
    const bool significant = sig.significant_at_05 && sig.delta > 0.0;
    c.pass = ordering && significant;
    std::ostringstream os;
    os << "mean top-1 over 5 seeds: micle " << m_micle << ", simclr " << m_simclr << ", random "
       << m_random << "; paired micle-random delta " << sig.delta << " CI [" << sig.ci_low << ", "
       << sig.ci_high << "]" << (sig.significant_at_05 ? " significant" : " NOT significant");
    c.detail = os.str();
    c.seconds = now_s() - t0;

    // persist per-seed numbers for inspection
    std::ofstream out((dir / "ordering_results.csv").string());
    out << "init,seed,top1\n";
    for (const auto& [name, vals] : accs) {
        for (std::size_t i = 0; i < vals.size(); ++i) {
            out << name << "," << seeds[i] << "," << vals[i] << "\n";
        }
    }
    return c;
}

Criterion criterion_9() {
    Criterion c;
    c.number = 9;
    c.name = "label-efficiency monotonicity: Spearman(fraction, accuracy) > 0 per init";
    const double t0 = now_s();
    const auto& pre = shared_pretrained();

    StageConfig base = finetune_config(pre.manifest, "", 1.0, 0);
    base.steps = 400;
    base.eval_every = 200;
    const std::vector<double> fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    const std::vector<std::uint64_t> seeds = {11, 12};
    const std::vector<std::pair<std::string, std::string>> inits = {
        {"micle", pre.micle_ckpt}, {"simclr", pre.simclr_ckpt}, {"random", ""}};
    const auto rows = label_efficiency_sweep(base, inits, fractions, seeds);
    write_curve_csv((work_dir() / "ordering" / "label_efficiency.csv").string(), rows);

    bool all_positive = true;
    std::ostringstream os;
    for (const auto& [name, ckpt] : inits) {
        std::vector<double> xs, ys;
        for (double f : fractions) {
            double s = 0;
            int n = 0;
            for (const auto& r : rows) {
                if (r.init == name && r.fraction == f && r.metric == "top1_accuracy") {
                    s += r.value;
                    ++n;
                }
            }
            xs.push_back(f);
            ys.push_back(s / n);
        }
        const double rho = spearman(xs, ys);
        os << name << " rho=" << rho << " ";
        all_positive = all_positive && rho > 0.0;
    }
    c.pass = all_positive;
    c.detail = os.str();
    c.seconds = now_s() - t0;
    return c;
}

Criterion criterion_10() {
    Criterion c;
    c.number = 10;
    c.name = "`verify` subcommand exits 0";
    const double t0 = now_s();
    const int code = run_cmd(cli_binary() + " verify");
    c.pass = code == 0;
    c.detail = "exit code " + std::to_string(code);
    c.seconds = now_s() - t0;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    auto wanted = [&](int n) { return selected.empty() || selected.count(n); };

    std::vector<Criterion> results;
    if (wanted(1)) results.push_back(from_verify(1, verify_loss_oracle(), 10.0));
    if (wanted(2)) results.push_back(from_verify(2, verify_gradients(), 120.0));
    if (wanted(3)) results.push_back(from_verify(3, verify_sampler(), 30.0));
    if (wanted(4)) results.push_back(from_verify(4, verify_loss_invariants(), 600.0));
    if (wanted(5)) results.push_back(from_verify(5, verify_metric_oracles(), 600.0));
    if (wanted(6)) results.push_back(from_verify(6, verify_bootstrap(), 120.0));
    if (wanted(7)) results.push_back(criterion_7());
    if (wanted(8)) results.push_back(criterion_8());
    if (wanted(9)) results.push_back(criterion_9());
    if (wanted(10)) results.push_back(criterion_10());

    bool all = true;
    for (const auto& c : results) {
        std::printf("[%s] criterion %2d: %s (%.1fs)\n        %s\n", c.pass ? "PASS" : "FAIL",
                    c.number, c.name.c_str(), c.seconds, c.detail.c_str());
        all = all && c.pass;
    }
    std::printf("%s\n", all ? "ACCEPTANCE: ALL PASS" : "ACCEPTANCE: FAILURES PRESENT");
    return all ? 0 : 1;
}
