#include "micle/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace micle {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config_json() {
    json j;
    j["seed"] = 42;
    j["out_dir"] = "run";
    j["data"] = {
        {"manifest", ""},
        {"label_fraction", 1.0},
    };
    j["augment"] = {
        {"preset", ""},  // empty -> stage default (derm_pretrain / micle_partial / finetune)
    };
    j["model"] = {
        {"widths", {32, 64, 128}},
        {"blocks_per_stage", {2, 2, 2}},
        {"input_channels", 3},
        {"input_size", {32, 32}},
        {"width_multiplier", 1.0},
        {"residual", false},
        {"projection_hidden", 0},
        {"projection_dim", 128},
    };
    j["optim"] = {
        {"base_lr", 0.05},  // LARS, pretraining stages
        {"momentum", 0.9},
        {"weight_decay", 1e-6},
        {"trust_coefficient", 1e-3},
        {"exclude_from_adaptation", {".b"}},
        {"sgd_lr", 0.03},  // SGD, fine-tuning
        {"sgd_weight_decay", 0.0},
        {"schedule", "warmup_cosine"},  // pretraining; fine-tuning uses constant
        {"warmup_steps", 0},            // 0 -> 5% of total steps
        // Scaled-down desk defaults above; the corresponding full-scale values:
        {"paper_reference",
         {
             {"derm_pretrain", {{"batch_size", 512}, {"lr", 0.3}, {"steps", 150000}}},
             {"xray_pretrain", {{"batch_size", 1024}, {"lr", 0.5}, {"steps", 100000}}},
             {"micle_pretrain", {{"batch_size", 128}, {"lr", 0.1}, {"steps", 100000}}},
             {"finetune", {{"batch_size", 256}, {"steps", 30000}, {"momentum", 0.9}}},
         }},
    };
    j["stage"] = {
        {"stage", "simclr"},
        {"steps", 0},  // 0 -> stage default: simclr 2000, micle 1000, finetune 1000
        {"batch_size", 64},
        {"temperature", 0.1},
        {"eval_every", 0},
        {"init_checkpoint", ""},
        {"from_scratch", false},
        {"sweep", false},
    };
    j["eval"] = {
        {"split", "test"},
        {"bootstrap_replicates", 1000},
        {"bootstrap_seed", 42},
        {"group_by", ""},
        {"repeats", 1},
    };
    return j;
}

namespace {

// Deep-merges the user document over defaults; any key absent from the
// defaults tree is rejected.
void merge_checked(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) {
        throw ValidationError("config section '" + (prefix.empty() ? "(root)" : prefix) +
                              "' must be an object");
    }
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) {
            throw ValidationError("unknown config key: " + path);
        }
        if (base[key].is_object() && key != "paper_reference") {
            merge_checked(base[key], value, path);
        } else {
            base[key] = value;
        }
    }
}

template <typename T>
T field(const json& j, const std::string& section, const std::string& key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError("config field " + section + "." + key + ": " + e.what());
    }
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
    json resolved = default_config_json();
    merge_checked(resolved, doc, "");

    RunConfig cfg;
    cfg.resolved = resolved;
    cfg.seed = resolved.at("seed").get<std::uint64_t>();
    cfg.out_dir = resolved.at("out_dir").get<std::string>();

    StageConfig& s = cfg.stage_config;
    s.stage = stage_from_name(field<std::string>(resolved, "stage", "stage"));
    s.manifest_path = field<std::string>(resolved, "data", "manifest");
    s.label_fraction = field<double>(resolved, "data", "label_fraction");
    s.preset = field<std::string>(resolved, "augment", "preset");
    s.steps = field<std::size_t>(resolved, "stage", "steps");
    if (s.steps == 0) {
        s.steps = s.stage == StageTag::simclr ? 2000 : 1000;
        cfg.resolved["stage"]["steps"] = s.steps;
    }
    s.batch_size = field<std::size_t>(resolved, "stage", "batch_size");
    s.temperature = field<double>(resolved, "stage", "temperature");
    s.eval_every = field<std::size_t>(resolved, "stage", "eval_every");
    s.init_checkpoint = field<std::string>(resolved, "stage", "init_checkpoint");
    s.from_scratch = field<bool>(resolved, "stage", "from_scratch");
    s.sweep = field<bool>(resolved, "stage", "sweep");
    s.seed = cfg.seed;
    s.out_dir = cfg.out_dir;

    s.lars.base_lr = field<double>(resolved, "optim", "base_lr");
    s.lars.momentum = field<double>(resolved, "optim", "momentum");
    s.lars.weight_decay = field<double>(resolved, "optim", "weight_decay");
    s.lars.trust_coefficient = field<double>(resolved, "optim", "trust_coefficient");
    s.lars.exclude_from_adaptation =
        field<std::vector<std::string>>(resolved, "optim", "exclude_from_adaptation");
    s.sgd_lr = field<double>(resolved, "optim", "sgd_lr");
    s.sgd_momentum = s.lars.momentum;
    s.sgd_weight_decay = field<double>(resolved, "optim", "sgd_weight_decay");
    const std::string sched = field<std::string>(resolved, "optim", "schedule");
    if (sched == "warmup_cosine") {
        s.schedule.kind = ScheduleKind::warmup_cosine;
    } else if (sched == "constant") {
        s.schedule.kind = ScheduleKind::constant;
    } else {
        throw ValidationError("optim.schedule must be warmup_cosine or constant, got " + sched);
    }
    s.schedule.total_steps = 0;  // filled from steps at stage start
    s.schedule.warmup_steps = field<std::size_t>(resolved, "optim", "warmup_steps");
    const bool schedule_given = doc.contains("optim") && doc.at("optim").contains("schedule");
    if (s.stage == StageTag::finetune && !schedule_given) {
        // fine-tuning default is a constant schedule
        s.schedule.kind = ScheduleKind::constant;
        cfg.resolved["optim"]["schedule"] = "constant";
    }

    EncoderConfig& e = s.encoder;
    e.widths = field<std::vector<std::size_t>>(resolved, "model", "widths");
    e.blocks_per_stage = field<std::vector<std::size_t>>(resolved, "model", "blocks_per_stage");
    e.input_channels = field<std::size_t>(resolved, "model", "input_channels");
    const auto in_size = field<std::vector<std::size_t>>(resolved, "model", "input_size");
    check_dim(in_size.size() == 2, "model.input_size must be [H, W]");
    e.input_height = in_size[0];
    e.input_width = in_size[1];
    e.width_multiplier = field<double>(resolved, "model", "width_multiplier");
    e.residual = field<bool>(resolved, "model", "residual");
    e.projection_hidden = field<std::size_t>(resolved, "model", "projection_hidden");
    e.projection_dim = field<std::size_t>(resolved, "model", "projection_dim");

    EvalOptions& ev = cfg.eval_options;
    ev.split = split_from_name(field<std::string>(resolved, "eval", "split"));
    ev.bootstrap_replicates = field<std::size_t>(resolved, "eval", "bootstrap_replicates");
    ev.bootstrap_seed = field<std::uint64_t>(resolved, "eval", "bootstrap_seed");
    ev.group_by = field<std::string>(resolved, "eval", "group_by");
    ev.repeats = field<std::size_t>(resolved, "eval", "repeats");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(doc);
}

void echo_resolved_config(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) return;
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "config.resolved.json", std::ios::trunc);
    if (!out) throw ValidationError("cannot write config.resolved.json in " + cfg.out_dir);
    out << cfg.resolved.dump(2) << "\n";
}

CorpusSpec parse_corpus_spec(const json& doc, const std::string& out_dir) {
    json defaults = {
        {"num_classes", 8},       {"bags_per_class", 50}, {"views_min", 2},
        {"views_max", 4},         {"image_size", {40, 40}}, {"seed", 42},
        {"train_fraction", 0.70}, {"validation_fraction", 0.15},
    };
    merge_checked(defaults, doc, "corpus");
    CorpusSpec spec;
    spec.num_classes = defaults.at("num_classes").get<std::size_t>();
    spec.bags_per_class = defaults.at("bags_per_class").get<std::size_t>();
    spec.views_min = defaults.at("views_min").get<std::size_t>();
    spec.views_max = defaults.at("views_max").get<std::size_t>();
    const auto size = defaults.at("image_size").get<std::vector<std::size_t>>();
    check_dim(size.size() == 2, "corpus image_size must be [H, W]");
    spec.image_height = size[0];
    spec.image_width = size[1];
    spec.seed = defaults.at("seed").get<std::uint64_t>();
    spec.train_fraction = defaults.at("train_fraction").get<double>();
    spec.validation_fraction = defaults.at("validation_fraction").get<double>();
    spec.out_dir = out_dir;
    return spec;
}

}  // namespace micle
