#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "micle/eval.hpp"
#include "micle/train.hpp"

namespace micle {

// A run is one JSON document with sections {data, augment, model, optim,
// stage, eval, seed, out_dir}. Unknown keys are rejected; defaults fill every
// omitted field; the fully resolved document is echoed to
// out_dir/config.resolved.json before any work happens.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir;
    StageConfig stage_config;
    EvalOptions eval_options;
    nlohmann::json resolved;  // the full document with defaults applied
};

nlohmann::json default_config_json();

// Parses + validates; flag overrides (seed, init, fraction, sweep) are applied
// by the CLI before echoing.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

void echo_resolved_config(const RunConfig& cfg);

CorpusSpec parse_corpus_spec(const nlohmann::json& doc, const std::string& out_dir);

}  // namespace micle
