#pragma once

#include <cstdint>
#include <string>

#include "hdexpit/expit.hpp"

namespace hdexpit {

struct EvalConfig {
    int settings_per_task = 30;
    int num_chains = 200;
    int chain_len = 5;
};

struct DataConfig {
    int demos_per_task = 100;
};

/// Whole-run configuration: everything a reproduction needs besides the
/// binary itself. Serialized as strict JSON (unknown keys are rejected) and
/// stamped into every run directory.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "runs/out";
    int workers = 2;
    EnvConfig env;
    HlModelConfig hl;
    LlModelConfig ll;
    double hl_lr = 1e-4;
    double ll_lr = 1e-4;
    ExpItConfig expit;
    EvalConfig eval;
    DataConfig data;

    void validate() const;
    std::uint64_t digest() const;
};

RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

/// Loads a config file; HDEXPIT_SEED in the environment overrides the seed.
RunConfig load_run_config(const std::string& path);

/// The shipped desk-scale defaults.
RunConfig desk_run_config();

}  // namespace hdexpit
