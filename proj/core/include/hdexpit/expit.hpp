#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hdexpit/dataset.hpp"
#include "hdexpit/policy.hpp"

namespace hdexpit {

struct ContextMix {
    int count_reset = 50;
    int count_replayed = 50;
};

struct ExpItConfig {
    int n_iter = 1;
    int k_trials = 5;
    int n_data = 50;  // per-task cap for one collection pass
    AggregationStrategy strategy = AggregationStrategy::merge;
    std::int64_t n0_hl = 20000, n0_ll = 20000;
    int batch_hl = 32, batch_ll = 64;
    ContextMix mix;
    SamplerConfig collect_sampler;  // guidance 3 by default
    SamplerConfig eval_sampler;     // guidance 5 by default
    int t_max = 192;
    bool strict_quota = false;
    int workers = 2;

    void validate(int subgoals, int chunk) const;
};

struct ContextSet {
    std::vector<Context> contexts;
    std::uint64_t source_digest = 0;
};

/// Gradient budgets per iteration. merge retrains from scratch on the grown
/// dataset with a linearly growing budget N_t = N_0 * (1 + t/2); replace
/// fine-tunes with a flat reduced budget (0.2 N_0 for the planner, 0.1 N_0
/// for the controller) after iteration 0.
std::pair<std::int64_t, std::int64_t> budget_schedule(AggregationStrategy strategy, int t,
                                                      std::int64_t n0_hl,
                                                      std::int64_t n0_ll);

/// Builds per-task contexts: `count_reset` fresh resets plus
/// `count_replayed` terminal states of uniformly drawn stored trajectories,
/// each paired with a uniformly drawn goal. Contexts where the task is not
/// admissible are resampled (bounded); exhaustion raises ConfigError naming
/// the task.
ContextSet build_context_set(const Dataset& d, const EnvConfig& env_cfg,
                             const TaskRegistry& reg, const ContextMix& mix,
                             std::uint64_t seed);

struct CollectStats {
    std::int64_t rollouts = 0;
    std::map<std::string, int> successes;
    std::map<std::string, int> shortfall;
    std::map<std::string, std::int64_t> rollouts_by_origin;
};

/// One filtered collection pass: per context up to K rollouts, keep the
/// first success while the task is under quota, stop once every task is
/// full. Rollouts run in parallel across contexts; admission replays the
/// sequential order so results are independent of scheduling.
Dataset collect_trajectories(const RolloutPolicy& policy, const ContextSet& contexts,
                             const EnvConfig& env_cfg, const TaskRegistry& reg,
                             const RolloutParams& rp, int k_trials, int n_data,
                             std::uint64_t seed, int workers, int created_iteration,
                             CollectStats* stats = nullptr);

using TrainProgressFn =
    std::function<void(const std::string& stage, std::int64_t step, std::int64_t total,
                       float loss)>;

struct TrainBudgets {
    std::int64_t hl = 0, ll = 0;
};

/// Updates both components independently on uniformly drawn batches
/// (subgoal extraction for the planner, chunk extraction for the
/// controller). Zero budgets return the bundle unchanged except lineage.
PolicyBundle supervised_training(PolicyBundle init, const Dataset& d,
                                 const TrainBudgets& budgets, int batch_hl, int batch_ll,
                                 const TaskRegistry& reg, std::uint64_t seed, int workers,
                                 const TrainProgressFn& progress = nullptr);

struct ExpItRunConfig {
    EnvConfig env;
    HlModelConfig hl;
    LlModelConfig ll;
    ExpItConfig expit;
    std::uint64_t master_seed = 0;
    std::string d0_path;
    std::string run_dir;
    // Collect with the privileged expert instead of the trained policy;
    // pairs with zero budgets to exercise the loop mechanics alone.
    bool oracle_collection = false;
};

struct IterationLedger {
    int t = 0;
    std::int64_t hl_updates = 0, ll_updates = 0;
    std::int64_t cumulative_hl = 0, cumulative_ll = 0;
    std::int64_t rollouts_reset = 0, rollouts_replayed = 0;
    std::map<std::string, int> successes_reset, successes_replayed;
    int dataset_size = 0;   // |D_t| trained on
    int collected_size = 0; // |R_t|
};

struct ExpItResult {
    std::vector<IterationLedger> ledger;
    std::vector<std::string> bundle_dirs;   // iteration 0..n_iter
    std::vector<std::string> dataset_dirs;  // D_0..D_{n_iter}
};

/// The full loop: trainings at t = 0..n_iter on D_t, with a collection and
/// aggregation cycle after each training except the last. All bundles and
/// datasets persist under run_dir; completed stages are skipped on rerun,
/// so the whole run is resumable and idempotent.
ExpItResult expit_run(const ExpItRunConfig& cfg, const TrainProgressFn& progress = nullptr);

void write_ledger_json(const std::vector<IterationLedger>& ledger, const std::string& path);
std::vector<IterationLedger> read_ledger_json(const std::string& path);

}  // namespace hdexpit
