#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "hdexpit/expit.hpp"
#include "hdexpit/policy.hpp"

namespace hdexpit {

struct MtlcReport {
    std::map<std::string, double> per_task_sr;
    double mean_sr = 0.0;  // unweighted mean over tasks
    int num_settings = 0;  // per task
    std::uint64_t seed = 0;
};

struct ChainReport {
    std::vector<double> counts;  // fraction of chains completing >= k+1 tasks
    double avg_len = 0.0;
    int num_chains = 0;

    /// counts[k] = |{c : completed_c >= k+1}| / n; avg_len = sum of counts.
    static ChainReport from_completed(const std::vector<int>& completed, int chain_len);
};

struct ChainStep {
    int task = 0;
    int goal_id = 0;
};

struct Chain {
    EnvState s0;
    std::vector<ChainStep> steps;
};

struct CrossEvalMatrix {
    std::vector<std::string> ll_ids;  // rows
    std::vector<std::string> hl_ids;  // cols
    std::vector<ChainReport> cells;   // row-major

    const ChainReport& at(int row, int col) const {
        return cells.at(row * hl_ids.size() + col);
    }
};

/// Frozen per-task evaluation settings drawn from a reserved seed stream.
std::vector<Context> make_mtlc_settings(const EnvConfig& env_cfg, const TaskRegistry& reg,
                                        int settings_per_task, std::uint64_t seed);

/// One policy rollout per setting (with replanning); per-task success rates.
MtlcReport eval_mtlc(const RolloutPolicy& policy, const std::vector<Context>& settings,
                     const EnvConfig& env_cfg, const TaskRegistry& reg,
                     const RolloutParams& rp, std::uint64_t seed, int workers);

/// Identical protocol with the budget cut to a single plan (M*n steps).
MtlcReport eval_no_replan(const RolloutPolicy& policy, const std::vector<Context>& settings,
                          const EnvConfig& env_cfg, const TaskRegistry& reg,
                          RolloutParams rp, std::uint64_t seed, int workers);

/// Task chains over expert-simulated nominal states: each next task is
/// drawn uniformly from the tasks admissible at the nominal state, never
/// repeating its predecessor. Fixed before any evaluation.
std::vector<Chain> generate_chains(const EnvConfig& env_cfg, const TaskRegistry& reg,
                                   int num_chains, int chain_len, std::uint64_t seed);

/// Executes chains with state carry-over, stopping at the first failure.
ChainReport eval_lhmtlc(const RolloutPolicy& policy, const std::vector<Chain>& chains,
                        const EnvConfig& env_cfg, const TaskRegistry& reg,
                        const RolloutParams& rp, std::uint64_t seed, int workers);

/// Every planner-controller pairing evaluated on the same chains and seeds.
CrossEvalMatrix cross_eval(const std::vector<std::pair<std::string, const PolicyBundle*>>& hls,
                           const std::vector<std::pair<std::string, const PolicyBundle*>>& lls,
                           const std::vector<Chain>& chains, const EnvConfig& env_cfg,
                           const TaskRegistry& reg, const RolloutParams& rp,
                           std::uint64_t seed, int workers);

/// Drives the controller along subgoals extracted from held-out expert
/// trajectories; no planner is involved at any point.
MtlcReport eval_gt_guided(ControllerParams& ll, const std::vector<Context>& contexts,
                          const std::vector<Trajectory>& expert_trajs,
                          const EnvConfig& env_cfg, const TaskRegistry& reg, int subgoals,
                          std::uint64_t seed, int workers);

struct DiversityReport {
    std::vector<std::array<double, 2>> projected;
    std::vector<ContextOrigin> origins;
    std::array<double, 2> variance_explained{0.0, 0.0};
    std::map<std::string, double> hull_area;  // per origin name
    bool zero_spread = false;
};

/// PCA of 8-dim initial-state vectors (block + effector positions) to 2D,
/// with per-origin convex-hull areas as the diversity scalar.
DiversityReport context_diversity(const std::vector<std::array<float, 8>>& points,
                                  const std::vector<ContextOrigin>& origins);

std::array<float, 8> diversity_features(const EnvState& s);

/// Convex hull area of 2D points (monotone chain + shoelace).
double convex_hull_area(const std::vector<std::array<double, 2>>& pts);

struct TimingRow {
    std::string label;
    double sec_per_action = 0.0;
    double mean_sr = 0.0;
    std::int64_t actions = 0;
};

/// Wall-clock cost per executed action of full rollouts under each sampler
/// configuration, with the task metric measured on the same settings/seeds.
std::vector<TimingRow> timing_study(const PolicyBundle& bundle,
                                    const std::vector<std::pair<std::string, SamplerConfig>>& configs,
                                    const std::vector<Context>& settings,
                                    const EnvConfig& env_cfg, const TaskRegistry& reg,
                                    RolloutParams rp, std::uint64_t seed);

}  // namespace hdexpit
