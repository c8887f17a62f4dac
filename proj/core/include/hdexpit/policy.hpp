#pragma once

#include <cstdint>
#include <memory>

#include "hdexpit/controller.hpp"
#include "hdexpit/env.hpp"
#include "hdexpit/planner.hpp"

namespace hdexpit {

struct RolloutParams {
    int subgoals = 8;  // M
    int chunk = 8;     // n
    int t_max = 192;
    SamplerConfig hl_sampler;
};

/// Paired planner and controller; the hierarchical policy of one iteration.
struct PolicyBundle {
    PlannerParams hl;
    ControllerParams ll;
    int iteration = 0;
    struct Lineage {
        std::string strategy;
        std::vector<std::uint64_t> dataset_digests;
        std::vector<std::int64_t> hl_budgets, ll_budgets;
    } lineage;

    PolicyBundle clone() const;
};

void save_bundle(const PolicyBundle& b, const std::string& dir);
PolicyBundle load_bundle(const std::string& dir);

/// Anything that can produce one episode from a context, bit-deterministic
/// in the rollout seed. Instances are not thread-safe; clone one per worker.
class RolloutPolicy {
public:
    virtual ~RolloutPolicy() = default;
    virtual Trajectory run(PushWorldEnv& env, const Context& ctx, const RolloutParams& rp,
                           std::uint64_t rollout_seed) = 0;
    virtual std::unique_ptr<RolloutPolicy> clone() const = 0;
};

/// Plan-execute-replan loop: sample a whole plan from the current
/// observation, execute its subgoals chunk by chunk, truncate on the first
/// done signal, replan while the step budget allows.
class HierarchicalPolicy : public RolloutPolicy {
public:
    explicit HierarchicalPolicy(PolicyBundle bundle) : bundle_(std::move(bundle)) {}

    Trajectory run(PushWorldEnv& env, const Context& ctx, const RolloutParams& rp,
                   std::uint64_t rollout_seed) override;
    std::unique_ptr<RolloutPolicy> clone() const override;

    PolicyBundle& bundle() { return bundle_; }
    const PolicyBundle& bundle() const { return bundle_; }

private:
    PolicyBundle bundle_;
};

/// The privileged expert wrapped as a rollout policy (the oracle bundle for
/// loop tests and upper-bound evaluations). Expert failures come back as
/// unsuccessful single-state trajectories instead of exceptions.
class ScriptedExpertPolicy : public RolloutPolicy {
public:
    Trajectory run(PushWorldEnv& env, const Context& ctx, const RolloutParams& rp,
                   std::uint64_t rollout_seed) override;
    std::unique_ptr<RolloutPolicy> clone() const override;
};

}  // namespace hdexpit
