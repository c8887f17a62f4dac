#include "hdexpit/policy.hpp"

#include <filesystem>

namespace fs = std::filesystem;

namespace hdexpit {

namespace {
constexpr std::uint64_t kPlanTag = 0x504c414eull;   // plan stream
constexpr std::uint64_t kChunkTag = 0x43484e4bull;  // chunk stream
}  // namespace

PolicyBundle PolicyBundle::clone() const {
    PolicyBundle b;
    b.hl = hl.clone();
    b.ll = ll.clone();
    b.iteration = iteration;
    b.lineage = lineage;
    return b;
}

void save_bundle(const PolicyBundle& b, const std::string& dir) {
    fs::create_directories(dir);
    save_planner(b.hl, (fs::path(dir) / "hl.ckpt").string());
    save_controller(b.ll, (fs::path(dir) / "ll.ckpt").string());
}

PolicyBundle load_bundle(const std::string& dir) {
    PolicyBundle b;
    b.hl = load_planner((fs::path(dir) / "hl.ckpt").string());
    b.ll = load_controller((fs::path(dir) / "ll.ckpt").string());
    return b;
}

Trajectory HierarchicalPolicy::run(PushWorldEnv& env, const Context& ctx,
                                   const RolloutParams& rp, std::uint64_t rollout_seed) {
    if (rp.t_max < rp.subgoals * rp.chunk)
        throw ConfigError("rollout budget below one full plan (t_max < M*n)");
    env.begin_episode(ctx.initial_state);
    const int goal_row = env.registry().goal_index(ctx.task, ctx.goal_id);

    Trajectory traj;
    traj.task_id = env.registry().at(ctx.task).id;
    traj.goal_id = ctx.goal_id;
    traj.origin = TrajOrigin::collected;
    traj.context_origin = ctx.origin;
    traj.step_budget = rp.t_max;
    traj.states.push_back(env.state());
    traj.observations.push_back(PushWorldEnv::render_quantized(env.config(), env.state()));

    std::vector<float> cur_obs = dequantize_observation(traj.observations.back());
    int d = 0;
    bool done = env.done(ctx.task);
    int plan_idx = 0;

    while (!done && d < rp.t_max) {
        Rng plan_rng(derive_seed(rollout_seed, kPlanTag, plan_idx));
        const Plan plan =
            hl_sample_plan(bundle_.hl, cur_obs, goal_row, rp.hl_sampler, plan_rng);
        for (int i = 0; i < rp.subgoals && !done && d < rp.t_max; ++i) {
            Rng chunk_rng(
                derive_seed(rollout_seed, kChunkTag, plan_idx * rp.subgoals + i));
            const ActionChunk chunk =
                ll_predict(bundle_.ll, cur_obs, plan.frame(i), chunk_rng);
            for (int k = 0; k < rp.chunk; ++k) {
                if (d >= rp.t_max) break;
                env.step(chunk.actions[k]);
                traj.actions.push_back(chunk.actions[k]);
                traj.states.push_back(env.state());
                traj.observations.push_back(
                    PushWorldEnv::render_quantized(env.config(), env.state()));
                ++d;
                if (env.done(ctx.task)) {
                    done = true;
                    break;
                }
            }
            cur_obs = dequantize_observation(traj.observations.back());
        }
        ++plan_idx;
    }
    traj.success = done;
    return traj;
}

std::unique_ptr<RolloutPolicy> HierarchicalPolicy::clone() const {
    return std::make_unique<HierarchicalPolicy>(bundle_.clone());
}

Trajectory ScriptedExpertPolicy::run(PushWorldEnv& env, const Context& ctx,
                                     const RolloutParams& rp, std::uint64_t rollout_seed) {
    Rng rng(derive_seed(rollout_seed, 0x45585054ull));
    try {
        Trajectory t = scripted_expert(ctx, env, rng);
        t.step_budget = rp.t_max;
        return t;
    } catch (const ExpertFailure&) {
        Trajectory t;
        t.task_id = env.registry().at(ctx.task).id;
        t.goal_id = ctx.goal_id;
        t.origin = TrajOrigin::expert;
        t.context_origin = ctx.origin;
        t.step_budget = rp.t_max;
        t.states.push_back(ctx.initial_state);
        t.observations.push_back(
            PushWorldEnv::render_quantized(env.config(), ctx.initial_state));
        t.success = false;
        return t;
    }
}

std::unique_ptr<RolloutPolicy> ScriptedExpertPolicy::clone() const {
    return std::make_unique<ScriptedExpertPolicy>();
}

}  // namespace hdexpit
