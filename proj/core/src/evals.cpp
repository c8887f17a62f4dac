#include "hdexpit/evals.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <thread>

namespace hdexpit {

namespace {

constexpr std::uint64_t kEvalTag = 0x4556414cull;
constexpr std::uint64_t kChainTag = 0x4348414eull;
constexpr std::uint64_t kGtTag = 0x47544556ull;

void parallel_for(int n, int workers, const std::function<void(int, int)>& body) {
    workers = std::max(1, workers);
    if (workers == 1 || n <= 1) {
        for (int i = 0; i < n; ++i) body(i, 0);
        return;
    }
    std::vector<std::thread> ts;
    for (int w = 0; w < workers; ++w)
        ts.emplace_back([&, w]() {
            for (int i = w; i < n; i += workers) body(i, w);
        });
    for (auto& t : ts) t.join();
}

MtlcReport summarize_mtlc(const std::vector<Context>& settings,
                          const std::vector<int>& success, const TaskRegistry& reg,
                          std::uint64_t seed) {
    MtlcReport rep;
    rep.seed = seed;
    std::map<std::string, std::pair<int, int>> agg;  // task -> (hits, total)
    for (std::size_t i = 0; i < settings.size(); ++i) {
        auto& [hits, total] = agg[reg.at(settings[i].task).id];
        hits += success[i];
        total += 1;
    }
    double mean = 0.0;
    int per_task_total = 0;
    for (const auto& [task, ht] : agg) {
        const double sr = ht.second ? static_cast<double>(ht.first) / ht.second : 0.0;
        rep.per_task_sr[task] = sr;
        mean += sr;
        per_task_total = ht.second;
    }
    rep.mean_sr = agg.empty() ? 0.0 : mean / agg.size();
    rep.num_settings = per_task_total;
    return rep;
}

}  // namespace

ChainReport ChainReport::from_completed(const std::vector<int>& completed, int chain_len) {
    ChainReport rep;
    rep.num_chains = static_cast<int>(completed.size());
    rep.counts.assign(chain_len, 0.0);
    for (int c : completed)
        for (int k = 0; k < std::min(c, chain_len); ++k) rep.counts[k] += 1.0;
    for (auto& v : rep.counts) v /= std::max(1, rep.num_chains);
    rep.avg_len = 0.0;
    for (double v : rep.counts) rep.avg_len += v;
    return rep;
}

std::vector<Context> make_mtlc_settings(const EnvConfig& env_cfg, const TaskRegistry& reg,
                                        int settings_per_task, std::uint64_t seed) {
    std::vector<Context> out;
    for (int task = 0; task < reg.size(); ++task) {
        for (int i = 0; i < settings_per_task; ++i) {
            Rng rng(derive_seed(seed ^ kEvalTag, task, i));
            Context ctx;
            ctx.initial_state = PushWorldEnv::reset_state(env_cfg, rng);
            ctx.task = task;
            ctx.goal_id =
                rng.uniform_int(0, static_cast<int>(reg.at(task).instructions.size()) - 1);
            ctx.origin = ContextOrigin::env_reset;
            out.push_back(ctx);
        }
    }
    return out;
}

MtlcReport eval_mtlc(const RolloutPolicy& policy, const std::vector<Context>& settings,
                     const EnvConfig& env_cfg, const TaskRegistry& reg,
                     const RolloutParams& rp, std::uint64_t seed, int workers) {
    const int n = static_cast<int>(settings.size());
    std::vector<int> success(n, 0);
    const int w = std::max(1, workers);
    std::vector<std::unique_ptr<RolloutPolicy>> pols;
    std::vector<std::unique_ptr<PushWorldEnv>> envs;
    for (int i = 0; i < w; ++i) {
        pols.push_back(policy.clone());
        envs.push_back(std::make_unique<PushWorldEnv>(env_cfg, reg));
    }
    parallel_for(n, w, [&](int i, int worker) {
        Trajectory t = pols[worker]->run(*envs[worker], settings[i], rp,
                                         derive_seed(seed, i));
        success[i] = t.success ? 1 : 0;
    });
    return summarize_mtlc(settings, success, reg, seed);
}

MtlcReport eval_no_replan(const RolloutPolicy& policy, const std::vector<Context>& settings,
                          const EnvConfig& env_cfg, const TaskRegistry& reg,
                          RolloutParams rp, std::uint64_t seed, int workers) {
    rp.t_max = rp.subgoals * rp.chunk;  // exactly one plan
    return eval_mtlc(policy, settings, env_cfg, reg, rp, seed, workers);
}

std::vector<Chain> generate_chains(const EnvConfig& env_cfg, const TaskRegistry& reg,
                                   int num_chains, int chain_len, std::uint64_t seed) {
    if (chain_len < 1) throw ConfigError("chain_len must be at least 1");
    std::vector<Chain> chains;
    chains.reserve(num_chains);
    PushWorldEnv env(env_cfg, reg);
    for (int c = 0; c < num_chains; ++c) {
        bool built = false;
        for (int attempt = 0; attempt < 32 && !built; ++attempt) {
            Rng rng(derive_seed(seed ^ kChainTag, c, attempt));
            Chain chain;
            chain.s0 = PushWorldEnv::reset_state(env_cfg, rng);
            EnvState nominal = chain.s0;
            int prev = -1;
            bool ok = true;
            for (int k = 0; k < chain_len; ++k) {
                auto adm = admissible_tasks(env_cfg, reg, nominal);
                std::erase(adm, prev);
                if (adm.empty()) {
                    ok = false;
                    break;
                }
                ChainStep step;
                step.task = adm[rng.uniform_int(0, static_cast<int>(adm.size()) - 1)];
                step.goal_id = rng.uniform_int(
                    0, static_cast<int>(reg.at(step.task).instructions.size()) - 1);
                Context ctx{nominal, step.task, step.goal_id, ContextOrigin::env_reset};
                try {
                    const Trajectory t = scripted_expert(ctx, env, rng);
                    nominal = t.states.back();
                } catch (const ExpertFailure&) {
                    ok = false;
                    break;
                }
                chain.steps.push_back(step);
                prev = step.task;
            }
            if (ok) {
                chains.push_back(std::move(chain));
                built = true;
            }
        }
        if (!built)
            throw ConfigError("could not generate an executable chain after bounded retries");
    }
    return chains;
}

ChainReport eval_lhmtlc(const RolloutPolicy& policy, const std::vector<Chain>& chains,
                        const EnvConfig& env_cfg, const TaskRegistry& reg,
                        const RolloutParams& rp, std::uint64_t seed, int workers) {
    const int n = static_cast<int>(chains.size());
    std::vector<int> completed(n, 0);
    const int w = std::max(1, workers);
    std::vector<std::unique_ptr<RolloutPolicy>> pols;
    std::vector<std::unique_ptr<PushWorldEnv>> envs;
    for (int i = 0; i < w; ++i) {
        pols.push_back(policy.clone());
        envs.push_back(std::make_unique<PushWorldEnv>(env_cfg, reg));
    }
    parallel_for(n, w, [&](int c, int worker) {
        EnvState state = chains[c].s0;
        int done = 0;
        for (std::size_t k = 0; k < chains[c].steps.size(); ++k) {
            const auto& step = chains[c].steps[k];
            Context ctx{state, step.task, step.goal_id, ContextOrigin::env_reset};
            Trajectory t = pols[worker]->run(*envs[worker], ctx, rp,
                                             derive_seed(seed, c, k));
            if (!t.success) break;
            state = t.states.back();
            ++done;
        }
        completed[c] = done;
    });
    const int chain_len = chains.empty() ? 0 : static_cast<int>(chains[0].steps.size());
    return ChainReport::from_completed(completed, chain_len);
}

CrossEvalMatrix cross_eval(const std::vector<std::pair<std::string, const PolicyBundle*>>& hls,
                           const std::vector<std::pair<std::string, const PolicyBundle*>>& lls,
                           const std::vector<Chain>& chains, const EnvConfig& env_cfg,
                           const TaskRegistry& reg, const RolloutParams& rp,
                           std::uint64_t seed, int workers) {
    CrossEvalMatrix m;
    for (const auto& [id, b] : lls) {
        m.ll_ids.push_back(id);
        (void)b;
    }
    for (const auto& [id, b] : hls) {
        m.hl_ids.push_back(id);
        (void)b;
    }
    for (const auto& [ll_id, ll_bundle] : lls) {
        for (const auto& [hl_id, hl_bundle] : hls) {
            if (hl_bundle->hl.cfg.image != ll_bundle->ll.cfg.image)
                throw ConfigError("cross_eval: incompatible observation shapes between " +
                                  hl_id + " and " + ll_id);
            PolicyBundle paired;
            paired.hl = hl_bundle->hl.clone();
            paired.ll = ll_bundle->ll.clone();
            HierarchicalPolicy pol(std::move(paired));
            m.cells.push_back(
                eval_lhmtlc(pol, chains, env_cfg, reg, rp, seed, workers));
        }
    }
    return m;
}

MtlcReport eval_gt_guided(ControllerParams& ll, const std::vector<Context>& contexts,
                          const std::vector<Trajectory>& expert_trajs,
                          const EnvConfig& env_cfg, const TaskRegistry& reg, int subgoals,
                          std::uint64_t seed, int workers) {
    if (contexts.size() != expert_trajs.size())
        throw ConfigError("gt-guided eval: contexts and trajectories must pair up");
    const int n = static_cast<int>(contexts.size());
    std::vector<int> success(n, 0);
    const int w = std::max(1, workers);
    std::vector<ControllerParams> lls;
    std::vector<std::unique_ptr<PushWorldEnv>> envs;
    for (int i = 0; i < w; ++i) {
        lls.push_back(ll.clone());
        envs.push_back(std::make_unique<PushWorldEnv>(env_cfg, reg));
    }
    parallel_for(n, w, [&](int i, int worker) {
        const Context& ctx = contexts[i];
        auto [o0, plan] =
            extract_subgoals(expert_trajs[i], subgoals, env_cfg.height, env_cfg.width);
        PushWorldEnv& env = *envs[worker];
        env.begin_episode(ctx.initial_state);
        std::vector<float> cur = o0;
        bool done = false;
        const int chunk = lls[worker].cfg.chunk;
        for (int g = 0; g < subgoals && !done; ++g) {
            Rng rng(derive_seed(seed ^ kGtTag, i, g));
            const ActionChunk ac = ll_predict(lls[worker], cur, plan.frame(g), rng);
            for (int k = 0; k < chunk; ++k) {
                env.step(ac.actions[k]);
                if (env.done(ctx.task)) {
                    done = true;
                    break;
                }
            }
            cur = dequantize_observation(
                PushWorldEnv::render_quantized(env_cfg, env.state()));
        }
        success[i] = done ? 1 : 0;
    });
    return summarize_mtlc(contexts, success, reg, seed);
}

std::array<float, 8> diversity_features(const EnvState& s) {
    return {s.block[0].x, s.block[0].y, s.block[1].x, s.block[1].y,
            s.block[2].x, s.block[2].y, s.effector.x, s.effector.y};
}

std::vector<TimingRow> timing_study(const PolicyBundle& bundle,
                                    const std::vector<std::pair<std::string, SamplerConfig>>& configs,
                                    const std::vector<Context>& settings,
                                    const EnvConfig& env_cfg, const TaskRegistry& reg,
                                    RolloutParams rp, std::uint64_t seed) {
    std::vector<TimingRow> rows;
    PushWorldEnv env(env_cfg, reg);
    for (const auto& [label, sampler] : configs) {
        HierarchicalPolicy pol(bundle.clone());
        rp.hl_sampler = sampler;
        std::int64_t actions = 0;
        int hits = 0;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t i = 0; i < settings.size(); ++i) {
            Trajectory t = pol.run(env, settings[i], rp, derive_seed(seed, i));
            actions += t.num_actions();
            hits += t.success ? 1 : 0;
        }
        const auto t1 = std::chrono::steady_clock::now();
        TimingRow row;
        row.label = label;
        row.actions = actions;
        row.sec_per_action =
            std::chrono::duration<double>(t1 - t0).count() / std::max<std::int64_t>(1, actions);
        row.mean_sr = settings.empty() ? 0.0 : static_cast<double>(hits) / settings.size();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace hdexpit
