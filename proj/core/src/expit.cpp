#include "hdexpit/expit.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hdexpit {

namespace {

constexpr std::uint64_t kResetCtxTag = 0x52435458ull;
constexpr std::uint64_t kReplayCtxTag = 0x50435458ull;
constexpr std::uint64_t kCollectTag = 0x434f4c4cull;
constexpr std::uint64_t kHlTrainTag = 0x48545241ull;
constexpr std::uint64_t kLlTrainTag = 0x4c545241ull;
constexpr std::uint64_t kInitTag = 0x494e4954ull;

void parallel_for(int n, int workers, const std::function<void(int, int)>& body) {
    // body(index, worker); static striped assignment keeps runs deterministic
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

HlBatch make_hl_batch(const Dataset& d, const TaskRegistry& reg, const HlModelConfig& cfg,
                      int batch, Rng& rng) {
    HlBatch b;
    b.B = batch;
    const std::size_t fpx = static_cast<std::size_t>(3) * cfg.image * cfg.image;
    const std::size_t D = static_cast<std::size_t>(cfg.frames) * fpx;
    b.x0.resize(batch * D);
    b.o0.resize(batch * fpx);
    b.goal_rows.resize(batch);
    for (int i = 0; i < batch; ++i) {
        const auto& traj = d.at(rng.uniform_int(0, d.size() - 1));
        auto [o0, plan] = extract_subgoals(traj, cfg.frames, cfg.image, cfg.image);
        std::copy(plan.data.begin(), plan.data.end(), b.x0.begin() + i * D);
        std::copy(o0.begin(), o0.end(), b.o0.begin() + i * fpx);
        b.goal_rows[i] = reg.goal_index(reg.index_of(traj.task_id), traj.goal_id);
    }
    return b;
}

LlBatch make_ll_batch(const Dataset& d, const LlModelConfig& cfg, int batch, Rng& rng) {
    LlBatch b;
    b.B = batch;
    const std::size_t fpx = static_cast<std::size_t>(3) * cfg.image * cfg.image;
    const std::size_t D = static_cast<std::size_t>(cfg.chunk) * cfg.action_dim;
    b.o_pairs.resize(batch * 2 * fpx);
    b.chunks.resize(batch * D);
    for (int i = 0; i < batch; ++i) {
        const auto& traj = d.at(rng.uniform_int(0, d.size() - 1));
        const auto smp = extract_chunk(traj, rng, cfg.n_min, cfg.chunk, cfg.image, cfg.image);
        std::copy(smp.o_source.begin(), smp.o_source.end(),
                  b.o_pairs.begin() + i * 2 * fpx);
        std::copy(smp.o_target.begin(), smp.o_target.end(),
                  b.o_pairs.begin() + i * 2 * fpx + fpx);
        const auto norm = normalize_chunk(smp.chunk, cfg.a_max);
        std::copy(norm.begin(), norm.end(), b.chunks.begin() + i * D);
    }
    return b;
}

}  // namespace

void ExpItConfig::validate(int subgoals, int chunk) const {
    if (n_iter < 0) throw ConfigError("n_iter must be non-negative");
    if (k_trials < 1) throw ConfigError("k_trials must be at least 1");
    if (n_data < 1) throw ConfigError("n_data must be positive");
    if (n0_hl < 0 || n0_ll < 0) throw ConfigError("gradient budgets must be non-negative");
    if (batch_hl < 1 || batch_ll < 1) throw ConfigError("batch sizes must be positive");
    if (mix.count_reset < 0 || mix.count_replayed < 0)
        throw ConfigError("context mix counts must be non-negative");
    if (t_max < subgoals * chunk)
        throw ConfigError("t_max must allow at least one full plan (M*n steps)");
    if (workers < 1) throw ConfigError("workers must be at least 1");
}

std::pair<std::int64_t, std::int64_t> budget_schedule(AggregationStrategy strategy, int t,
                                                      std::int64_t n0_hl,
                                                      std::int64_t n0_ll) {
    if (t < 0) throw ConfigError("iteration index must be non-negative");
    if (t == 0) return {n0_hl, n0_ll};
    if (strategy == AggregationStrategy::merge)
        return {n0_hl + n0_hl * t / 2, n0_ll + n0_ll * t / 2};
    return {n0_hl / 5, n0_ll / 10};
}

ContextSet build_context_set(const Dataset& d, const EnvConfig& env_cfg,
                             const TaskRegistry& reg, const ContextMix& mix,
                             std::uint64_t seed) {
    if (mix.count_replayed > 0 && d.size() == 0)
        throw ConfigError("expert-replayed contexts need a non-empty source dataset");
    ContextSet set;
    set.source_digest = d.digest();
    constexpr int kMaxAttempts = 300;

    for (int task = 0; task < reg.size(); ++task) {
        for (int origin = 0; origin < 2; ++origin) {
            const int want = origin == 0 ? mix.count_reset : mix.count_replayed;
            const std::uint64_t tag = origin == 0 ? kResetCtxTag : kReplayCtxTag;
            for (int slot = 0; slot < want; ++slot) {
                bool accepted = false;
                for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
                    Rng rng(derive_seed(seed ^ tag, task, slot, attempt));
                    Context ctx;
                    if (origin == 0) {
                        ctx.initial_state = PushWorldEnv::reset_state(env_cfg, rng);
                        ctx.origin = ContextOrigin::env_reset;
                    } else {
                        const auto& src = d.at(rng.uniform_int(0, d.size() - 1));
                        ctx.initial_state = src.states.back();
                        ctx.origin = ContextOrigin::expert_replayed;
                    }
                    ctx.task = task;
                    ctx.goal_id = rng.uniform_int(
                        0, static_cast<int>(reg.at(task).instructions.size()) - 1);
                    const auto adm = admissible_tasks(env_cfg, reg, ctx.initial_state);
                    if (std::find(adm.begin(), adm.end(), task) == adm.end()) continue;
                    set.contexts.push_back(ctx);
                    accepted = true;
                }
                if (!accepted)
                    throw ConfigError("could not build an admissible context for task " +
                                      reg.at(task).id + " within the retry budget");
            }
        }
    }
    return set;
}

Dataset collect_trajectories(const RolloutPolicy& policy, const ContextSet& contexts,
                             const EnvConfig& env_cfg, const TaskRegistry& reg,
                             const RolloutParams& rp, int k_trials, int n_data,
                             std::uint64_t seed, int workers, int created_iteration,
                             CollectStats* stats) {
    if (k_trials < 1) throw ConfigError("k_trials must be at least 1");
    const int n = static_cast<int>(contexts.contexts.size());

    struct Result {
        bool success = false;
        int trials = 0;
        Trajectory traj;
    };
    std::vector<Result> results(n);

    std::vector<std::unique_ptr<RolloutPolicy>> pols;
    std::vector<std::unique_ptr<PushWorldEnv>> envs;
    const int w = std::max(1, workers);
    for (int i = 0; i < w; ++i) {
        pols.push_back(policy.clone());
        envs.push_back(std::make_unique<PushWorldEnv>(env_cfg, reg));
    }

    parallel_for(n, w, [&](int idx, int worker) {
        const Context& ctx = contexts.contexts[idx];
        Result& r = results[idx];
        for (int k = 1; k <= k_trials; ++k) {
            Trajectory t = pols[worker]->run(*envs[worker], ctx,
                                             rp, derive_seed(seed ^ kCollectTag, idx, k));
            r.trials = k;
            if (t.success) {
                r.success = true;
                r.traj = std::move(t);
                break;
            }
        }
        if (!r.success) r.trials = k_trials;
    });

    // Sequential admission in context order; the parallel phase above never
    // influences which trajectories are admitted.
    DatasetMeta meta;
    meta.env_digest = env_digest(env_cfg, reg);
    meta.obs_h = env_cfg.height;
    meta.obs_w = env_cfg.width;
    meta.created_iteration = created_iteration;
    Dataset out(meta);
    CollectStats st;
    auto all_full = [&]() {
        for (int t = 0; t < reg.size(); ++t)
            if (out.per_task_count(reg.at(t).id) < n_data) return false;
        return true;
    };
    for (int idx = 0; idx < n; ++idx) {
        const Context& ctx = contexts.contexts[idx];
        const Result& r = results[idx];
        const std::string& task_id = reg.at(ctx.task).id;
        const bool quota_open = out.per_task_count(task_id) < n_data;
        // without an admission the trial loop would have run to exhaustion
        st.rollouts += (r.success && quota_open) ? r.trials : k_trials;
        const std::string origin_key =
            ctx.origin == ContextOrigin::expert_replayed ? "expert_replayed" : "env_reset";
        st.rollouts_by_origin[origin_key] +=
            (r.success && quota_open) ? r.trials : k_trials;
        if (r.success && quota_open) {
            Trajectory t = r.traj;
            t.origin = TrajOrigin::collected;
            t.context_origin = ctx.origin;
            out.add(std::move(t));
            st.successes[task_id] += 1;
        }
        if (all_full()) break;
    }
    for (int t = 0; t < reg.size(); ++t) {
        const int got = out.per_task_count(reg.at(t).id);
        if (got < n_data) st.shortfall[reg.at(t).id] = n_data - got;
    }
    out.meta().quota_shortfall = st.shortfall;
    if (stats) *stats = st;
    return out;
}

PolicyBundle supervised_training(PolicyBundle init, const Dataset& d,
                                 const TrainBudgets& budgets, int batch_hl, int batch_ll,
                                 const TaskRegistry& reg, std::uint64_t seed, int workers,
                                 const TrainProgressFn& progress) {
    PolicyBundle bundle = std::move(init);
    if ((budgets.hl > 0 || budgets.ll > 0) && d.size() == 0)
        throw ConfigError("supervised training needs a non-empty dataset");

    bundle.lineage.dataset_digests.push_back(d.digest());
    bundle.lineage.hl_budgets.push_back(budgets.hl);
    bundle.lineage.ll_budgets.push_back(budgets.ll);

    if (budgets.hl > 0) {
        Rng rng(derive_seed(seed, kHlTrainTag));
        HlTrainer trainer(bundle.hl, workers);
        for (std::int64_t s = 0; s < budgets.hl; ++s) {
            const auto batch = make_hl_batch(d, reg, bundle.hl.cfg, batch_hl, rng);
            const float loss = trainer.step(batch, rng);
            if (progress && (s % 1000 == 0 || s + 1 == budgets.hl))
                progress("hl", s + 1, budgets.hl, loss);
        }
    }
    if (budgets.ll > 0) {
        Rng rng(derive_seed(seed, kLlTrainTag));
        LlTrainer trainer(bundle.ll, workers);
        for (std::int64_t s = 0; s < budgets.ll; ++s) {
            const auto batch = make_ll_batch(d, bundle.ll.cfg, batch_ll, rng);
            const float loss = trainer.step(batch, rng);
            if (progress && (s % 1000 == 0 || s + 1 == budgets.ll))
                progress("ll", s + 1, budgets.ll, loss);
        }
    }
    return bundle;
}

void write_ledger_json(const std::vector<IterationLedger>& ledger, const std::string& path) {
    json out;
    out["format"] = "hdexpit-ledger-1";
    json items = json::array();
    for (const auto& it : ledger) {
        json e;
        e["t"] = it.t;
        e["hl_updates"] = it.hl_updates;
        e["ll_updates"] = it.ll_updates;
        e["cumulative_hl"] = it.cumulative_hl;
        e["cumulative_ll"] = it.cumulative_ll;
        e["rollouts_reset"] = it.rollouts_reset;
        e["rollouts_replayed"] = it.rollouts_replayed;
        e["successes_reset"] = it.successes_reset;
        e["successes_replayed"] = it.successes_replayed;
        e["dataset_size"] = it.dataset_size;
        e["collected_size"] = it.collected_size;
        items.push_back(e);
    }
    out["iterations"] = items;
    std::ofstream f(path);
    if (!f) throw IntegrityError("cannot write ledger " + path);
    f << out.dump(2) << "\n";
}

std::vector<IterationLedger> read_ledger_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IntegrityError("cannot read ledger " + path);
    json in;
    f >> in;
    if (in.value("format", "") != "hdexpit-ledger-1")
        throw IntegrityError("ledger format mismatch in " + path);
    std::vector<IterationLedger> out;
    for (const auto& e : in.at("iterations")) {
        IterationLedger it;
        it.t = e.at("t").get<int>();
        it.hl_updates = e.at("hl_updates").get<std::int64_t>();
        it.ll_updates = e.at("ll_updates").get<std::int64_t>();
        it.cumulative_hl = e.at("cumulative_hl").get<std::int64_t>();
        it.cumulative_ll = e.at("cumulative_ll").get<std::int64_t>();
        it.rollouts_reset = e.at("rollouts_reset").get<std::int64_t>();
        it.rollouts_replayed = e.at("rollouts_replayed").get<std::int64_t>();
        it.successes_reset = e.at("successes_reset").get<std::map<std::string, int>>();
        it.successes_replayed = e.at("successes_replayed").get<std::map<std::string, int>>();
        it.dataset_size = e.at("dataset_size").get<int>();
        it.collected_size = e.at("collected_size").get<int>();
        out.push_back(it);
    }
    return out;
}

ExpItResult expit_run(const ExpItRunConfig& cfg, const TrainProgressFn& progress) {
    cfg.env.validate();
    cfg.expit.validate(cfg.hl.frames, cfg.ll.chunk);
    const TaskRegistry reg = TaskRegistry::standard();
    const std::uint64_t digest = env_digest(cfg.env, reg);

    fs::create_directories(cfg.run_dir);
    ExpItResult result;

    auto iter_dir = [&](int t) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "iter_%03d", t);
        return (fs::path(cfg.run_dir) / buf).string();
    };
    auto exists = [](const std::string& p) { return fs::exists(p); };

    const std::string ledger_path = (fs::path(cfg.run_dir) / "ledger.json").string();
    if (exists(ledger_path)) result.ledger = read_ledger_json(ledger_path);

    RolloutParams rp;
    rp.subgoals = cfg.hl.frames;
    rp.chunk = cfg.ll.chunk;
    rp.t_max = cfg.expit.t_max;
    rp.hl_sampler = cfg.expit.collect_sampler;

    Dataset current = load_dataset(cfg.d0_path, digest);
    PolicyBundle prev_bundle;  // used by the replace strategy
    bool have_prev = false;

    for (int t = 0; t <= cfg.expit.n_iter; ++t) {
        const std::string dir = iter_dir(t);
        fs::create_directories(dir);
        const std::string bundle_dir = (fs::path(dir) / "bundle").string();
        const auto budgets = budget_schedule(cfg.expit.strategy, t, cfg.expit.n0_hl,
                                             cfg.expit.n0_ll);

        IterationLedger led;
        led.t = t;
        led.hl_updates = budgets.first;
        led.ll_updates = budgets.second;
        led.cumulative_hl = budgets.first;
        led.cumulative_ll = budgets.second;
        if (t > 0 && static_cast<int>(result.ledger.size()) >= t) {
            led.cumulative_hl += result.ledger[t - 1].cumulative_hl;
            led.cumulative_ll += result.ledger[t - 1].cumulative_ll;
        }
        led.dataset_size = current.size();

        PolicyBundle bundle;
        if (exists((fs::path(bundle_dir) / "ll.ckpt").string())) {
            bundle = load_bundle(bundle_dir);
            bundle.iteration = t;
        } else {
            PolicyBundle start;
            if (cfg.expit.strategy == AggregationStrategy::replace && have_prev) {
                start = prev_bundle.clone();
            } else {
                // merge always restarts from the same random initialization
                start.hl = make_planner(cfg.hl, derive_seed(cfg.master_seed, kInitTag, 1));
                start.ll = make_controller(cfg.ll, derive_seed(cfg.master_seed, kInitTag, 2));
            }
            TrainBudgets tb{budgets.first, budgets.second};
            bundle = supervised_training(std::move(start), current, tb, cfg.expit.batch_hl,
                                         cfg.expit.batch_ll, reg,
                                         derive_seed(cfg.master_seed, 0x54524e00ull + t),
                                         cfg.expit.workers, progress);
            bundle.iteration = t;
            bundle.lineage.strategy = to_string(cfg.expit.strategy);
            save_bundle(bundle, bundle_dir);
        }
        result.bundle_dirs.push_back(bundle_dir);
        prev_bundle = bundle.clone();
        have_prev = true;

        if (t == cfg.expit.n_iter) {
            if (static_cast<int>(result.ledger.size()) <= t) {
                result.ledger.push_back(led);
                write_ledger_json(result.ledger, ledger_path);
            }
            break;
        }

        // collection cycle: reset-origin and replayed-origin passes, union,
        // then aggregation into the next training set
        const std::string r_dir = (fs::path(dir) / "R").string();
        const std::string d_next_dir = (fs::path(dir) / "D").string();
        Dataset next;
        if (exists((fs::path(d_next_dir) / "manifest.json").string()) &&
            exists((fs::path(r_dir) / "manifest.json").string())) {
            next = load_dataset(d_next_dir, digest);
            if (static_cast<int>(result.ledger.size()) <= t) {
                Dataset r = load_dataset(r_dir, digest);
                led.collected_size = r.size();
                result.ledger.push_back(led);
                write_ledger_json(result.ledger, ledger_path);
            }
        } else {
            std::unique_ptr<RolloutPolicy> policy_holder;
            if (cfg.oracle_collection)
                policy_holder = std::make_unique<ScriptedExpertPolicy>();
            else
                policy_holder = std::make_unique<HierarchicalPolicy>(bundle.clone());
            RolloutPolicy& policy = *policy_holder;

            ContextMix reset_mix{cfg.expit.mix.count_reset, 0};
            ContextMix replay_mix{0, cfg.expit.mix.count_replayed};
            CollectStats st_reset, st_replayed;
            const std::uint64_t cseed = derive_seed(cfg.master_seed, 0x434c4c00ull + t);

            const auto ctx_reset = build_context_set(current, cfg.env, reg, reset_mix,
                                                     derive_seed(cseed, 1));
            Dataset r_reset = collect_trajectories(policy, ctx_reset, cfg.env, reg, rp,
                                                   cfg.expit.k_trials, cfg.expit.n_data,
                                                   derive_seed(cseed, 2),
                                                   cfg.expit.workers, t, &st_reset);
            const auto ctx_replay = build_context_set(current, cfg.env, reg, replay_mix,
                                                      derive_seed(cseed, 3));
            Dataset r_replayed = collect_trajectories(policy, ctx_replay, cfg.env, reg, rp,
                                                      cfg.expit.k_trials, cfg.expit.n_data,
                                                      derive_seed(cseed, 4),
                                                      cfg.expit.workers, t, &st_replayed);

            Dataset collected = aggregate(r_reset, r_replayed, AggregationStrategy::merge);
            collected.meta().created_iteration = t;
            collected.meta().strategy.clear();
            collected.meta().parents = {r_reset.digest(), r_replayed.digest()};
            if (cfg.expit.strict_quota &&
                !(st_reset.shortfall.empty() && st_replayed.shortfall.empty())) {
                std::string who;
                for (const auto& [task, miss] : st_reset.shortfall)
                    who += " " + task + ":-" + std::to_string(miss);
                for (const auto& [task, miss] : st_replayed.shortfall)
                    who += " " + task + ":-" + std::to_string(miss);
                throw IntegrityError("collection quotas unfilled:" + who);
            }
            save_dataset(collected, r_dir);

            next = aggregate(current, collected, cfg.expit.strategy);
            next.meta().created_iteration = t + 1;
            save_dataset(next, d_next_dir);

            led.rollouts_reset = st_reset.rollouts;
            led.rollouts_replayed = st_replayed.rollouts;
            led.successes_reset = st_reset.successes;
            led.successes_replayed = st_replayed.successes;
            led.collected_size = collected.size();
            if (static_cast<int>(result.ledger.size()) <= t) {
                result.ledger.push_back(led);
                write_ledger_json(result.ledger, ledger_path);
            }
        }
        result.dataset_dirs.push_back(d_next_dir);
        current = std::move(next);
    }
    return result;
}

}  // namespace hdexpit
