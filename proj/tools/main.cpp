#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hdexpit/config.hpp"
#include "hdexpit/evals.hpp"
#include "hdexpit/expit.hpp"
#include "hdexpit/reports.hpp"

namespace fs = std::filesystem;
using namespace hdexpit;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
    bool strict_quota = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_path.empty() ? desk_run_config() : load_run_config(g.config_path);
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.env.master_seed = g.seed;
    }
    if (!g.out.empty()) cfg.out = g.out;
    if (g.workers > 0) cfg.workers = g.workers;
    if (g.strict_quota) cfg.expit.strict_quota = true;
    cfg.expit.workers = cfg.workers;
    cfg.validate();
    return cfg;
}

// Guards a run directory against concurrent writers.
class RunLock {
public:
    explicit RunLock(const std::string& dir) : path_(fs::path(dir) / "run.lock") {
        fs::create_directories(dir);
        if (fs::exists(path_))
            throw ConfigError("run directory is locked by another process: " +
                              path_.string());
        std::ofstream f(path_);
        f << "locked\n";
    }
    ~RunLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

private:
    fs::path path_;
};

void progress_printer(const std::string& stage, std::int64_t step, std::int64_t total,
                      float loss) {
    std::fprintf(stderr, "[train] %s %lld/%lld loss %.5f\n", stage.c_str(),
                 static_cast<long long>(step), static_cast<long long>(total), loss);
}

Dataset build_expert_dataset(const RunConfig& cfg, const TaskRegistry& reg) {
    DatasetMeta meta;
    meta.env_digest = env_digest(cfg.env, reg);
    meta.obs_h = cfg.env.height;
    meta.obs_w = cfg.env.width;
    Dataset d(meta);
    PushWorldEnv env(cfg.env, reg);
    for (int task = 0; task < reg.size(); ++task) {
        for (int i = 0; i < cfg.data.demos_per_task; ++i) {
            bool done = false;
            for (int attempt = 0; attempt < 16 && !done; ++attempt) {
                Rng rng(derive_seed(cfg.seed, 0xD0D0ull + task, i, attempt));
                Context ctx;
                ctx.initial_state = PushWorldEnv::reset_state(cfg.env, rng);
                ctx.task = task;
                ctx.goal_id = rng.uniform_int(
                    0, static_cast<int>(reg.at(task).instructions.size()) - 1);
                ctx.origin = ContextOrigin::env_reset;
                try {
                    d.add(scripted_expert(ctx, env, rng));
                    done = true;
                } catch (const ExpertFailure&) {
                }
            }
            if (!done)
                throw IntegrityError("expert could not complete task " + reg.at(task).id +
                                     " within the retry budget");
        }
    }
    return d;
}

ExpItRunConfig to_expit_run(const RunConfig& cfg, const std::string& d0,
                            const std::string& run_dir) {
    ExpItRunConfig rc;
    rc.env = cfg.env;
    rc.hl = cfg.hl;
    rc.ll = cfg.ll;
    rc.expit = cfg.expit;
    rc.master_seed = cfg.seed;
    rc.d0_path = d0;
    rc.run_dir = run_dir;
    return rc;
}

RolloutParams eval_rollout_params(const RunConfig& cfg) {
    RolloutParams rp;
    rp.subgoals = cfg.hl.frames;
    rp.chunk = cfg.ll.chunk;
    rp.t_max = cfg.expit.t_max;
    rp.hl_sampler = cfg.expit.eval_sampler;
    return rp;
}

int cmd_expert_data(const RunConfig& cfg) {
    const auto reg = TaskRegistry::standard();
    fs::create_directories(cfg.out);
    const auto d = build_expert_dataset(cfg, reg);
    // every stored record re-verifies against the reward oracle
    for (const auto& t : d.trajectories()) {
        Context ctx;
        ctx.initial_state = t.states.front();
        ctx.task = reg.index_of(t.task_id);
        ctx.goal_id = t.goal_id;
        if (reward(cfg.env, reg, t, ctx) != 1)
            throw IntegrityError("expert record failed reward re-verification");
    }
    save_dataset(d, cfg.out);
    write_text_file((fs::path(cfg.out) / "tasks.json").string(), reg.to_json() + "\n");
    std::printf("expert dataset: %d trajectories -> %s (digest %016llx)\n", d.size(),
                cfg.out.c_str(), static_cast<unsigned long long>(d.digest()));
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_path,
              const std::string& init_bundle) {
    const auto reg = TaskRegistry::standard();
    const auto d = load_dataset(data_path, env_digest(cfg.env, reg));
    PolicyBundle start;
    if (!init_bundle.empty()) {
        start = load_bundle(init_bundle);
    } else {
        start.hl = make_planner(cfg.hl, derive_seed(cfg.seed, 0x494e4954ull, 1));
        start.ll = make_controller(cfg.ll, derive_seed(cfg.seed, 0x494e4954ull, 2));
        start.hl.adam = nn::Adam(nn::AdamConfig{cfg.hl_lr, 0.9, 0.999, 1e-8});
        start.ll.adam = nn::Adam(nn::AdamConfig{cfg.ll_lr, 0.9, 0.999, 1e-8});
    }
    TrainBudgets tb{cfg.expit.n0_hl, cfg.expit.n0_ll};
    auto bundle = supervised_training(std::move(start), d, tb, cfg.expit.batch_hl,
                                      cfg.expit.batch_ll, reg,
                                      derive_seed(cfg.seed, 0x54524e00ull), cfg.workers,
                                      progress_printer);
    save_bundle(bundle, cfg.out);
    std::printf("trained bundle -> %s\n", cfg.out.c_str());
    return 0;
}

int cmd_collect(const RunConfig& cfg, const std::string& bundle_path,
                const std::string& data_path) {
    const auto reg = TaskRegistry::standard();
    const auto d = load_dataset(data_path, env_digest(cfg.env, reg));
    PolicyBundle bundle = load_bundle(bundle_path);
    HierarchicalPolicy policy(std::move(bundle));
    RolloutParams rp = eval_rollout_params(cfg);
    rp.hl_sampler = cfg.expit.collect_sampler;

    const auto ctxs = build_context_set(d, cfg.env, reg, cfg.expit.mix,
                                        derive_seed(cfg.seed, 0x434f4cull));
    CollectStats stats;
    auto r = collect_trajectories(policy, ctxs, cfg.env, reg, rp, cfg.expit.k_trials,
                                  cfg.expit.n_data, derive_seed(cfg.seed, 0x434f4c32ull),
                                  cfg.workers, 0, &stats);
    if (cfg.expit.strict_quota && !stats.shortfall.empty()) {
        std::string who;
        for (const auto& [task, miss] : stats.shortfall)
            who += " " + task + ":-" + std::to_string(miss);
        throw IntegrityError("collection quotas unfilled:" + who);
    }
    save_dataset(r, cfg.out);
    std::printf("collected %d trajectories over %lld rollouts -> %s\n", r.size(),
                static_cast<long long>(stats.rollouts), cfg.out.c_str());
    return 0;
}

int cmd_expit(const RunConfig& cfg, const std::string& d0_path) {
    const auto reg = TaskRegistry::standard();
    fs::create_directories(cfg.out);
    if (fs::exists(fs::path(cfg.out) / "DONE")) {
        std::printf("run already complete: %s\n", cfg.out.c_str());
        return 0;
    }
    RunLock lock(cfg.out);
    write_text_file((fs::path(cfg.out) / "config.json").string(), run_config_to_json(cfg));
    write_text_file((fs::path(cfg.out) / "tasks.json").string(), reg.to_json() + "\n");

    std::string d0 = d0_path;
    if (d0.empty()) {
        d0 = (fs::path(cfg.out) / "D0").string();
        if (!fs::exists(fs::path(d0) / "manifest.json")) {
            std::fprintf(stderr, "[expit] generating the expert dataset\n");
            save_dataset(build_expert_dataset(cfg, reg), d0);
        }
    }
    const auto result = expit_run(to_expit_run(cfg, d0, cfg.out), progress_printer);
    write_text_file((fs::path(cfg.out) / "DONE").string(), "ok\n");
    std::printf("expit run complete: %zu iterations -> %s\n", result.ledger.size(),
                cfg.out.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& protocol,
             const std::string& bundle_path, const std::string& bundle_path2,
             const std::string& data_path) {
    const auto reg = TaskRegistry::standard();
    fs::create_directories(cfg.out);
    const auto out = [&](const std::string& name) {
        return (fs::path(cfg.out) / name).string();
    };

    if (protocol == "mtlc" || protocol == "noreplan") {
        const auto bundle = load_bundle(bundle_path);
        const auto settings = make_mtlc_settings(cfg.env, reg, cfg.eval.settings_per_task,
                                                 derive_seed(cfg.seed, 0x45564131ull));
        save_settings_json(settings, reg, out("settings.json"));
        HierarchicalPolicy policy(bundle.clone());
        const RolloutParams rp = eval_rollout_params(cfg);
        const std::uint64_t eseed = derive_seed(cfg.seed, 0x45564132ull);
        const auto rep =
            protocol == "mtlc"
                ? eval_mtlc(policy, settings, cfg.env, reg, rp, eseed, cfg.workers)
                : eval_no_replan(policy, settings, cfg.env, reg, rp, eseed, cfg.workers);
        write_text_file(out(protocol + ".json"), mtlc_report_json(rep));
        write_text_file(out(protocol + ".csv"), mtlc_report_csv(rep));
        std::vector<std::pair<std::string, double>> bars(rep.per_task_sr.begin(),
                                                         rep.per_task_sr.end());
        write_text_file(out(protocol + ".svg"),
                        svg_bar_chart("success rate per task", bars));
        std::printf("%s mean SR %.4f\n", protocol.c_str(), rep.mean_sr);
        return 0;
    }
    if (protocol == "lh") {
        const auto bundle = load_bundle(bundle_path);
        const auto chains_path = out("chains.json");
        std::vector<Chain> chains;
        if (fs::exists(chains_path)) {
            chains = load_chains_json(chains_path);
        } else {
            chains = generate_chains(cfg.env, reg, cfg.eval.num_chains, cfg.eval.chain_len,
                                     derive_seed(cfg.seed, 0x4c48ull));
            save_chains_json(chains, chains_path);
        }
        HierarchicalPolicy policy(bundle.clone());
        const auto rep = eval_lhmtlc(policy, chains, cfg.env, reg, eval_rollout_params(cfg),
                                     derive_seed(cfg.seed, 0x4c4832ull), cfg.workers);
        write_text_file(out("lh.json"), chain_report_json(rep));
        write_text_file(out("lh.csv"), chain_report_csv(rep));
        std::vector<std::pair<std::string, double>> bars;
        for (std::size_t k = 0; k < rep.counts.size(); ++k)
            bars.push_back({std::to_string(k + 1) + " in a row", rep.counts[k]});
        write_text_file(out("lh.svg"), svg_bar_chart("chain completion", bars));
        std::printf("lh avg_len %.4f\n", rep.avg_len);
        return 0;
    }
    if (protocol == "cross") {
        const auto a = load_bundle(bundle_path);
        const auto b = load_bundle(bundle_path2);
        const auto chains = generate_chains(cfg.env, reg, cfg.eval.num_chains,
                                            cfg.eval.chain_len,
                                            derive_seed(cfg.seed, 0x4c48ull));
        const auto m = cross_eval({{"hl_a", &a}, {"hl_b", &b}},
                                  {{"ll_a", &a}, {"ll_b", &b}}, chains, cfg.env, reg,
                                  eval_rollout_params(cfg), derive_seed(cfg.seed, 0x5845ull),
                                  cfg.workers);
        write_text_file(out("cross.csv"), cross_eval_csv(m));
        std::printf("cross matrix written (%zux%zu)\n", m.ll_ids.size(), m.hl_ids.size());
        return 0;
    }
    if (protocol == "gt") {
        auto bundle = load_bundle(bundle_path);
        PushWorldEnv env(cfg.env, reg);
        std::vector<Context> contexts;
        std::vector<Trajectory> trajs;
        for (int task = 0; task < reg.size(); ++task)
            for (int i = 0; i < cfg.eval.settings_per_task; ++i) {
                Rng rng(derive_seed(cfg.seed, 0x47541111ull, task, i));
                Context ctx{PushWorldEnv::reset_state(cfg.env, rng), task, 0,
                            ContextOrigin::env_reset};
                trajs.push_back(scripted_expert(ctx, env, rng));
                contexts.push_back(ctx);
            }
        const auto rep = eval_gt_guided(bundle.ll, contexts, trajs, cfg.env, reg,
                                        cfg.hl.frames, derive_seed(cfg.seed, 0x4754ull),
                                        cfg.workers);
        write_text_file(out("gt.json"), mtlc_report_json(rep));
        write_text_file(out("gt.csv"), mtlc_report_csv(rep));
        std::printf("gt-guided mean SR %.4f\n", rep.mean_sr);
        return 0;
    }
    if (protocol == "timing") {
        const auto bundle = load_bundle(bundle_path);
        const auto settings = make_mtlc_settings(cfg.env, reg, cfg.eval.settings_per_task,
                                                 derive_seed(cfg.seed, 0x45564131ull));
        std::vector<std::pair<std::string, SamplerConfig>> configs;
        SamplerConfig ddpm;
        ddpm.kind = SamplerKind::ddpm;
        ddpm.guidance_lambda = cfg.expit.eval_sampler.guidance_lambda;
        configs.push_back({"ddpm-" + std::to_string(cfg.hl.sched_steps), ddpm});
        for (int steps : {10, 30, 50, 70}) {
            SamplerConfig sc;
            sc.kind = SamplerKind::ddim;
            sc.inference_steps = steps;
            sc.eta = 0.0;
            sc.guidance_lambda = cfg.expit.eval_sampler.guidance_lambda;
            configs.push_back({"ddim-" + std::to_string(steps), sc});
        }
        const auto rows = timing_study(bundle, configs, settings, cfg.env, reg,
                                       eval_rollout_params(cfg),
                                       derive_seed(cfg.seed, 0x54494dull));
        write_text_file(out("timing.csv"), timing_csv(rows));
        double top = 0;
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& r : rows) top = std::max(top, r.sec_per_action);
        for (const auto& r : rows) bars.push_back({r.label, r.sec_per_action});
        write_text_file(out("timing.svg"),
                        svg_bar_chart("seconds per action", bars, top * 1.1));
        for (const auto& r : rows)
            std::printf("%-10s %.4fs/action SR %.3f\n", r.label.c_str(), r.sec_per_action,
                        r.mean_sr);
        return 0;
    }
    if (protocol == "diversity") {
        const auto d = load_dataset(data_path, env_digest(cfg.env, reg));
        std::vector<std::array<float, 8>> pts;
        std::vector<ContextOrigin> origins;
        for (const auto& t : d.trajectories()) {
            pts.push_back(diversity_features(t.states.front()));
            origins.push_back(t.context_origin);
        }
        const auto rep = context_diversity(pts, origins);
        write_text_file(out("diversity.json"), diversity_json(rep));
        write_text_file(out("diversity.csv"), diversity_csv(rep));
        std::vector<int> cls;
        for (auto o : origins) cls.push_back(static_cast<int>(o));
        write_text_file(out("diversity.svg"),
                        svg_scatter("initial states (PCA)", rep.projected, cls,
                                    {"none", "env_reset", "expert_replayed"}));
        for (const auto& [k, v] : rep.hull_area) std::printf("hull %s %.5f\n", k.c_str(), v);
        return 0;
    }
    throw ConfigError("unknown eval protocol: " + protocol);
}

int cmd_report(const RunConfig& cfg, const std::string& run_dir) {
    const auto ledger = read_ledger_json((fs::path(run_dir) / "ledger.json").string());
    std::printf("# iteration ledger for %s\n", run_dir.c_str());
    std::printf("t,hl_updates,ll_updates,cumulative_hl,cumulative_ll,collected,dataset\n");
    for (const auto& it : ledger)
        std::printf("%d,%lld,%lld,%lld,%lld,%d,%d\n", it.t,
                    static_cast<long long>(it.hl_updates),
                    static_cast<long long>(it.ll_updates),
                    static_cast<long long>(it.cumulative_hl),
                    static_cast<long long>(it.cumulative_ll), it.collected_size,
                    it.dataset_size);
    std::vector<std::pair<std::string, double>> bars;
    double top = 0;
    for (const auto& it : ledger) {
        bars.push_back({"iter " + std::to_string(it.t),
                        static_cast<double>(it.cumulative_hl + it.cumulative_ll)});
        top = std::max(top, bars.back().second);
    }
    fs::create_directories(cfg.out);
    write_text_file((fs::path(cfg.out) / "ledger.svg").string(),
                    svg_bar_chart("cumulative gradient updates", bars, top * 1.1));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical diffusion policies with expert-iteration refinement"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "JSON run configuration");
    app.add_option("--out", g.out, "output directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "master seed");
    app.add_option("--workers", g.workers, "worker threads");
    app.add_flag("--strict-quota", g.strict_quota,
                 "fail when collection quotas stay unfilled");

    std::string data_path, bundle_path, bundle_path2, init_bundle, d0_path, protocol,
        run_dir;
    app.add_subcommand("expert-data", "generate the initial expert dataset");
    auto* c_train = app.add_subcommand("train", "supervised training on a dataset");
    c_train->add_option("--data", data_path, "dataset directory")->required();
    c_train->add_option("--init", init_bundle, "bundle to fine-tune from");
    auto* c_collect = app.add_subcommand("collect", "reward-filtered rollout collection");
    c_collect->add_option("--bundle", bundle_path, "policy bundle")->required();
    c_collect->add_option("--data", data_path, "context source dataset")->required();
    auto* c_expit = app.add_subcommand("expit", "the full iteration loop");
    c_expit->add_option("--d0", d0_path, "initial dataset (generated when omitted)");
    auto* c_eval = app.add_subcommand("eval", "evaluation protocols");
    c_eval->add_option("protocol", protocol, "mtlc|lh|cross|gt|noreplan|timing|diversity")
        ->required();
    c_eval->add_option("--bundle", bundle_path, "policy bundle");
    c_eval->add_option("--bundle2", bundle_path2, "second bundle (cross)");
    c_eval->add_option("--data", data_path, "dataset (diversity)");
    auto* c_report = app.add_subcommand("report", "summarize a run directory");
    c_report->add_option("run_dir", run_dir, "expit run directory")->required();

    try {
        app.parse(argc, argv);
        g.seed_set = seed_opt->count() > 0;
        const RunConfig cfg = resolve_config(g);
        if (app.got_subcommand("expert-data")) return cmd_expert_data(cfg);
        if (app.got_subcommand("train")) return cmd_train(cfg, data_path, init_bundle);
        if (app.got_subcommand("collect")) return cmd_collect(cfg, bundle_path, data_path);
        if (app.got_subcommand("expit")) return cmd_expit(cfg, d0_path);
        if (app.got_subcommand("eval"))
            return cmd_eval(cfg, protocol, bundle_path, bundle_path2, data_path);
        if (app.got_subcommand("report")) return cmd_report(cfg, run_dir);
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return 2;
    } catch (const IntegrityError& e) {
        std::fprintf(stderr, "integrity error: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
