#include "hdexpit/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace hdexpit {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw ConfigError("unknown config key \"" + key + "\" in " + where);
}

SamplerConfig sampler_from_json(const json& j, const std::string& where) {
    reject_unknown(j, {"kind", "steps", "eta", "lambda"}, where);
    SamplerConfig s;
    if (j.contains("kind")) s.kind = sampler_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("steps")) s.inference_steps = j.at("steps").get<int>();
    if (j.contains("eta")) s.eta = j.at("eta").get<double>();
    if (j.contains("lambda")) s.guidance_lambda = j.at("lambda").get<double>();
    return s;
}

json sampler_to_json(const SamplerConfig& s) {
    return {{"kind", to_string(s.kind)},
            {"steps", s.inference_steps},
            {"eta", s.eta},
            {"lambda", s.guidance_lambda}};
}

template <class T>
void opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
    env.validate();
    HlModelConfig h = hl;
    h.validate();
    ll.validate();
    expit.validate(hl.frames, ll.chunk);
    expit.collect_sampler.validate(hl.sched_steps);
    expit.eval_sampler.validate(hl.sched_steps);
    if (eval.settings_per_task < 1 || eval.num_chains < 1 || eval.chain_len < 1)
        throw ConfigError("evaluation counts must be positive");
    if (data.demos_per_task < 1) throw ConfigError("demos_per_task must be positive");
    if (hl_lr <= 0.0 || ll_lr <= 0.0) throw ConfigError("learning rates must be positive");
    if (hl.image != env.height || hl.image != env.width || ll.image != env.height)
        throw ConfigError("model image sizes must match the environment");
    if (ll.a_max != env.a_max)
        throw ConfigError("controller a_max must match the environment");
    if (env.t_max < hl.frames * ll.chunk)
        throw ConfigError("env t_max must fit at least one full plan");
}

RunConfig run_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(j, {"seed", "out", "workers", "env", "hl", "ll", "expit", "eval", "data"},
                   "top level");
    RunConfig cfg;
    opt(j, "seed", cfg.seed);
    opt(j, "out", cfg.out);
    opt(j, "workers", cfg.workers);

    if (j.contains("env")) {
        const json& e = j.at("env");
        reject_unknown(e,
                       {"height", "width", "a_max", "grasp_radius", "place_delta",
                        "push_delta", "block_half", "t_max", "expert_cap", "reset_lo",
                        "reset_hi", "reset_min_separation", "home_x_lo", "home_x_hi",
                        "home_y_lo", "home_y_hi", "expert_jitter", "admissible_margin"},
                       "env");
        opt(e, "height", cfg.env.height);
        opt(e, "width", cfg.env.width);
        opt(e, "a_max", cfg.env.a_max);
        opt(e, "grasp_radius", cfg.env.grasp_radius);
        opt(e, "place_delta", cfg.env.place_delta);
        opt(e, "push_delta", cfg.env.push_delta);
        opt(e, "block_half", cfg.env.block_half);
        opt(e, "t_max", cfg.env.t_max);
        opt(e, "expert_cap", cfg.env.expert_cap);
        opt(e, "reset_lo", cfg.env.reset_lo);
        opt(e, "reset_hi", cfg.env.reset_hi);
        opt(e, "reset_min_separation", cfg.env.reset_min_separation);
        opt(e, "home_x_lo", cfg.env.home_x_lo);
        opt(e, "home_x_hi", cfg.env.home_x_hi);
        opt(e, "home_y_lo", cfg.env.home_y_lo);
        opt(e, "home_y_hi", cfg.env.home_y_hi);
        opt(e, "expert_jitter", cfg.env.expert_jitter);
        opt(e, "admissible_margin", cfg.env.admissible_margin);
    }
    if (j.contains("hl")) {
        const json& h = j.at("hl");
        reject_unknown(h,
                       {"width", "blocks", "patch", "frames", "d_goal", "d_cond", "d_temb",
                        "gn_groups", "p_drop", "sched_kind", "sched_steps", "lr"},
                       "hl");
        opt(h, "width", cfg.hl.width);
        opt(h, "blocks", cfg.hl.blocks);
        opt(h, "patch", cfg.hl.patch);
        opt(h, "frames", cfg.hl.frames);
        opt(h, "d_goal", cfg.hl.d_goal);
        opt(h, "d_cond", cfg.hl.d_cond);
        opt(h, "d_temb", cfg.hl.d_temb);
        opt(h, "gn_groups", cfg.hl.gn_groups);
        opt(h, "p_drop", cfg.hl.p_drop);
        if (h.contains("sched_kind"))
            cfg.hl.sched_kind = schedule_kind_from_string(h.at("sched_kind").get<std::string>());
        opt(h, "sched_steps", cfg.hl.sched_steps);
        opt(h, "lr", cfg.hl_lr);
    }
    if (j.contains("ll")) {
        const json& l = j.at("ll");
        reject_unknown(l,
                       {"variant", "chunk", "n_min", "enc_width", "enc_width2", "z_dim",
                        "head_width", "d_temb", "gn_groups", "sched_kind", "sched_steps",
                        "infer_kind", "infer_steps", "infer_eta", "lr"},
                       "ll");
        if (l.contains("variant"))
            cfg.ll.variant = variant_from_string(l.at("variant").get<std::string>());
        opt(l, "chunk", cfg.ll.chunk);
        opt(l, "n_min", cfg.ll.n_min);
        opt(l, "enc_width", cfg.ll.enc_width);
        opt(l, "enc_width2", cfg.ll.enc_width2);
        opt(l, "z_dim", cfg.ll.z_dim);
        opt(l, "head_width", cfg.ll.head_width);
        opt(l, "d_temb", cfg.ll.d_temb);
        opt(l, "gn_groups", cfg.ll.gn_groups);
        if (l.contains("sched_kind"))
            cfg.ll.sched_kind = schedule_kind_from_string(l.at("sched_kind").get<std::string>());
        opt(l, "sched_steps", cfg.ll.sched_steps);
        if (l.contains("infer_kind"))
            cfg.ll.infer_kind = sampler_kind_from_string(l.at("infer_kind").get<std::string>());
        opt(l, "infer_steps", cfg.ll.infer_steps);
        opt(l, "infer_eta", cfg.ll.infer_eta);
        opt(l, "lr", cfg.ll_lr);
    }
    if (j.contains("expit")) {
        const json& x = j.at("expit");
        reject_unknown(x,
                       {"n_iter", "k_trials", "n_data", "strategy", "n0_hl", "n0_ll",
                        "batch_hl", "batch_ll", "mix_reset", "mix_replayed",
                        "collect_sampler", "eval_sampler", "t_max", "strict_quota"},
                       "expit");
        opt(x, "n_iter", cfg.expit.n_iter);
        opt(x, "k_trials", cfg.expit.k_trials);
        opt(x, "n_data", cfg.expit.n_data);
        if (x.contains("strategy"))
            cfg.expit.strategy = strategy_from_string(x.at("strategy").get<std::string>());
        opt(x, "n0_hl", cfg.expit.n0_hl);
        opt(x, "n0_ll", cfg.expit.n0_ll);
        opt(x, "batch_hl", cfg.expit.batch_hl);
        opt(x, "batch_ll", cfg.expit.batch_ll);
        opt(x, "mix_reset", cfg.expit.mix.count_reset);
        opt(x, "mix_replayed", cfg.expit.mix.count_replayed);
        if (x.contains("collect_sampler"))
            cfg.expit.collect_sampler =
                sampler_from_json(x.at("collect_sampler"), "expit.collect_sampler");
        if (x.contains("eval_sampler"))
            cfg.expit.eval_sampler =
                sampler_from_json(x.at("eval_sampler"), "expit.eval_sampler");
        opt(x, "t_max", cfg.expit.t_max);
        opt(x, "strict_quota", cfg.expit.strict_quota);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        reject_unknown(e, {"settings_per_task", "num_chains", "chain_len"}, "eval");
        opt(e, "settings_per_task", cfg.eval.settings_per_task);
        opt(e, "num_chains", cfg.eval.num_chains);
        opt(e, "chain_len", cfg.eval.chain_len);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, {"demos_per_task"}, "data");
        opt(d, "demos_per_task", cfg.data.demos_per_task);
    }

    // tie model dimensions to the environment
    cfg.hl.image = cfg.env.height;
    cfg.ll.image = cfg.env.height;
    cfg.ll.a_max = cfg.env.a_max;
    cfg.hl.num_goals = TaskRegistry::standard().total_goals();
    cfg.env.master_seed = cfg.seed;
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["workers"] = cfg.workers;
    j["env"] = {{"height", cfg.env.height},
                {"width", cfg.env.width},
                {"a_max", cfg.env.a_max},
                {"grasp_radius", cfg.env.grasp_radius},
                {"place_delta", cfg.env.place_delta},
                {"push_delta", cfg.env.push_delta},
                {"block_half", cfg.env.block_half},
                {"t_max", cfg.env.t_max},
                {"expert_cap", cfg.env.expert_cap},
                {"reset_lo", cfg.env.reset_lo},
                {"reset_hi", cfg.env.reset_hi},
                {"reset_min_separation", cfg.env.reset_min_separation},
                {"home_x_lo", cfg.env.home_x_lo},
                {"home_x_hi", cfg.env.home_x_hi},
                {"home_y_lo", cfg.env.home_y_lo},
                {"home_y_hi", cfg.env.home_y_hi},
                {"expert_jitter", cfg.env.expert_jitter},
                {"admissible_margin", cfg.env.admissible_margin}};
    j["hl"] = {{"width", cfg.hl.width},
               {"blocks", cfg.hl.blocks},
               {"patch", cfg.hl.patch},
               {"frames", cfg.hl.frames},
               {"d_goal", cfg.hl.d_goal},
               {"d_cond", cfg.hl.d_cond},
               {"d_temb", cfg.hl.d_temb},
               {"gn_groups", cfg.hl.gn_groups},
               {"p_drop", cfg.hl.p_drop},
               {"sched_kind", to_string(cfg.hl.sched_kind)},
               {"sched_steps", cfg.hl.sched_steps},
               {"lr", cfg.hl_lr}};
    j["ll"] = {{"variant", to_string(cfg.ll.variant)},
               {"chunk", cfg.ll.chunk},
               {"n_min", cfg.ll.n_min},
               {"enc_width", cfg.ll.enc_width},
               {"enc_width2", cfg.ll.enc_width2},
               {"z_dim", cfg.ll.z_dim},
               {"head_width", cfg.ll.head_width},
               {"d_temb", cfg.ll.d_temb},
               {"gn_groups", cfg.ll.gn_groups},
               {"sched_kind", to_string(cfg.ll.sched_kind)},
               {"sched_steps", cfg.ll.sched_steps},
               {"infer_kind", to_string(cfg.ll.infer_kind)},
               {"infer_steps", cfg.ll.infer_steps},
               {"infer_eta", cfg.ll.infer_eta},
               {"lr", cfg.ll_lr}};
    j["expit"] = {{"n_iter", cfg.expit.n_iter},
                  {"k_trials", cfg.expit.k_trials},
                  {"n_data", cfg.expit.n_data},
                  {"strategy", to_string(cfg.expit.strategy)},
                  {"n0_hl", cfg.expit.n0_hl},
                  {"n0_ll", cfg.expit.n0_ll},
                  {"batch_hl", cfg.expit.batch_hl},
                  {"batch_ll", cfg.expit.batch_ll},
                  {"mix_reset", cfg.expit.mix.count_reset},
                  {"mix_replayed", cfg.expit.mix.count_replayed},
                  {"collect_sampler", sampler_to_json(cfg.expit.collect_sampler)},
                  {"eval_sampler", sampler_to_json(cfg.expit.eval_sampler)},
                  {"t_max", cfg.expit.t_max},
                  {"strict_quota", cfg.expit.strict_quota}};
    j["eval"] = {{"settings_per_task", cfg.eval.settings_per_task},
                 {"num_chains", cfg.eval.num_chains},
                 {"chain_len", cfg.eval.chain_len}};
    j["data"] = {{"demos_per_task", cfg.data.demos_per_task}};
    return j.dump(2) + "\n";
}

std::uint64_t RunConfig::digest() const {
    const std::string s = run_config_to_json(*this);
    return fnv1a64(s.data(), s.size());
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    RunConfig cfg = run_config_from_json(text);
    if (const char* env_seed = std::getenv("HDEXPIT_SEED")) {
        cfg.seed = std::strtoull(env_seed, nullptr, 10);
        cfg.env.master_seed = cfg.seed;
    }
    return cfg;
}

RunConfig desk_run_config() {
    RunConfig cfg;
    cfg.hl.width = 20;
    cfg.hl.blocks = 2;
    cfg.hl.d_goal = 16;
    cfg.hl.d_cond = 48;
    cfg.hl.d_temb = 32;
    cfg.hl.num_goals = TaskRegistry::standard().total_goals();
    cfg.hl_lr = 1e-3;
    cfg.ll_lr = 1e-3;
    cfg.expit.collect_sampler.kind = SamplerKind::ddim;
    cfg.expit.collect_sampler.inference_steps = 10;
    cfg.expit.collect_sampler.eta = 0.0;
    cfg.expit.collect_sampler.guidance_lambda = 3.0;
    cfg.expit.eval_sampler.kind = SamplerKind::ddim;
    cfg.expit.eval_sampler.inference_steps = 10;
    cfg.expit.eval_sampler.eta = 0.0;
    cfg.expit.eval_sampler.guidance_lambda = 5.0;
    return cfg;
}

}  // namespace hdexpit
