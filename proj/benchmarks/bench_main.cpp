#include <benchmark/benchmark.h>

#include "hdexpit/controller.hpp"
#include "hdexpit/env.hpp"
#include "hdexpit/expit.hpp"
#include "hdexpit/planner.hpp"

using namespace hdexpit;

namespace {

EnvConfig bench_env() { return EnvConfig{}; }

HlModelConfig bench_hl() {
    HlModelConfig cfg;
    cfg.width = 20;
    cfg.blocks = 2;
    cfg.d_goal = 16;
    cfg.d_cond = 48;
    cfg.d_temb = 32;
    return cfg;
}

void BM_EnvStep(benchmark::State& state) {
    const auto cfg = bench_env();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);
    Rng rng(3);
    env.begin_episode(PushWorldEnv::reset_state(cfg, rng));
    Action a{0.01f, -0.01f, GripCmd::hold};
    for (auto _ : state) {
        env.step(a);
        benchmark::DoNotOptimize(env.state());
    }
}
BENCHMARK(BM_EnvStep);

void BM_Render(benchmark::State& state) {
    const auto cfg = bench_env();
    Rng rng(5);
    const auto s = PushWorldEnv::reset_state(cfg, rng);
    for (auto _ : state) {
        auto o = PushWorldEnv::render(cfg, s);
        benchmark::DoNotOptimize(o.pixels.data());
    }
}
BENCHMARK(BM_Render);

void BM_ScriptedExpert(benchmark::State& state) {
    const auto cfg = bench_env();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);
    std::uint64_t i = 0;
    for (auto _ : state) {
        Rng rng(derive_seed(11, i));
        Context ctx{PushWorldEnv::reset_state(cfg, rng), static_cast<int>(i % 10), 0,
                    ContextOrigin::env_reset};
        auto t = scripted_expert(ctx, env, rng);
        benchmark::DoNotOptimize(t.num_actions());
        ++i;
    }
}
BENCHMARK(BM_ScriptedExpert);

void BM_PlannerForward(benchmark::State& state) {
    auto p = make_planner(bench_hl(), 3);
    const int B = static_cast<int>(state.range(0));
    const std::size_t fpx = 3u * 32 * 32;
    const std::size_t D = 8 * fpx;
    Rng rng(7);
    std::vector<float> x(B * D), o0(B * fpx);
    for (auto& v : x) v = rng.normal_f();
    for (auto& v : o0) v = static_cast<float>(rng.uniform());
    std::vector<int> rows(B, 1), js(B, 40);
    for (auto _ : state) {
        const auto& out = p.model->forward(x, o0, rows, js, B);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_PlannerForward)->Arg(1)->Arg(2)->Arg(32);

void BM_PlannerTrainStep(benchmark::State& state) {
    auto p = make_planner(bench_hl(), 3);
    HlTrainer trainer(p, 2);
    const int B = 32;
    const std::size_t fpx = 3u * 32 * 32;
    const std::size_t D = 8 * fpx;
    Rng rng(9);
    HlBatch b;
    b.B = B;
    b.x0.resize(B * D);
    b.o0.resize(B * fpx);
    b.goal_rows.assign(B, 1);
    for (auto& v : b.x0) v = static_cast<float>(rng.uniform());
    for (auto& v : b.o0) v = static_cast<float>(rng.uniform());
    for (auto _ : state) {
        const float loss = trainer.step(b, rng);
        benchmark::DoNotOptimize(loss);
    }
}
BENCHMARK(BM_PlannerTrainStep)->Unit(benchmark::kMillisecond);

void BM_PlanSample(benchmark::State& state) {
    auto p = make_planner(bench_hl(), 3);
    const std::size_t fpx = 3u * 32 * 32;
    std::vector<float> o0(fpx, 0.5f);
    SamplerConfig sc;
    sc.kind = SamplerKind::ddim;
    sc.inference_steps = static_cast<int>(state.range(0));
    sc.guidance_lambda = 5.0;
    std::uint64_t i = 0;
    for (auto _ : state) {
        Rng rng(derive_seed(13, i++));
        const Plan plan = hl_sample_plan(p, o0, 1, sc, rng);
        benchmark::DoNotOptimize(plan.data.data());
    }
}
BENCHMARK(BM_PlanSample)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_ChunkPredict(benchmark::State& state) {
    LlModelConfig cfg;
    auto ll = make_controller(cfg, 5);
    const std::size_t fpx = 3u * 32 * 32;
    std::vector<float> src(fpx, 0.4f), tgt(fpx, 0.6f);
    std::uint64_t i = 0;
    for (auto _ : state) {
        Rng rng(derive_seed(17, i++));
        const auto chunk = ll_predict(ll, src, tgt, rng);
        benchmark::DoNotOptimize(chunk.actions.data());
    }
}
BENCHMARK(BM_ChunkPredict);

}  // namespace

BENCHMARK_MAIN();
