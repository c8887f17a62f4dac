#include <doctest.h>

#include <cmath>
#include <set>

#include "hdexpit/env.hpp"

using namespace hdexpit;

namespace {

EnvConfig test_cfg() { return EnvConfig{}; }

Context reset_context(const EnvConfig& cfg, int task, std::uint64_t seed) {
    Rng rng(seed);
    Context ctx;
    ctx.initial_state = PushWorldEnv::reset_state(cfg, rng);
    ctx.task = task;
    ctx.goal_id = 0;
    ctx.origin = ContextOrigin::env_reset;
    return ctx;
}

}  // namespace

TEST_CASE("task registry has the fixed 10-task structure") {
    const auto reg = TaskRegistry::standard();
    REQUIRE(reg.size() == 10);
    int push = 0, grasp = 0, place = 0;
    for (const auto& t : reg.tasks()) {
        if (t.category == TaskCategory::push) ++push;
        if (t.category == TaskCategory::grasp) ++grasp;
        if (t.category == TaskCategory::place) ++place;
        CHECK(!t.instructions.empty());
    }
    CHECK(push == 6);
    CHECK(grasp == 3);
    CHECK(place == 1);
    CHECK(reg.index_of("push_red_left") == 0);
    CHECK(reg.total_goals() == 10);
}

TEST_CASE("reset: deterministic, confined and separated") {
    const auto cfg = test_cfg();
    Rng a(42), b(42);
    CHECK(PushWorldEnv::reset_state(cfg, a) == PushWorldEnv::reset_state(cfg, b));

    Rng rng(7);
    float min_sep = 1e9f;
    for (int i = 0; i < 1000; ++i) {
        const auto s = PushWorldEnv::reset_state(cfg, rng);
        for (const auto& blk : s.block) {
            CHECK(blk.x >= cfg.reset_lo);
            CHECK(blk.x <= cfg.reset_hi);
            CHECK(blk.y >= cfg.reset_lo);
            CHECK(blk.y <= cfg.reset_hi);
        }
        for (int p = 0; p < 3; ++p)
            for (int q = p + 1; q < 3; ++q)
                min_sep = std::min(min_sep, std::hypot(s.block[p].x - s.block[q].x,
                                                       s.block[p].y - s.block[q].y));
        CHECK(s.held == -1);
        CHECK_FALSE(s.grip);
        CHECK(s.step_count == 0);
    }
    CHECK(min_sep > 2.f * cfg.block_half);
}

TEST_CASE("step: static action, clipping, determinism") {
    const auto cfg = test_cfg();
    Rng rng(3);
    auto s = PushWorldEnv::reset_state(cfg, rng);

    const auto s1 = transition(cfg, s, static_action());
    CHECK(s1.block == s.block);
    CHECK(s1.effector == s.effector);
    CHECK(s1.step_count == s.step_count + 1);

    auto edge = s;
    edge.effector = {0.99f, 0.5f};
    const auto s2 = transition(cfg, edge, {cfg.a_max, 0.f, GripCmd::hold});
    CHECK(s2.effector.x == 1.0f);

    // oversized displacements are clipped, not rejected
    const auto s3 = transition(cfg, edge, {99.f, -99.f, GripCmd::hold});
    CHECK(s3.effector.x == 1.0f);
    CHECK(s3.effector.y == doctest::Approx(0.5f - cfg.a_max));

    CHECK(transition(cfg, s, {0.01f, 0.02f, GripCmd::hold}) ==
          transition(cfg, s, {0.01f, 0.02f, GripCmd::hold}));

    CHECK_THROWS_AS(transition(cfg, s, {std::nanf(""), 0.f, GripCmd::hold}), ConfigError);
}

TEST_CASE("pushing a block until the displacement predicate fires") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);

    EnvState s;
    s.block[0] = {0.6f, 0.5f};
    s.block[1] = {0.3f, 0.2f};
    s.block[2] = {0.7f, 0.8f};
    s.effector = {0.6f + cfg.block_half + 0.02f, 0.5f};  // at red's right face
    env.begin_episode(s);

    const int task = reg.index_of("push_red_left");
    int steps = 0;
    while (!env.done(task) && steps < 40) {
        env.step({-cfg.a_max, 0.f, GripCmd::open});
        ++steps;
    }
    CHECK(env.done(task));
    CHECK(s.block[0].x - env.state().block[0].x >= cfg.push_delta);
    // pure x-axis push keeps the block's y
    CHECK(env.state().block[0].y == doctest::Approx(0.5f).epsilon(1e-5));
}

TEST_CASE("render: pure, in range, centroid tracks the block") {
    const auto cfg = test_cfg();
    Rng rng(5);
    const auto s = PushWorldEnv::reset_state(cfg, rng);
    const auto o1 = PushWorldEnv::render(cfg, s);
    const auto o2 = PushWorldEnv::render(cfg, s);
    CHECK(o1 == o2);
    for (float v : o1.pixels) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }

    auto left = s, right = s;
    left.block[0] = {0.25f, 0.5f};
    right.block[0] = {0.75f, 0.5f};
    auto centroid_x = [&](const EnvState& st) {
        const auto o = PushWorldEnv::render(cfg, st);
        // red-dominant pixels: strong first channel, weak second
        double cx = 0.0, mass = 0.0;
        for (int i = 0; i < o.h; ++i)
            for (int j = 0; j < o.w; ++j) {
                const float r = o.pixels[i * o.w + j];
                const float g = o.pixels[o.h * o.w + i * o.w + j];
                if (r > 0.7f && g < 0.3f) {
                    cx += j;
                    mass += 1.0;
                }
            }
        REQUIRE(mass > 0);
        return cx / mass;
    };
    CHECK(centroid_x(left) < cfg.width / 2.0);
    CHECK(centroid_x(right) > cfg.width / 2.0);
}

TEST_CASE("quantized renders dequantize to the exact float render") {
    const auto cfg = test_cfg();
    Rng rng(11);
    const auto s = PushWorldEnv::reset_state(cfg, rng);
    const auto f = PushWorldEnv::render(cfg, s);
    const auto q = PushWorldEnv::render_quantized(cfg, s);
    const auto back = dequantize_observation(q);
    REQUIRE(back.size() == f.pixels.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == f.pixels[i]);
}

TEST_CASE("reward: empty motion, strict threshold, integrity check") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    auto ctx = reset_context(cfg, reg.index_of("push_red_left"), 17);

    Trajectory still;
    still.states = {ctx.initial_state, ctx.initial_state};
    still.states[1].step_count = 1;
    still.actions = {static_action()};
    still.observations.assign(2, PushWorldEnv::render_quantized(cfg, ctx.initial_state));
    CHECK(reward(cfg, reg, still, ctx) == 0);

    // displacement of delta - eps stays a failure
    Trajectory nearmiss = still;
    nearmiss.states[1].block[0].x = ctx.initial_state.block[0].x - (cfg.push_delta - 1e-4f);
    CHECK(reward(cfg, reg, nearmiss, ctx) == 0);
    nearmiss.states[1].block[0].x = ctx.initial_state.block[0].x - cfg.push_delta;
    CHECK(reward(cfg, reg, nearmiss, ctx) == 1);

    Trajectory wrong = still;
    wrong.states[0].effector.x += 0.01f;
    CHECK_THROWS_AS(reward(cfg, reg, wrong, ctx), IntegrityError);
}

TEST_CASE("push and grasp rewards ignore the other blocks' identities") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    auto ctx = reset_context(cfg, reg.index_of("push_red_left"), 23);

    Trajectory t;
    t.states = {ctx.initial_state, ctx.initial_state};
    t.states[1].block[0].x -= cfg.push_delta + 0.01f;
    t.states[1].step_count = 1;
    t.actions = {static_action()};
    t.observations.assign(2, PushWorldEnv::render_quantized(cfg, ctx.initial_state));
    const int base = reward(cfg, reg, t, ctx);

    // swap the two non-target blocks everywhere (and in the context)
    auto swapped = t;
    auto sctx = ctx;
    for (auto& s : swapped.states) std::swap(s.block[1], s.block[2]);
    std::swap(sctx.initial_state.block[1], sctx.initial_state.block[2]);
    CHECK(reward(cfg, reg, swapped, sctx) == base);
}

TEST_CASE("admissible tasks: fresh resets admit everything") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
        const auto s = PushWorldEnv::reset_state(cfg, rng);
        const auto adm = admissible_tasks(cfg, reg, s);
        CHECK(static_cast<int>(adm.size()) == reg.size());
    }
}

TEST_CASE("admissible tasks: exclusions") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    Rng rng(37);
    auto s = PushWorldEnv::reset_state(cfg, rng);

    // red against the left wall: push_red_left impossible
    s.block[0] = {cfg.block_half + 0.01f, 0.5f};
    auto adm = admissible_tasks(cfg, reg, s);
    CHECK(std::find(adm.begin(), adm.end(), reg.index_of("push_red_left")) == adm.end());
    for (int t : adm) CHECK(t < reg.size());

    // two blocks already within the place threshold: place excluded
    auto s2 = PushWorldEnv::reset_state(cfg, rng);
    s2.block[1] = {s2.block[0].x + 2.f * cfg.block_half + 0.01f, s2.block[0].y};
    adm = admissible_tasks(cfg, reg, s2);
    CHECK(std::find(adm.begin(), adm.end(), reg.index_of("place_pair")) == adm.end());

    // a held block cannot be grasped again
    auto s3 = PushWorldEnv::reset_state(cfg, rng);
    s3.grip = true;
    s3.held = 1;
    s3.block[1] = s3.effector;
    adm = admissible_tasks(cfg, reg, s3);
    CHECK(std::find(adm.begin(), adm.end(), reg.index_of("grasp_green")) == adm.end());
}

TEST_CASE("block overlap stays resolved under random actions") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);
    Rng rng(41);
    env.begin_episode(PushWorldEnv::reset_state(cfg, rng));
    for (int i = 0; i < 500; ++i) {
        Action a{static_cast<float>(rng.uniform(-cfg.a_max, cfg.a_max)),
                 static_cast<float>(rng.uniform(-cfg.a_max, cfg.a_max)),
                 static_cast<GripCmd>(rng.uniform_int(0, 2))};
        env.step(a);
        const auto& s = env.state();
        for (int p = 0; p < 3; ++p) {
            CHECK(s.block[p].x >= 0.f);
            CHECK(s.block[p].x <= 1.f);
            for (int q = p + 1; q < 3; ++q) {
                if (p == s.held || q == s.held) continue;
                const float ox =
                    2.f * cfg.block_half - std::fabs(s.block[p].x - s.block[q].x);
                const float oy =
                    2.f * cfg.block_half - std::fabs(s.block[p].y - s.block[q].y);
                CHECK((ox <= 1e-3f || oy <= 1e-3f));
            }
        }
    }
}

TEST_CASE("scripted expert: success, determinism, reward oracle") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);

    for (int task = 0; task < reg.size(); ++task) {
        for (int i = 0; i < 20; ++i) {
            auto ctx = reset_context(cfg, task, derive_seed(1000, task, i));
            Rng rng(derive_seed(2000, task, i));
            const auto traj = scripted_expert(ctx, env, rng);
            CHECK(traj.success);
            CHECK(traj.num_actions() <= cfg.expert_cap);
            CHECK(reward(cfg, reg, traj, ctx) == 1);
            CHECK(static_cast<int>(traj.states.size()) == traj.num_actions() + 1);
            CHECK(traj.observations.size() == traj.states.size());
        }
    }

    auto ctx = reset_context(cfg, reg.index_of("push_green_right"), 77);
    Rng r1(5), r2(5);
    const auto t1 = scripted_expert(ctx, env, r1);
    const auto t2 = scripted_expert(ctx, env, r2);
    CHECK(t1.states == t2.states);
    CHECK(t1.actions == t2.actions);
}

TEST_CASE("expert grasp from the block is shorter than from home") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);
    auto ctx = reset_context(cfg, reg.index_of("grasp_blue"), 91);

    auto near_ctx = ctx;
    near_ctx.initial_state.effector = {ctx.initial_state.block[2].x,
                                       ctx.initial_state.block[2].y + cfg.grasp_radius * 0.9f};
    Rng r1(1), r2(1);
    const auto far = scripted_expert(ctx, env, r1);
    const auto near = scripted_expert(near_ctx, env, r2);
    CHECK(near.num_actions() < far.num_actions());
}

TEST_CASE("expert handles expert-replayed style states") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);
    Rng rng(59);

    // run one expert episode, then start every admissible task from its
    // terminal state
    auto ctx0 = reset_context(cfg, reg.index_of("place_pair"), 101);
    Rng er(3);
    const auto first = scripted_expert(ctx0, env, er);
    const EnvState terminal = first.states.back();

    for (int task : admissible_tasks(cfg, reg, terminal)) {
        Context ctx;
        ctx.initial_state = terminal;
        ctx.task = task;
        ctx.origin = ContextOrigin::expert_replayed;
        Rng r(derive_seed(7, task));
        const auto traj = scripted_expert(ctx, env, r);
        CHECK(traj.success);
        CHECK(reward(cfg, reg, traj, ctx) == 1);
    }
}

TEST_CASE("done flags track the episode initial state") {
    const auto cfg = test_cfg();
    const auto reg = TaskRegistry::standard();
    PushWorldEnv env(cfg, reg);
    Rng rng(61);
    const auto s0 = PushWorldEnv::reset_state(cfg, rng);
    env.begin_episode(s0);
    CHECK_FALSE(env.done(reg.index_of("grasp_red")));

    // pre-satisfied place: done on the very first step
    auto near = s0;
    near.block[1] = {near.block[0].x + 2.f * cfg.block_half + 0.01f, near.block[0].y};
    env.begin_episode(near);
    env.step(static_action());
    CHECK(env.done(reg.index_of("place_pair")));
}

TEST_CASE("state float serialization round-trips") {
    const auto cfg = test_cfg();
    Rng rng(71);
    auto s = PushWorldEnv::reset_state(cfg, rng);
    s.grip = true;
    s.held = 2;
    s.step_count = 17;
    CHECK(state_from_floats(state_to_floats(s)) == s);
}
