#include <cmath>

#include "hdexpit/env.hpp"

// Privileged waypoint expert. Pushes approach the block from behind (routing
// around it when the straight path would plow through), then shove along x
// until the displacement predicate fires. Grasps simply chase the block
// center: penetration resolution parks the effector on the block face, which
// is inside the grasp radius. Place grasps the nearest block and carries it
// to an axis-aligned slot beside its nearest neighbour.

namespace hdexpit {

namespace {

struct ExpertSession {
    PushWorldEnv& env;
    Rng& rng;
    Trajectory traj;
    int task;
    int cap;

    explicit ExpertSession(PushWorldEnv& e, Rng& r, int task_idx)
        : env(e), rng(r), task(task_idx), cap(e.config().expert_cap) {
        traj.states.push_back(env.state());
        traj.observations.push_back(PushWorldEnv::render_quantized(env.config(), env.state()));
        traj.step_budget = cap;
    }

    bool done() const { return env.done(task); }
    bool exhausted() const { return traj.num_actions() >= cap; }
    const EnvState& s() const { return env.state(); }

    // One env step with jitter on the displacement; returns the done flag.
    bool act(float dx, float dy, GripCmd g, bool jitter = true) {
        const float jit = env.config().expert_jitter;
        Action a;
        a.dx = dx + (jitter ? static_cast<float>(rng.uniform(-jit, jit)) : 0.f);
        a.dy = dy + (jitter ? static_cast<float>(rng.uniform(-jit, jit)) : 0.f);
        a.grip_cmd = g;
        env.step(a);
        traj.actions.push_back(a);
        traj.states.push_back(env.state());
        traj.observations.push_back(PushWorldEnv::render_quantized(env.config(), env.state()));
        return done();
    }

    // Walks toward `target` until within tol. Returns true if the task
    // completed on the way.
    bool go_to(Vec2 target, float tol) {
        const float a_max = env.config().a_max;
        while (!exhausted()) {
            const float dx = target.x - s().effector.x;
            const float dy = target.y - s().effector.y;
            if (std::fabs(dx) <= tol && std::fabs(dy) <= tol) return done();
            const float cx = std::clamp(dx, -a_max, a_max);
            const float cy = std::clamp(dy, -a_max, a_max);
            if (act(cx, cy, GripCmd::hold)) return true;
        }
        return done();
    }

    bool release_if_holding() {
        if (s().held >= 0 || s().grip) return act(0.f, 0.f, GripCmd::open, false);
        return done();
    }
};

bool segment_hits_box(Vec2 a, Vec2 b, Vec2 c, float half) {
    float tmin = 0.f, tmax = 1.f;
    const float d[2] = {b.x - a.x, b.y - a.y};
    const float o[2] = {a.x, a.y};
    const float lo[2] = {c.x - half, c.y - half};
    const float hi[2] = {c.x + half, c.y + half};
    for (int k = 0; k < 2; ++k) {
        if (std::fabs(d[k]) < 1e-9f) {
            if (o[k] <= lo[k] || o[k] >= hi[k]) return false;
        } else {
            float t1 = (lo[k] - o[k]) / d[k];
            float t2 = (hi[k] - o[k]) / d[k];
            if (t1 > t2) std::swap(t1, t2);
            tmin = std::max(tmin, t1);
            tmax = std::min(tmax, t2);
            if (tmin >= tmax) return false;
        }
    }
    return true;
}

bool run_push(ExpertSession& ss, const TaskSpec& task) {
    const EnvConfig& cfg = ss.env.config();
    if (ss.release_if_holding()) return true;
    const float h = cfg.block_half;
    const float dir = static_cast<float>(task.dir);
    const int b = task.block;

    // Stage behind the block; when the straight path would plow through it,
    // detour through a lane on the effector's own side of the block.
    Vec2 blk = ss.s().block[b];
    auto staging_for = [&](Vec2 c) {
        return Vec2{std::clamp(c.x - dir * (h + 0.035f), 0.002f, 0.998f), c.y};
    };
    Vec2 staging = staging_for(blk);
    if (segment_hits_box(ss.s().effector, staging, blk, h + 0.01f)) {
        const float side = ss.s().effector.y >= blk.y ? 1.f : -1.f;
        float lane_y = blk.y + side * (h + 0.06f);
        if (lane_y < 0.02f || lane_y > 0.98f) lane_y = blk.y - side * (h + 0.06f);
        if (ss.go_to({ss.s().effector.x, lane_y}, 0.01f)) return true;
        if (ss.go_to({staging.x, lane_y}, 0.01f)) return true;
        blk = ss.s().block[b];  // incidental shoves during the detour
        staging = staging_for(blk);
    }
    if (ss.go_to(staging, 0.008f)) return true;

    // Shove until the displacement predicate fires, re-aiming each step.
    // No jitter here: staying exactly on the block's y keeps the push
    // resolution on the x axis.
    while (!ss.exhausted()) {
        blk = ss.s().block[b];
        const float dy = std::clamp(blk.y - ss.s().effector.y, -cfg.a_max, cfg.a_max);
        if (ss.act(dir * cfg.a_max, dy, GripCmd::hold, /*jitter=*/false)) return true;
    }
    return ss.done();
}

bool chase_and_grasp(ExpertSession& ss, int b) {
    const EnvConfig& cfg = ss.env.config();
    while (!ss.exhausted()) {
        const Vec2 e = ss.s().effector;
        const Vec2 blk = ss.s().block[b];
        const float d = std::hypot(e.x - blk.x, e.y - blk.y);
        if (d <= cfg.grasp_radius * 0.95f) {
            if (ss.act(0.f, 0.f, GripCmd::close, false)) return true;
            if (ss.s().held == b) return ss.done();
            // grabbed nothing or the wrong block: open and keep chasing
            if (ss.act(0.f, 0.f, GripCmd::open, false)) return true;
        }
        const float dx = std::clamp(blk.x - e.x, -cfg.a_max, cfg.a_max);
        const float dy = std::clamp(blk.y - e.y, -cfg.a_max, cfg.a_max);
        if (ss.act(dx, dy, GripCmd::hold)) return true;
    }
    return ss.done();
}

bool run_grasp(ExpertSession& ss, const TaskSpec& task) {
    if (ss.s().held != task.block) {
        if (ss.release_if_holding()) return true;
    }
    return chase_and_grasp(ss, task.block) || ss.done();
}

bool run_place(ExpertSession& ss) {
    const EnvConfig& cfg = ss.env.config();
    const float h = cfg.block_half;

    // Carry the nearest block (or the one already held) next to its nearest
    // neighbour.
    int a = ss.s().held;
    if (a < 0) {
        float best = 1e9f;
        for (int b = 0; b < 3; ++b) {
            const float d = std::hypot(ss.s().effector.x - ss.s().block[b].x,
                                       ss.s().effector.y - ss.s().block[b].y);
            if (d < best) {
                best = d;
                a = b;
            }
        }
        if (!chase_and_grasp(ss, a)) {
            if (ss.exhausted()) return ss.done();
        }
        if (ss.done()) return true;
    }

    int target = -1;
    float best = 1e9f;
    for (int b = 0; b < 3; ++b) {
        if (b == a) continue;
        const float d = std::hypot(ss.s().block[a].x - ss.s().block[b].x,
                                   ss.s().block[a].y - ss.s().block[b].y);
        if (d < best) {
            best = d;
            target = b;
        }
    }

    const Vec2 tb = ss.s().block[target];
    const float slot = 2.f * h + 0.03f;
    const Vec2 dirs[4] = {{+1.f, 0.f}, {-1.f, 0.f}, {0.f, +1.f}, {0.f, -1.f}};
    Vec2 release{};
    float best_d = 1e9f;
    for (const Vec2& d : dirs) {
        const Vec2 p{tb.x + d.x * slot, tb.y + d.y * slot};
        if (p.x < h + 0.01f || p.x > 1.f - h - 0.01f || p.y < h + 0.01f ||
            p.y > 1.f - h - 0.01f)
            continue;
        bool clear = true;
        for (int b = 0; b < 3; ++b) {
            if (b == a || b == target) continue;
            if (std::fabs(p.x - ss.s().block[b].x) < 2.f * h + 0.02f &&
                std::fabs(p.y - ss.s().block[b].y) < 2.f * h + 0.02f)
                clear = false;
        }
        if (!clear) continue;
        const float dd = std::hypot(p.x - ss.s().block[a].x, p.y - ss.s().block[a].y);
        if (dd < best_d) {
            best_d = dd;
            release = p;
        }
    }
    if (best_d == 1e9f) return ss.done();

    if (ss.go_to(release, 0.004f)) return true;
    if (ss.act(0.f, 0.f, GripCmd::open, false)) return true;
    return ss.done();
}

}  // namespace

Trajectory scripted_expert(const Context& ctx, PushWorldEnv& env, Rng& rng) {
    const TaskRegistry& reg = env.registry();
    if (ctx.task < 0 || ctx.task >= reg.size())
        throw ConfigError("context task index out of range");
    env.begin_episode(ctx.initial_state);

    ExpertSession ss(env, rng, ctx.task);
    const TaskSpec& task = reg.at(ctx.task);
    ss.traj.task_id = task.id;
    ss.traj.goal_id = ctx.goal_id;
    ss.traj.origin = TrajOrigin::expert;
    ss.traj.context_origin = ctx.origin;

    bool ok = false;
    // Up to two fresh attempts within the step cap: re-running the waypoint
    // logic from the current state recovers from jitter-induced misses.
    for (int attempt = 0; attempt < 2 && !ok && !ss.exhausted(); ++attempt) {
        switch (task.category) {
            case TaskCategory::push: ok = run_push(ss, task); break;
            case TaskCategory::grasp: ok = run_grasp(ss, task); break;
            case TaskCategory::place: ok = run_place(ss); break;
        }
        ok = ok || ss.done();
    }
    if (!ok)
        throw ExpertFailure("scripted expert failed on task " + task.id + " within " +
                            std::to_string(ss.cap) + " steps");
    ss.traj.success = true;
    return std::move(ss.traj);
}

}  // namespace hdexpit
