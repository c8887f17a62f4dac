#include "hdexpit/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hdexpit {

namespace {

constexpr float kOverlapTol = 1e-3f;

inline float clampf(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

inline float dist2(const Vec2& a, const Vec2& b) {
    const float dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

inline float dist(const Vec2& a, const Vec2& b) { return std::sqrt(dist2(a, b)); }

float min_pairwise_center_distance(const EnvState& s) {
    float best = 1e9f;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) best = std::min(best, dist(s.block[i], s.block[j]));
    return best;
}

// Palette values are exact multiples of 1/255 so quantized storage
// round-trips bit-exactly against fresh renders.
struct Rgb {
    float r, g, b;
};
constexpr Rgb kBackground{230.f / 255.f, 230.f / 255.f, 230.f / 255.f};
constexpr Rgb kBlockColor[3] = {{220.f / 255.f, 30.f / 255.f, 30.f / 255.f},
                                {30.f / 255.f, 180.f / 255.f, 30.f / 255.f},
                                {30.f / 255.f, 60.f / 255.f, 220.f / 255.f}};
constexpr Rgb kEffectorOpen{30.f / 255.f, 30.f / 255.f, 30.f / 255.f};
constexpr Rgb kEffectorClosed{250.f / 255.f, 190.f / 255.f, 30.f / 255.f};
constexpr float kEffectorHalf = 0.03f;

}  // namespace

TaskRegistry TaskRegistry::standard() {
    static const char* names[3] = {"red", "green", "blue"};
    TaskRegistry reg;
    for (int b = 0; b < 3; ++b) {
        for (int d = 0; d < 2; ++d) {
            TaskSpec t;
            t.category = TaskCategory::push;
            t.block = b;
            t.dir = d == 0 ? -1 : +1;
            t.id = std::string("push_") + names[b] + (d == 0 ? "_left" : "_right");
            t.instructions = {std::string("push the ") + names[b] + " block to the " +
                              (d == 0 ? "left" : "right")};
            reg.tasks_.push_back(std::move(t));
        }
    }
    for (int b = 0; b < 3; ++b) {
        TaskSpec t;
        t.category = TaskCategory::grasp;
        t.block = b;
        t.id = std::string("grasp_") + names[b];
        t.instructions = {std::string("grasp the ") + names[b] + " block"};
        reg.tasks_.push_back(std::move(t));
    }
    TaskSpec place;
    place.category = TaskCategory::place;
    place.id = "place_pair";
    place.instructions = {"place a block next to another block"};
    reg.tasks_.push_back(std::move(place));

    reg.goal_offset_.resize(reg.tasks_.size() + 1, 0);
    for (std::size_t i = 0; i < reg.tasks_.size(); ++i)
        reg.goal_offset_[i + 1] =
            reg.goal_offset_[i] + static_cast<int>(reg.tasks_[i].instructions.size());
    return reg;
}

int TaskRegistry::index_of(const std::string& task_id) const {
    for (int i = 0; i < size(); ++i)
        if (tasks_[i].id == task_id) return i;
    throw ConfigError("unknown task id: " + task_id);
}

int TaskRegistry::goal_index(int task, int goal_id) const {
    const auto& t = tasks_.at(task);
    if (goal_id < 0 || goal_id >= static_cast<int>(t.instructions.size()))
        throw ConfigError("goal_id " + std::to_string(goal_id) + " out of range for task " +
                          t.id);
    return goal_offset_.at(task) + goal_id;
}

int TaskRegistry::total_goals() const { return goal_offset_.back(); }

std::string TaskRegistry::to_json() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < size(); ++i) {
        const auto& t = tasks_[i];
        os << (i ? "," : "") << "{\"id\":\"" << t.id << "\",\"category\":\""
           << (t.category == TaskCategory::push
                   ? "push"
                   : t.category == TaskCategory::grasp ? "grasp" : "place")
           << "\",\"block\":" << t.block << ",\"dir\":" << t.dir << ",\"instructions\":[";
        for (std::size_t k = 0; k < t.instructions.size(); ++k)
            os << (k ? "," : "") << "\"" << t.instructions[k] << "\"";
        os << "]}";
    }
    os << "]";
    return os.str();
}

void EnvConfig::validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("env image dimensions must be positive");
    if (a_max <= 0.f) throw ConfigError("a_max must be positive");
    if (block_half <= 0.f || block_half >= 0.5f) throw ConfigError("bad block_half");
    if (grasp_radius <= block_half)
        throw ConfigError("grasp_radius must exceed block_half so grasping is reachable");
    if (reset_lo >= reset_hi) throw ConfigError("bad reset rectangle");
    if (reset_min_separation <= place_center_threshold())
        throw ConfigError("reset separation must exceed the place threshold so fresh "
                          "resets leave every task admissible");
    if (t_max <= 0 || expert_cap <= 0) throw ConfigError("step budgets must be positive");
}

std::uint64_t env_digest(const EnvConfig& cfg, const TaskRegistry& reg) {
    std::ostringstream os;
    os.precision(9);
    os << cfg.height << "," << cfg.width << "," << cfg.a_max << "," << cfg.grasp_radius << ","
       << cfg.place_delta << "," << cfg.push_delta << "," << cfg.block_half << "," << cfg.t_max
       << "," << cfg.expert_cap << "," << cfg.reset_lo << "," << cfg.reset_hi << ","
       << cfg.reset_min_separation << "," << cfg.home_x_lo << "," << cfg.home_x_hi << ","
       << cfg.home_y_lo << "," << cfg.home_y_hi << "," << cfg.expert_jitter << ","
       << cfg.admissible_margin << "|" << reg.to_json();
    const std::string s = os.str();
    return fnv1a64(s.data(), s.size());
}

PushWorldEnv::PushWorldEnv(EnvConfig cfg, const TaskRegistry& reg)
    : cfg_(std::move(cfg)), reg_(reg) {
    cfg_.validate();
    done_flags_.assign(reg_.size(), false);
    begin_episode(EnvState{});
}

EnvState PushWorldEnv::reset_state(const EnvConfig& cfg, Rng& rng) {
    EnvState s;
    const float lo = cfg.reset_lo, hi = cfg.reset_hi;
    bool placed = false;
    for (int attempt = 0; attempt < 128 && !placed; ++attempt) {
        for (auto& b : s.block) {
            b.x = static_cast<float>(rng.uniform(lo, hi));
            b.y = static_cast<float>(rng.uniform(lo, hi));
        }
        placed = min_pairwise_center_distance(s) > cfg.reset_min_separation;
    }
    if (!placed) {
        // deterministic fallback grid, comfortably separated
        s.block[0] = {lo + 0.05f, lo + 0.05f};
        s.block[1] = {hi - 0.05f, lo + 0.05f};
        s.block[2] = {(lo + hi) / 2.f, hi - 0.05f};
    }
    s.effector.x = static_cast<float>(rng.uniform(cfg.home_x_lo, cfg.home_x_hi));
    s.effector.y = static_cast<float>(rng.uniform(cfg.home_y_lo, cfg.home_y_hi));
    s.grip = false;
    s.held = -1;
    s.step_count = 0;
    return s;
}

EnvState transition(const EnvConfig& cfg, const EnvState& s, const Action& a) {
    if (!std::isfinite(a.dx) || !std::isfinite(a.dy))
        throw ConfigError("non-finite action components");
    EnvState n = s;
    const float dx = clampf(a.dx, -cfg.a_max, cfg.a_max);
    const float dy = clampf(a.dy, -cfg.a_max, cfg.a_max);
    n.effector.x = clampf(n.effector.x + dx, 0.f, 1.f);
    n.effector.y = clampf(n.effector.y + dy, 0.f, 1.f);
    // A block released this step is set down in place, not shoved, even
    // though the effector still overlaps it.
    const int released = (a.grip_cmd == GripCmd::open) ? s.held : -1;

    switch (a.grip_cmd) {
        case GripCmd::open:
            n.grip = false;
            n.held = -1;
            break;
        case GripCmd::close: {
            n.grip = true;
            if (n.held < 0) {
                int best = -1;
                float best_d = cfg.grasp_radius;
                for (int b = 0; b < 3; ++b) {
                    const float d = dist(n.effector, n.block[b]);
                    if (d <= best_d) {
                        best_d = d;
                        best = b;
                    }
                }
                n.held = best;
            }
            break;
        }
        case GripCmd::hold:
            break;
    }

    if (n.held >= 0) n.block[n.held] = n.effector;

    const float h = cfg.block_half;
    // An open gripper pushes any block it penetrates, along the axis of
    // least penetration; shoves propagate through block chains away from
    // the effector. A closed gripper never pushes, and the held block rides
    // above the table, exempt from all collision. Blocks must never overlap
    // each other; overlapping the effector point is permitted (it is the
    // actor, not an object) so walls cannot wedge the resolution.
    auto push_out_of_effector = [&](int b) {
        const float ox = h - std::fabs(n.effector.x - n.block[b].x);
        const float oy = h - std::fabs(n.effector.y - n.block[b].y);
        if (ox <= 0.f || oy <= 0.f) return false;
        if (ox <= oy) {
            const float rel = n.block[b].x - n.effector.x;
            const float sign = rel > 0.f ? 1.f : rel < 0.f ? -1.f : (dx >= 0.f ? 1.f : -1.f);
            n.block[b].x += sign * ox;
        } else {
            const float rel = n.block[b].y - n.effector.y;
            const float sign = rel > 0.f ? 1.f : rel < 0.f ? -1.f : (dy >= 0.f ? 1.f : -1.f);
            n.block[b].y += sign * oy;
        }
        return true;
    };
    auto wall_clip = [&](int b) {
        n.block[b].x = clampf(n.block[b].x, h, 1.f - h);
        n.block[b].y = clampf(n.block[b].y, h, 1.f - h);
    };
    auto dist2_to_eff = [&](int b) {
        const float ex = n.block[b].x - n.effector.x;
        const float ey = n.block[b].y - n.effector.y;
        return ex * ex + ey * ey;
    };
    auto pinned_along = [&](int b, float sign, bool axis_x) {
        const float c = axis_x ? n.block[b].x : n.block[b].y;
        return (sign > 0.f && c >= 1.f - h) || (sign < 0.f && c <= h);
    };

    for (int pass = 0; pass < 8; ++pass) {
        bool moved = false;
        if (!n.grip)
            for (int b = 0; b < 3; ++b)
                if (b != n.held && b != released) moved |= push_out_of_effector(b);
        for (int b = 0; b < 3; ++b)
            if (b != n.held) wall_clip(b);
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j) {
                if (i == n.held || j == n.held) continue;
                const float ox = 2.f * h - std::fabs(n.block[i].x - n.block[j].x);
                const float oy = 2.f * h - std::fabs(n.block[i].y - n.block[j].y);
                if (ox <= 0.f || oy <= 0.f) continue;
                // move the block farther from the effector; fall back to the
                // other one when the mover is already against the wall
                int mover = dist2_to_eff(i) >= dist2_to_eff(j) ? i : j;
                int other = mover == i ? j : i;
                const bool axis_x = ox <= oy;
                float rel = axis_x ? n.block[mover].x - n.block[other].x
                                   : n.block[mover].y - n.block[other].y;
                float sign = rel > 0.f ? 1.f : rel < 0.f ? -1.f : (mover == j ? 1.f : -1.f);
                if (pinned_along(mover, sign, axis_x)) {
                    std::swap(mover, other);
                    sign = -sign;
                }
                if (axis_x)
                    n.block[mover].x += sign * ox;
                else
                    n.block[mover].y += sign * oy;
                wall_clip(mover);
                moved = true;
            }
        if (!moved) break;
    }
    for (int b = 0; b < 3; ++b)
        if (b != n.held) wall_clip(b);

    n.step_count = s.step_count + 1;
    return n;
}

void PushWorldEnv::begin_episode(const EnvState& s0) {
    state_ = s0;
    episode_init_ = s0;
    was_grasped_.fill(false);
    if (s0.held >= 0) was_grasped_[s0.held] = true;
    done_flags_.assign(reg_.size(), false);
    refresh_done_flags();
}

void PushWorldEnv::step(const Action& a) {
    state_ = transition(cfg_, state_, a);
    if (state_.held >= 0) was_grasped_[state_.held] = true;
    refresh_done_flags();
}

void PushWorldEnv::refresh_done_flags() {
    for (int t = 0; t < reg_.size(); ++t) {
        const TaskSpec& task = reg_.at(t);
        bool ok = false;
        switch (task.category) {
            case TaskCategory::push: {
                const float d = state_.block[task.block].x - episode_init_.block[task.block].x;
                ok = task.dir < 0 ? (-d >= cfg_.push_delta) : (d >= cfg_.push_delta);
                break;
            }
            case TaskCategory::grasp:
                ok = was_grasped_[task.block];
                break;
            case TaskCategory::place:
                ok = min_pairwise_center_distance(state_) <= cfg_.place_center_threshold();
                break;
        }
        done_flags_[t] = ok;
    }
}

bool task_satisfied(const EnvConfig& cfg, const TaskSpec& task,
                    const std::vector<EnvState>& states) {
    if (states.empty()) return false;
    switch (task.category) {
        case TaskCategory::push: {
            const float d = states.back().block[task.block].x - states.front().block[task.block].x;
            return task.dir < 0 ? (-d >= cfg.push_delta) : (d >= cfg.push_delta);
        }
        case TaskCategory::grasp:
            for (const auto& s : states)
                if (s.held == task.block && s.grip) return true;
            return false;
        case TaskCategory::place:
            return min_pairwise_center_distance(states.back()) <= cfg.place_center_threshold();
    }
    return false;
}

int reward(const EnvConfig& cfg, const TaskRegistry& reg, const Trajectory& traj,
           const Context& ctx) {
    if (traj.states.empty()) throw IntegrityError("trajectory has no states");
    if (!(traj.states.front() == ctx.initial_state))
        throw IntegrityError("trajectory does not start at the context's initial state");
    return task_satisfied(cfg, reg.at(ctx.task), traj.states) ? 1 : 0;
}

std::vector<int> admissible_tasks(const EnvConfig& cfg, const TaskRegistry& reg,
                                  const EnvState& s) {
    std::vector<int> out;
    const float h = cfg.block_half;
    const float m = cfg.admissible_margin;
    for (int t = 0; t < reg.size(); ++t) {
        const TaskSpec& task = reg.at(t);
        bool ok = true;
        switch (task.category) {
            case TaskCategory::push: {
                // A held block can be released and then pushed, so only wall
                // clearance matters here.
                const Vec2 b = s.block[task.block];
                const float room = task.dir < 0 ? b.x - cfg.push_delta - h
                                                : 1.f - h - (b.x + cfg.push_delta);
                if (room < m) {
                    ok = false;
                    break;
                }
                // Conservative corridor check: any block in the swept lane must
                // itself have room to be carried the full push distance.
                for (int o = 0; o < 3; ++o) {
                    if (o == task.block) continue;
                    const Vec2 c = s.block[o];
                    if (std::fabs(c.y - b.y) >= 2.f * h + m) continue;
                    const bool in_lane = task.dir < 0
                                             ? (c.x < b.x && c.x > b.x - cfg.push_delta - 2.f * h - m)
                                             : (c.x > b.x && c.x < b.x + cfg.push_delta + 2.f * h + m);
                    if (!in_lane) continue;
                    const float o_room = task.dir < 0 ? c.x - cfg.push_delta - h
                                                      : 1.f - h - (c.x + cfg.push_delta);
                    if (o_room < m) {
                        ok = false;
                        break;
                    }
                }
                break;
            }
            case TaskCategory::grasp:
                ok = s.held != task.block;
                break;
            case TaskCategory::place:
                ok = min_pairwise_center_distance(s) > cfg.place_center_threshold() + m;
                break;
        }
        if (ok) out.push_back(t);
    }
    return out;
}

Observation PushWorldEnv::render(const EnvConfig& cfg, const EnvState& s) {
    Observation o;
    o.h = cfg.height;
    o.w = cfg.width;
    o.pixels.assign(static_cast<std::size_t>(3) * cfg.height * cfg.width, 0.f);
    const int H = cfg.height, W = cfg.width;
    auto put = [&](int i, int j, const Rgb& c) {
        const std::size_t p = static_cast<std::size_t>(i) * W + j;
        o.pixels[p] = c.r;
        o.pixels[static_cast<std::size_t>(H) * W + p] = c.g;
        o.pixels[2 * static_cast<std::size_t>(H) * W + p] = c.b;
    };
    auto fill_square = [&](const Vec2& center, float half, const Rgb& c) {
        for (int i = 0; i < H; ++i) {
            const float py = 1.f - (i + 0.5f) / H;
            if (std::fabs(py - center.y) > half) continue;
            for (int j = 0; j < W; ++j) {
                const float px = (j + 0.5f) / W;
                if (std::fabs(px - center.x) > half) continue;
                put(i, j, c);
            }
        }
    };
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) put(i, j, kBackground);
    for (int b = 0; b < 3; ++b) fill_square(s.block[b], cfg.block_half, kBlockColor[b]);
    fill_square(s.effector, kEffectorHalf, s.grip ? kEffectorClosed : kEffectorOpen);
    return o;
}

std::vector<std::uint8_t> PushWorldEnv::render_quantized(const EnvConfig& cfg,
                                                         const EnvState& s) {
    const Observation o = render(cfg, s);
    std::vector<std::uint8_t> q(o.pixels.size());
    for (std::size_t i = 0; i < q.size(); ++i)
        q[i] = static_cast<std::uint8_t>(std::lround(o.pixels[i] * 255.f));
    return q;
}

std::vector<float> dequantize_observation(const std::vector<std::uint8_t>& q) {
    std::vector<float> f(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) f[i] = q[i] / 255.f;
    return f;
}

std::array<float, 11> state_to_floats(const EnvState& s) {
    return {s.block[0].x, s.block[0].y, s.block[1].x, s.block[1].y,
            s.block[2].x, s.block[2].y, s.effector.x, s.effector.y,
            s.grip ? 1.f : 0.f, static_cast<float>(s.held),
            static_cast<float>(s.step_count)};
}

EnvState state_from_floats(const std::array<float, 11>& f) {
    EnvState s;
    s.block[0] = {f[0], f[1]};
    s.block[1] = {f[2], f[3]};
    s.block[2] = {f[4], f[5]};
    s.effector = {f[6], f[7]};
    s.grip = f[8] != 0.f;
    s.held = static_cast<int>(f[9]);
    s.step_count = static_cast<int>(f[10]);
    return s;
}

}  // namespace hdexpit
