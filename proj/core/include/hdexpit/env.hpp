#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hdexpit/errors.hpp"
#include "hdexpit/rng.hpp"

namespace hdexpit {

struct Vec2 {
    float x = 0.f, y = 0.f;
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

enum class GripCmd : int { open = 0, close = 1, hold = 2 };

struct Action {
    float dx = 0.f, dy = 0.f;
    GripCmd grip_cmd = GripCmd::hold;
    friend bool operator==(const Action&, const Action&) = default;
};

/// The no-op padding action: zero displacement, keep the gripper as-is.
inline Action static_action() { return Action{0.f, 0.f, GripCmd::hold}; }

struct EnvState {
    std::array<Vec2, 3> block;  // red, green, blue
    Vec2 effector;
    bool grip = false;
    int held = -1;  // block index or -1
    int step_count = 0;
    friend bool operator==(const EnvState&, const EnvState&) = default;
};

/// Dense pixel observation, channel-major, values in [0, 1].
struct Observation {
    int h = 0, w = 0;
    std::vector<float> pixels;  // 3*h*w

    friend bool operator==(const Observation&, const Observation&) = default;
};

enum class TaskCategory { push, grasp, place };

struct TaskSpec {
    std::string id;
    TaskCategory category = TaskCategory::push;
    int block = -1;  // target block for push/grasp; unused for place
    int dir = 0;     // -1 left, +1 right for push
    std::vector<std::string> instructions;
};

/// The fixed 10-task registry: 6 pushes (3 blocks x left/right), 3 grasps,
/// 1 place-any-pair.
class TaskRegistry {
public:
    static TaskRegistry standard();

    int size() const { return static_cast<int>(tasks_.size()); }
    const TaskSpec& at(int i) const { return tasks_.at(i); }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    int index_of(const std::string& task_id) const;

    /// Goals across all tasks get a dense global index used by the goal
    /// embedding table: goal_index(task, goal_id).
    int goal_index(int task, int goal_id) const;
    int total_goals() const;

    std::string to_json() const;

private:
    std::vector<TaskSpec> tasks_;
    std::vector<int> goal_offset_;
};

struct EnvConfig {
    int height = 32, width = 32;
    float a_max = 0.05f;
    float grasp_radius = 0.06f;
    float place_delta = 0.08f;  // proximity margin beyond touching blocks
    float push_delta = 0.15f;
    float block_half = 0.05f;
    int t_max = 192;
    int expert_cap = 64;
    float reset_lo = 0.25f, reset_hi = 0.75f;
    float reset_min_separation = 0.20f;
    float home_x_lo = 0.35f, home_x_hi = 0.65f;
    float home_y_lo = 0.06f, home_y_hi = 0.14f;
    float expert_jitter = 0.004f;
    float admissible_margin = 0.02f;
    std::uint64_t master_seed = 0;

    void validate() const;
    /// Place succeeds when two block centers come within this distance.
    float place_center_threshold() const { return 2.f * block_half + place_delta; }
};

/// Digest of the environment configuration plus the task registry; datasets
/// and bundles refuse to mix across digests.
std::uint64_t env_digest(const EnvConfig& cfg, const TaskRegistry& reg);

enum class ContextOrigin { none = 0, env_reset = 1, expert_replayed = 2 };

struct Context {
    EnvState initial_state;
    int task = 0;     // registry index
    int goal_id = 0;  // instruction index within the task
    ContextOrigin origin = ContextOrigin::none;
};

enum class TrajOrigin { expert = 0, collected = 1, evaluation = 2 };

struct Trajectory {
    std::vector<EnvState> states;                      // N+1
    std::vector<Action> actions;                       // N
    std::vector<std::vector<std::uint8_t>> observations;  // N+1 frames, quantized
    std::string task_id;
    int goal_id = 0;
    bool success = false;
    TrajOrigin origin = TrajOrigin::expert;
    ContextOrigin context_origin = ContextOrigin::none;
    int step_budget = 0;

    int num_actions() const { return static_cast<int>(actions.size()); }
};

/// Deterministic kinematic table-top world. One instance holds one episode;
/// run any number of instances in parallel with disjoint rng streams.
class PushWorldEnv {
public:
    PushWorldEnv(EnvConfig cfg, const TaskRegistry& reg);

    /// Samples a fresh initial state: blocks in the central sub-rectangle
    /// with pairwise separation, effector in the home band, grip open.
    static EnvState reset_state(const EnvConfig& cfg, Rng& rng);

    /// Pure rasterization of a state.
    static Observation render(const EnvConfig& cfg, const EnvState& s);
    static std::vector<std::uint8_t> render_quantized(const EnvConfig& cfg, const EnvState& s);

    void begin_episode(const EnvState& s0);
    const EnvState& state() const { return state_; }
    const EnvState& episode_initial() const { return episode_init_; }

    /// Advances one step; done flags for every task are refreshed relative
    /// to the episode's initial state.
    void step(const Action& a);
    bool done(int task) const { return done_flags_.at(task); }
    const std::vector<bool>& done_flags() const { return done_flags_; }

    const EnvConfig& config() const { return cfg_; }
    const TaskRegistry& registry() const { return reg_; }

private:
    void refresh_done_flags();

    EnvConfig cfg_;
    TaskRegistry reg_;
    EnvState state_;
    EnvState episode_init_;
    std::array<bool, 3> was_grasped_{};
    std::vector<bool> done_flags_;
};

/// Single-step transition as a pure function (used by the env and by tests).
EnvState transition(const EnvConfig& cfg, const EnvState& s, const Action& a);

/// Binary task reward recomputed from a whole trajectory. Throws
/// IntegrityError when the trajectory does not start at the context's state.
int reward(const EnvConfig& cfg, const TaskRegistry& reg, const Trajectory& traj,
           const Context& ctx);

/// Success predicate over raw state sequences (history matters for grasp).
bool task_satisfied(const EnvConfig& cfg, const TaskSpec& task,
                    const std::vector<EnvState>& states);

/// Tasks that are neither pre-satisfied at `s` nor geometrically hopeless
/// (pushes need wall clearance for the target and for corridor blocks).
std::vector<int> admissible_tasks(const EnvConfig& cfg, const TaskRegistry& reg,
                                  const EnvState& s);

/// Privileged waypoint expert. Returns a successful trajectory of length
/// <= cfg.expert_cap or throws ExpertFailure. The rng adds small action
/// jitter so repeated demos differ.
Trajectory scripted_expert(const Context& ctx, PushWorldEnv& env, Rng& rng);

/// Serializes a state to the fixed 11-float layout used on disk and by PCA.
std::array<float, 11> state_to_floats(const EnvState& s);
EnvState state_from_floats(const std::array<float, 11>& f);

std::vector<float> dequantize_observation(const std::vector<std::uint8_t>& q);

}  // namespace hdexpit
