#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdexpit/dataset.hpp"
#include "hdexpit/nn.hpp"
#include "hdexpit/sampler.hpp"
#include "hdexpit/schedule.hpp"

namespace hdexpit {

/// A whole visual plan: `frames` subgoal images generated at once.
struct Plan {
    int frames = 0, h = 0, w = 0;
    std::vector<float> data;  // frames * 3 * h * w

    std::span<const float> frame(int i) const {
        const std::size_t fs = static_cast<std::size_t>(3) * h * w;
        return {data.data() + i * fs, fs};
    }
};

struct GoalEmbedding {
    std::vector<float> vector;
    bool null_flag = false;
};

struct HlModelConfig {
    int image = 32;
    int frames = 8;   // subgoals per plan
    int patch = 4;    // patchify kernel/stride
    int width = 20;   // channels on the token grid
    int blocks = 2;
    int d_goal = 16;
    int d_cond = 48;
    int d_temb = 32;
    int gn_groups = 4;
    int num_goals = 10;
    double p_drop = 0.1;  // goal-conditioning dropout for guidance training
    ScheduleKind sched_kind = ScheduleKind::cosine;
    int sched_steps = 100;

    void validate() const;
};

namespace detail {

template <class S>
struct FrameFilm {
    nn::Linear<S> lin;  // cond -> (scale, shift), zero-initialized
    std::vector<S> x_cache, s_cache, y, dx, dcond;
    int C = 0;

    void setup(nn::ParamList<S>& ps, const std::string& name, int d_cond, int channels,
               Rng& rng) {
        C = channels;
        lin.setup(ps, name, d_cond, 2 * channels, rng, /*zero_init=*/true);
    }

    const std::vector<S>& fwd(const std::vector<S>& x, const std::vector<S>& cond, int B,
                              int M, int P) {
        x_cache = x;
        s_cache = lin.fwd(cond, B);
        y.resize(x.size());
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) {
                    const S sc = S(1) + s_cache[static_cast<std::size_t>(b) * 2 * C + c];
                    const S sh = s_cache[static_cast<std::size_t>(b) * 2 * C + C + c];
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * C + c) * P;
                    for (int p = 0; p < P; ++p) y[base + p] = x_cache[base + p] * sc + sh;
                }
        return y;
    }

    // Returns dx; the cond gradient contribution lands in `dcond`.
    const std::vector<S>& bwd(const std::vector<S>& dy, int B, int M, int P) {
        std::vector<S> ds(static_cast<std::size_t>(B) * 2 * C, S(0));
        dx.resize(dy.size());
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) {
                    const S sc = S(1) + s_cache[static_cast<std::size_t>(b) * 2 * C + c];
                    const std::size_t base =
                        ((static_cast<std::size_t>(b) * M + m) * C + c) * P;
                    S acc_s = S(0), acc_t = S(0);
                    for (int p = 0; p < P; ++p) {
                        const S d = dy[base + p];
                        acc_s += d * x_cache[base + p];
                        acc_t += d;
                        dx[base + p] = d * sc;
                    }
                    ds[static_cast<std::size_t>(b) * 2 * C + c] += acc_s;
                    ds[static_cast<std::size_t>(b) * 2 * C + C + c] += acc_t;
                }
        dcond = lin.bwd(ds, B);
        return dx;
    }
};

}  // namespace detail

/// Velocity denoiser over whole subgoal sequences. Every frame is
/// conditioned on the initial observation by channel concatenation; the goal
/// embedding and diffusion step modulate the token grid through FiLM.
/// Single-resolution token grid (image/patch)^2 with temporal convolutions
/// and a pooled global pathway.
template <class S>
class HlDenoiser {
public:
    HlDenoiser(const HlModelConfig& cfg, Rng& init_rng);

    /// x: [B, frames, 3, H, W] noisy; o0: [B, 3, H, W]; goal_rows: global
    /// goal row per sample, -1 for the null (unconditional) token; jstep:
    /// diffusion step per sample. Returns [B, frames, 3, H, W] velocities.
    const std::vector<S>& forward(const std::vector<S>& x, const std::vector<S>& o0,
                                  const std::vector<int>& goal_rows,
                                  const std::vector<int>& jstep, int B);

    /// Accumulates parameter gradients for the last forward.
    void backward(const std::vector<S>& dv, int B);

    nn::ParamList<S>& params() { return params_; }
    const nn::ParamList<S>& params() const { return params_; }
    const HlModelConfig& config() const { return cfg_; }

    std::vector<S> goal_row_embedding(int row) const;

    std::int64_t forward_count = 0;  // instrumentation for oracle-guided evals

private:
    HlModelConfig cfg_;
    int grid_ = 0, P_ = 0;
    nn::ParamList<S> params_;

    nn::EmbeddingTable<S> goal_table_;
    nn::Linear<S> lin_goal_, lin_t1_, lin_t2_;
    nn::SiLU<S> silu_t_;
    nn::Conv2d<S> patch_;
    nn::ParamBlock<S> pos_emb_;    // [width, P] spatial tokens
    nn::ParamBlock<S> frame_emb_;  // [frames, width]
    struct Block {
        nn::GroupNorm<S> gn_a;
        detail::FrameFilm<S> film;
        nn::SiLU<S> silu_a;
        nn::Conv2d<S> conv;
        nn::GroupNorm<S> gn_b;
        nn::SiLU<S> silu_b;
        nn::TemporalConv<S> tconv;
        nn::Linear<S> glin1, glin2;
        nn::SiLU<S> silu_g;
        std::vector<S> gpool;
    };
    std::vector<std::unique_ptr<Block>> blocks_;
    nn::GroupNorm<S> gn_out_;
    nn::SiLU<S> silu_out_;
    nn::PatchExpand<S> unpatch_;
    // Direct input passthrough with a conditioning-dependent channel gain.
    // The patch bottleneck cannot carry the white-noise component that
    // velocity prediction needs at low noise levels; this linear path can.
    nn::Linear<S> lin_gain_;

    // forward caches
    std::vector<S> xin_, x_noisy_, gain_, cond_, temb_, out_, dh_, dcond_;
    std::vector<int> rows_cache_;
};

/// Planner parameters plus optimizer and bookkeeping.
struct PlannerParams {
    HlModelConfig cfg;
    NoiseSchedule sched = NoiseSchedule::make(ScheduleKind::cosine, 100);
    std::unique_ptr<HlDenoiser<float>> model;
    nn::Adam adam;
    std::int64_t train_steps = 0;

    PlannerParams clone() const;
};

PlannerParams make_planner(const HlModelConfig& cfg, std::uint64_t init_seed);

/// Fixed goal-id lookup; a null id yields the all-zeros unconditional token.
GoalEmbedding goal_embed(const PlannerParams& p, std::optional<int> goal_row);

/// Evenly spaced subgoal extraction: index i -> floor(i*N/frames + 0.5) for
/// i = 1..frames, always ending at N. Repetition occurs when N < frames.
std::vector<int> subgoal_indices(int num_actions, int frames);
std::pair<std::vector<float>, Plan> extract_subgoals(const Trajectory& traj, int frames,
                                                     int obs_h, int obs_w);

struct HlBatch {
    int B = 0;
    std::vector<float> x0;       // [B, frames, 3, H, W] clean subgoal stacks
    std::vector<float> o0;       // [B, 3, H, W]
    std::vector<int> goal_rows;  // global goal rows (>= 0)
};

/// One gradient step on the velocity objective; samples the diffusion step,
/// the noise and the conditioning dropout per element from `rng`. Returns
/// the batch loss. Throws NumericalError (with the step counter) on NaN.
class HlTrainer {
public:
    HlTrainer(PlannerParams& params, int workers);
    float step(const HlBatch& batch, Rng& rng);

private:
    PlannerParams& p_;
    int workers_;
    std::vector<std::unique_ptr<HlDenoiser<float>>> reps_;
};

/// Samples a whole plan conditioned on (o0, goal). The sampler consumes
/// `rng` for its noise; guidance strength comes from the config.
Plan hl_sample_plan(PlannerParams& p, std::span<const float> o0,
                    std::optional<int> goal_row, const SamplerConfig& sampler, Rng& rng);

void save_planner(const PlannerParams& p, const std::string& path);
PlannerParams load_planner(const std::string& path);

std::string hl_config_to_json(const HlModelConfig& cfg);
HlModelConfig hl_config_from_json(const std::string& js);

}  // namespace hdexpit
