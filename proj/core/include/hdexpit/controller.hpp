#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hdexpit/dataset.hpp"
#include "hdexpit/nn.hpp"
#include "hdexpit/sampler.hpp"
#include "hdexpit/schedule.hpp"

namespace hdexpit {

enum class ControllerVariant { regression, diffusion };

ControllerVariant variant_from_string(const std::string& s);
std::string to_string(ControllerVariant v);

/// Fixed-size action chunk; positions effective_len..n-1 are static padding.
struct ActionChunk {
    std::vector<Action> actions;
    int effective_len = 0;
};

struct LlModelConfig {
    int image = 32;
    int chunk = 8;  // n
    int n_min = 4;
    int action_dim = 3;
    ControllerVariant variant = ControllerVariant::diffusion;
    int enc_width = 24;
    int enc_width2 = 32;
    int z_dim = 96;
    int head_width = 64;
    int d_temb = 32;
    int gn_groups = 4;
    float a_max = 0.05f;
    ScheduleKind sched_kind = ScheduleKind::cosine;
    int sched_steps = 50;
    SamplerKind infer_kind = SamplerKind::ddim;
    int infer_steps = 10;
    double infer_eta = 0.0;

    void validate() const;
};

/// Goal-conditioned controller network: a shared image-pair encoder with
/// either a direct regression head or a small diffusion head over the
/// flattened, normalized action chunk.
template <class S>
class LlNet {
public:
    LlNet(const LlModelConfig& cfg, Rng& rng);

    // Training passes (cache-keeping, one worker per instance).
    const std::vector<S>& forward_regression(const std::vector<S>& o_pair, int B);
    void backward_regression(const std::vector<S>& dpred, int B);
    const std::vector<S>& forward_diffusion(const std::vector<S>& o_pair,
                                            const std::vector<S>& x,
                                            const std::vector<int>& jstep, int B);
    void backward_diffusion(const std::vector<S>& dv, int B);

    // Inference split: encode the image pair once, then run the cheap head
    // per diffusion step.
    std::vector<S> encode(const std::vector<S>& o_pair, int B);
    void diffusion_head(const std::vector<S>& z, const std::vector<S>& x,
                        const std::vector<int>& jstep, int B, std::vector<S>& v_out);

    nn::ParamList<S>& params() { return params_; }
    const nn::ParamList<S>& params() const { return params_; }
    const LlModelConfig& config() const { return cfg_; }

private:
    const std::vector<S>& encoder_fwd(const std::vector<S>& o_pair, int B);
    void encoder_bwd(const std::vector<S>& dz, int B);
    const std::vector<S>& head_fwd(const std::vector<S>& z, const std::vector<S>& x,
                                   const std::vector<int>& jstep, int B);
    // returns dz
    const std::vector<S>& head_bwd(const std::vector<S>& dv, int B);

    LlModelConfig cfg_;
    int grid_ = 0;
    nn::ParamList<S> params_;

    nn::Conv2d<S> patch_, conv_e_, conv_d_;
    nn::GroupNorm<S> gn1_, gn2_, gn3_;
    nn::SiLU<S> se1_, se2_, se3_, sz_;
    nn::Linear<S> lin_z_;

    nn::Linear<S> lin_r1_, lin_r2_;
    nn::SiLU<S> sr_;

    nn::Linear<S> lin_x_, lin_t_, lin_cz_, lin_m1_, lin_m2_, lin_out_;
    nn::LayerNorm<S> ln1_, ln2_;
    nn::SiLU<S> sh1_, sh2_;

    std::vector<S> flat_, temb_, h_, h2_, h3_, dz_, vout_;
};

struct ControllerParams {
    LlModelConfig cfg;
    NoiseSchedule sched = NoiseSchedule::make(ScheduleKind::cosine, 50);
    std::unique_ptr<LlNet<float>> net;
    nn::Adam adam;
    std::int64_t train_steps = 0;

    ControllerParams clone() const;
};

ControllerParams make_controller(const LlModelConfig& cfg, std::uint64_t init_seed);

/// Samples a training chunk: start index uniform over the trajectory, length
/// uniform over {n_min..n} capped by the remaining actions, static padding
/// up to n. o_target is the observation effective_len steps after o_source.
struct ChunkSample {
    std::vector<float> o_source, o_target;
    ActionChunk chunk;
    int start = 0;  // drawn start index within the trajectory
};
ChunkSample extract_chunk(const Trajectory& traj, Rng& rng, int n_min, int n, int obs_h,
                          int obs_w);

/// Chunk <-> normalized network space: displacements in units of a_max,
/// grip as {-1 open, 0 hold, +1 close}.
std::vector<float> normalize_chunk(const ActionChunk& c, float a_max);
ActionChunk decode_chunk(std::span<const float> v, float a_max, int n);

struct LlBatch {
    int B = 0;
    std::vector<float> o_pairs;     // [B, 6, H, W] source||target
    std::vector<float> chunks;      // [B, n*action_dim] normalized targets
};

class LlTrainer {
public:
    LlTrainer(ControllerParams& params, int workers);
    float step(const LlBatch& batch, Rng& rng);

private:
    ControllerParams& p_;
    int workers_;
    std::vector<std::unique_ptr<LlNet<float>>> reps_;
};

/// Predicts one chunk. The regression variant is deterministic; the
/// diffusion variant runs its configured sampler over the chunk space.
/// Components of decoded actions are clipped to [-a_max, a_max].
ActionChunk ll_predict(ControllerParams& p, std::span<const float> o_source,
                       std::span<const float> o_target, Rng& rng);

void save_controller(const ControllerParams& p, const std::string& path);
ControllerParams load_controller(const std::string& path);

std::string ll_config_to_json(const LlModelConfig& cfg);
LlModelConfig ll_config_from_json(const std::string& js);

}  // namespace hdexpit
