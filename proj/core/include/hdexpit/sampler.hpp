#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hdexpit/rng.hpp"
#include "hdexpit/schedule.hpp"

namespace hdexpit {

enum class SamplerKind { ddpm, ddim };

SamplerKind sampler_kind_from_string(const std::string& s);
std::string to_string(SamplerKind k);

struct SamplerConfig {
    SamplerKind kind = SamplerKind::ddpm;
    int inference_steps = 100;  // ddim only; ddpm always walks all steps
    double eta = 0.0;
    double guidance_lambda = 1.0;

    void validate(int schedule_steps) const;
};

/// Denoiser hook used by the samplers. Writes the conditional velocity for
/// the noisy sample `x` at diffusion step `j` into `v_cond`; when
/// `want_uncond` is set it must also fill `v_uncond` (null conditioning).
using DenoiseFn = std::function<void(std::span<const float> x, int j, bool want_uncond,
                                     std::span<float> v_cond, std::span<float> v_uncond)>;

/// Ancestral DDPM sampling under the velocity parameterization. At each step
/// the CFG-combined velocity is converted to (x0_hat, eps_hat); x0_hat is
/// clipped to [clip_lo, clip_hi] and re-noised through the VP posterior.
/// Returns the final clipped x0_hat in `out`. Throws NumericalError naming
/// the step if the denoiser emits NaN.
void ddpm_sample(const DenoiseFn& denoiser, const NoiseSchedule& sched, double lambda,
                 Rng& rng, std::span<float> out, float clip_lo = 0.f, float clip_hi = 1.f);

/// DDIM over a uniformly strided step subsequence (floor rounding, both
/// endpoints included). eta == 0 is deterministic given the initial noise;
/// the rng is consumed only for the initial draw in that case.
void ddim_sample(const DenoiseFn& denoiser, const NoiseSchedule& sched,
                 int inference_steps, double eta, double lambda, Rng& rng,
                 std::span<float> out, float clip_lo = 0.f, float clip_hi = 1.f);

/// Dispatch on config.kind.
void sample(const SamplerConfig& cfg, const DenoiseFn& denoiser,
            const NoiseSchedule& sched, Rng& rng, std::span<float> out,
            float clip_lo = 0.f, float clip_hi = 1.f);

/// The strided DDIM step subsequence, ascending. Exposed for tests.
std::vector<int> ddim_step_sequence(int schedule_steps, int inference_steps);

}  // namespace hdexpit
