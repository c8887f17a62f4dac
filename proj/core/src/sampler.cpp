#include "hdexpit/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "hdexpit/errors.hpp"

namespace hdexpit {

namespace {

void check_finite(std::span<const float> v, int step) {
    for (float x : v)
        if (std::isnan(x) || std::isinf(x))
            throw NumericalError("denoiser produced a non-finite velocity at diffusion step " +
                                 std::to_string(step));
}

struct Work {
    std::vector<float> v_cond, v_uncond, v, x0, eps;
    explicit Work(std::size_t n) : v_cond(n), v_uncond(n), v(n), x0(n), eps(n) {}
};

void guided_velocity(const DenoiseFn& denoiser, std::span<const float> x, int j,
                     double lambda, Work& w) {
    const bool want_uncond = lambda != 1.0;
    denoiser(x, j, want_uncond, w.v_cond, w.v_uncond);
    check_finite(w.v_cond, j);
    if (want_uncond) check_finite(w.v_uncond, j);
    cfg_combine<float>(w.v_cond, want_uncond ? std::span<const float>(w.v_uncond)
                                             : std::span<const float>(w.v_cond),
                       lambda, w.v);
}

void recover_clipped(std::span<const float> x, int j, const NoiseSchedule& sched,
                     Work& w, float lo, float hi) {
    recover_from_velocity<float>(x, w.v, j, sched, w.x0, w.eps);
    for (float& t : w.x0) t = std::clamp(t, lo, hi);
}

}  // namespace

SamplerKind sampler_kind_from_string(const std::string& s) {
    if (s == "ddpm") return SamplerKind::ddpm;
    if (s == "ddim") return SamplerKind::ddim;
    throw ConfigError("unknown sampler kind: " + s);
}

std::string to_string(SamplerKind k) { return k == SamplerKind::ddpm ? "ddpm" : "ddim"; }

void SamplerConfig::validate(int schedule_steps) const {
    if (kind == SamplerKind::ddim) {
        if (inference_steps > schedule_steps)
            throw ConfigError("ddim inference_steps " + std::to_string(inference_steps) +
                              " exceeds schedule steps " + std::to_string(schedule_steps));
        if (inference_steps < 2)
            throw ConfigError("ddim inference_steps must be at least 2");
    }
    if (eta < 0.0) throw ConfigError("sampler eta must be non-negative");
}

std::vector<int> ddim_step_sequence(int schedule_steps, int inference_steps) {
    if (inference_steps > schedule_steps)
        throw ConfigError("ddim inference_steps exceeds schedule steps");
    if (inference_steps < 2) throw ConfigError("ddim inference_steps must be at least 2");
    std::vector<int> seq(inference_steps);
    for (int k = 0; k < inference_steps; ++k) {
        seq[k] = static_cast<int>(std::floor(static_cast<double>(k) * (schedule_steps - 1) /
                                             (inference_steps - 1)));
    }
    seq.front() = 0;
    seq.back() = schedule_steps - 1;
    return seq;
}

void ddpm_sample(const DenoiseFn& denoiser, const NoiseSchedule& sched, double lambda,
                 Rng& rng, std::span<float> out, float clip_lo, float clip_hi) {
    const int J = sched.steps();
    const std::size_t n = out.size();
    Work w(n);
    std::vector<float> x(n);
    for (auto& t : x) t = rng.normal_f();

    for (int j = J - 1; j >= 0; --j) {
        guided_velocity(denoiser, x, j, lambda, w);
        recover_clipped(x, j, sched, w, clip_lo, clip_hi);
        if (j == 0) break;
        const double a_j = sched.alpha_bar(j);
        const double a_prev = sched.alpha_bar(j - 1);
        const double beta_var = 1.0 - a_j / a_prev;
        const double c0 = std::sqrt(a_prev) * beta_var / (1.0 - a_j);
        const double cx = std::sqrt(1.0 - beta_var) * (1.0 - a_prev) / (1.0 - a_j);
        const double sigma = std::sqrt(beta_var * (1.0 - a_prev) / (1.0 - a_j));
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<float>(c0 * w.x0[i] + cx * x[i] + sigma * rng.normal());
        }
    }
    std::copy(w.x0.begin(), w.x0.end(), out.begin());
}

void ddim_sample(const DenoiseFn& denoiser, const NoiseSchedule& sched,
                 int inference_steps, double eta, double lambda, Rng& rng,
                 std::span<float> out, float clip_lo, float clip_hi) {
    const auto seq = ddim_step_sequence(sched.steps(), inference_steps);
    const std::size_t n = out.size();
    Work w(n);
    std::vector<float> x(n);
    for (auto& t : x) t = rng.normal_f();

    for (int k = inference_steps - 1; k >= 0; --k) {
        const int j = seq[k];
        guided_velocity(denoiser, x, j, lambda, w);
        recover_clipped(x, j, sched, w, clip_lo, clip_hi);
        if (k == 0) break;
        const int j_prev = seq[k - 1];
        const double a_j = sched.alpha_bar(j);
        const double a_prev = sched.alpha_bar(j_prev);
        const double sigma =
            eta * std::sqrt((1.0 - a_prev) / (1.0 - a_j)) * std::sqrt(1.0 - a_j / a_prev);
        const double dir = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
        const double c0 = std::sqrt(a_prev);
        if (sigma > 0.0) {
            for (std::size_t i = 0; i < n; ++i)
                x[i] = static_cast<float>(c0 * w.x0[i] + dir * w.eps[i] + sigma * rng.normal());
        } else {
            for (std::size_t i = 0; i < n; ++i)
                x[i] = static_cast<float>(c0 * w.x0[i] + dir * w.eps[i]);
        }
    }
    std::copy(w.x0.begin(), w.x0.end(), out.begin());
}

void sample(const SamplerConfig& cfg, const DenoiseFn& denoiser, const NoiseSchedule& sched,
            Rng& rng, std::span<float> out, float clip_lo, float clip_hi) {
    cfg.validate(sched.steps());
    if (cfg.kind == SamplerKind::ddpm) {
        ddpm_sample(denoiser, sched, cfg.guidance_lambda, rng, out, clip_lo, clip_hi);
    } else {
        ddim_sample(denoiser, sched, cfg.inference_steps, cfg.eta, cfg.guidance_lambda, rng,
                    out, clip_lo, clip_hi);
    }
}

}  // namespace hdexpit
