#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hdexpit/errors.hpp"

namespace hdexpit {

enum class ScheduleKind { cosine, linear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Variance-preserving discrete noise schedule: alpha[j]^2 + beta[j]^2 == 1
/// for every step, alpha strictly decreasing from ~1 to ~0. The VP constraint
/// is what makes the velocity recovery identity exact, so construction
/// enforces it and the rest of the code may rely on it.
class NoiseSchedule {
public:
    /// Builds a schedule of `steps` levels. The alpha_bar curve runs between
    /// fixed endpoints (0.9985 down to 5e-4) so the near-clean-start /
    /// near-pure-noise-end invariants hold for every steps >= 2.
    static NoiseSchedule make(ScheduleKind kind, int steps);

    /// Wraps an explicit alpha_bar array; validates all invariants.
    static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

    int steps() const { return static_cast<int>(alpha_bar_.size()); }
    double alpha(int j) const { return alpha_[check(j)]; }
    double beta(int j) const { return beta_[check(j)]; }
    double alpha_bar(int j) const { return alpha_bar_[check(j)]; }

    std::span<const double> alphas() const { return alpha_; }
    std::span<const double> betas() const { return beta_; }

    std::string to_json() const;
    std::uint64_t digest() const;

private:
    NoiseSchedule() = default;
    int check(int j) const {
        if (j < 0 || j >= steps())
            throw ConfigError("diffusion step index " + std::to_string(j) +
                              " out of range [0, " + std::to_string(steps()) + ")");
        return j;
    }

    std::vector<double> alpha_, beta_, alpha_bar_;
};

namespace detail {
inline void require_same_shape(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ConfigError(std::string("shape mismatch in ") + what + ": " +
                          std::to_string(a) + " vs " + std::to_string(b));
}
}  // namespace detail

/// x_j = alpha_j * x0 + beta_j * eps, elementwise.
template <class S>
void forward_noise(std::span<const S> x0, int j, std::span<const S> eps,
                   const NoiseSchedule& sched, std::span<S> out) {
    detail::require_same_shape(x0.size(), eps.size(), "forward_noise");
    detail::require_same_shape(x0.size(), out.size(), "forward_noise");
    const S a = static_cast<S>(sched.alpha(j));
    const S b = static_cast<S>(sched.beta(j));
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
}

/// v = alpha_j * eps - beta_j * x0, the regression target of the denoiser.
template <class S>
void velocity_target(std::span<const S> x0, std::span<const S> eps, int j,
                     const NoiseSchedule& sched, std::span<S> out) {
    detail::require_same_shape(x0.size(), eps.size(), "velocity_target");
    detail::require_same_shape(x0.size(), out.size(), "velocity_target");
    const S a = static_cast<S>(sched.alpha(j));
    const S b = static_cast<S>(sched.beta(j));
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * eps[i] - b * x0[i];
}

/// Inverts (forward_noise, velocity_target): x0 = alpha*x_j - beta*v and
/// eps = beta*x_j + alpha*v. Exact because alpha^2 + beta^2 == 1.
template <class S>
void recover_from_velocity(std::span<const S> x_j, std::span<const S> v, int j,
                           const NoiseSchedule& sched, std::span<S> x0_hat,
                           std::span<S> eps_hat) {
    detail::require_same_shape(x_j.size(), v.size(), "recover_from_velocity");
    detail::require_same_shape(x_j.size(), x0_hat.size(), "recover_from_velocity");
    detail::require_same_shape(x_j.size(), eps_hat.size(), "recover_from_velocity");
    const S a = static_cast<S>(sched.alpha(j));
    const S b = static_cast<S>(sched.beta(j));
    for (std::size_t i = 0; i < x_j.size(); ++i) {
        x0_hat[i] = a * x_j[i] - b * v[i];
        eps_hat[i] = b * x_j[i] + a * v[i];
    }
}

/// Classifier-free guidance: v_uncond + lambda * (v_cond - v_uncond).
/// lambda == 1 and lambda == 0 return the respective input bit-exactly.
template <class S>
void cfg_combine(std::span<const S> v_cond, std::span<const S> v_uncond,
                 double lambda, std::span<S> out) {
    detail::require_same_shape(v_cond.size(), v_uncond.size(), "cfg_combine");
    detail::require_same_shape(v_cond.size(), out.size(), "cfg_combine");
    if (lambda == 1.0) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_cond[i];
        return;
    }
    if (lambda == 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i];
        return;
    }
    const S lam = static_cast<S>(lambda);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = v_uncond[i] + lam * (v_cond[i] - v_uncond[i]);
}

}  // namespace hdexpit
