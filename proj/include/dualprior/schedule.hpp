#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "dualprior/tensor.hpp"

namespace dualprior {

/// Variance schedule tables. Timesteps are 0-based: t in {0, ..., T-1},
/// alpha_bar[0] = alpha[0].
struct NoiseSchedule {
    std::size_t T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    void check_timestep(std::size_t t) const;
};

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end);

/// Checkpoint-header form: {T, beta_start, beta_end, kind: "linear"}.
nlohmann::json schedule_to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps. Differentiable in z0.
Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s);
/// Per-sample timesteps along the leading axis.
Tensor forward_diffuse(const Tensor& z0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& s);

/// z0' = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t). eps_hat is used as
/// given; callers detach it when the caller's objective requires it.
Tensor single_step_x0(const Tensor& z_t, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& s);
Tensor single_step_x0(const Tensor& z_t, std::span<const std::size_t> t, const Tensor& eps_hat, const NoiseSchedule& s);

/// Marker for "clean" as the destination of the last DDIM transition.
inline constexpr std::ptrdiff_t kCleanStep = -1;

/// Deterministic DDIM transition (eta must be 0). t_prev == kCleanStep returns z0'.
Tensor ddim_step(const Tensor& z_t, std::size_t t, std::ptrdiff_t t_prev, const Tensor& eps_hat, double eta,
                 const NoiseSchedule& s);

/// Uniform-stride timestep ladder from T-1 downwards with `steps` entries,
/// always starting at T-1: t_i = round((T-1) * (steps-1-i) / (steps-1)).
std::vector<std::size_t> ddim_timesteps(const NoiseSchedule& s, std::size_t steps);

}  // namespace dualprior
