#include "dualprior/schedule.hpp"

#include <cmath>
#include <string>

#include "dualprior/error.hpp"
#include "dualprior/ops.hpp"

namespace dualprior {

void NoiseSchedule::check_timestep(std::size_t t) const {
    if (t >= T) throw ConfigError("timestep " + std::to_string(t) + " out of range [0, " + std::to_string(T) + ")");
}

NoiseSchedule make_linear_schedule(std::size_t T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule needs T >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = t == 0 ? s.alpha[0] : s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

nlohmann::json schedule_to_json(const NoiseSchedule& s) {
    return {{"T", s.T}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}, {"kind", "linear"}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    if (j.value("kind", std::string("linear")) != "linear") throw ConfigError("only linear schedules are supported");
    return make_linear_schedule(j.at("T").get<std::size_t>(), j.at("beta_start").get<double>(),
                                j.at("beta_end").get<double>());
}

namespace {

std::vector<double> per_sample(std::span<const std::size_t> t, const NoiseSchedule& s, double (*f)(double)) {
    std::vector<double> out;
    out.reserve(t.size());
    for (auto ti : t) {
        s.check_timestep(ti);
        out.push_back(f(s.alpha_bar[ti]));
    }
    return out;
}

double signal_coef(double ab) { return std::sqrt(ab); }
double noise_coef(double ab) { return std::sqrt(1.0 - ab); }

}  // namespace

Tensor forward_diffuse(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
    s.check_timestep(t);
    if (z0.shape() != eps.shape()) throw ShapeError("forward_diffuse: z0/eps shape mismatch");
    const double ab = s.alpha_bar[t];
    return add(scale(z0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

Tensor forward_diffuse(const Tensor& z0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& s) {
    if (z0.shape() != eps.shape()) throw ShapeError("forward_diffuse: z0/eps shape mismatch");
    const auto a = per_sample(t, s, signal_coef);
    const auto b = per_sample(t, s, noise_coef);
    return add(scale_per_sample(z0, a), scale_per_sample(eps, b));
}

Tensor single_step_x0(const Tensor& z_t, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& s) {
    s.check_timestep(t);
    if (z_t.shape() != eps_hat.shape()) throw ShapeError("single_step_x0: z_t/eps shape mismatch");
    const double ab = s.alpha_bar[t];
    return scale(sub(z_t, scale(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

Tensor single_step_x0(const Tensor& z_t, std::span<const std::size_t> t, const Tensor& eps_hat, const NoiseSchedule& s) {
    if (z_t.shape() != eps_hat.shape()) throw ShapeError("single_step_x0: z_t/eps shape mismatch");
    const auto b = per_sample(t, s, noise_coef);
    auto inv = per_sample(t, s, signal_coef);
    for (auto& v : inv) v = 1.0 / v;
    return scale_per_sample(sub(z_t, scale_per_sample(eps_hat, b)), inv);
}

Tensor ddim_step(const Tensor& z_t, std::size_t t, std::ptrdiff_t t_prev, const Tensor& eps_hat, double eta,
                 const NoiseSchedule& s) {
    if (eta != 0.0) throw ConfigError("ddim_step: only eta = 0 is supported");
    if (t_prev != kCleanStep && static_cast<std::size_t>(t_prev) >= t) {
        throw ConfigError("ddim_step: t_prev must be below t");
    }
    Tensor z0 = single_step_x0(z_t, t, eps_hat, s);
    if (t_prev == kCleanStep) return z0;
    const double ab = s.alpha_bar[static_cast<std::size_t>(t_prev)];
    return add(scale(z0, std::sqrt(ab)), scale(eps_hat, std::sqrt(1.0 - ab)));
}

std::vector<std::size_t> ddim_timesteps(const NoiseSchedule& s, std::size_t steps) {
    if (steps < 1 || steps > s.T) throw ConfigError("DDIM steps must be in [1, T]");
    std::vector<std::size_t> out(steps);
    if (steps == 1) {
        out[0] = s.T - 1;
        return out;
    }
    for (std::size_t i = 0; i < steps; ++i) {
        const double v = static_cast<double>(s.T - 1) * static_cast<double>(steps - 1 - i) / static_cast<double>(steps - 1);
        out[i] = static_cast<std::size_t>(std::llround(v));
    }
    return out;
}

}  // namespace dualprior
