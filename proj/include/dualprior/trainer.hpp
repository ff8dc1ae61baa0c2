#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualprior/dataset.hpp"
#include "dualprior/gradcheck.hpp"
#include "dualprior/model.hpp"
#include "dualprior/rng.hpp"
#include "dualprior/schedule.hpp"

namespace dualprior {

/// How the mixed-control (image) branch reaches the parameters.
///   shared     - both branches read the same tensors; L_i updates them.
///   detached   - the image branch reads value copies; L_i updates nothing.
///   controlnet - shared, with L_c and the augmentation gate forced off.
enum class BranchMode { kShared, kDetached, kControlNet };

BranchMode parse_branch_mode(const std::string& s);
std::string branch_mode_name(BranchMode m);

struct TrainConfig {
    std::size_t n_iter = 3000;
    std::size_t batch_size = 4;
    double w_m = 1.0;
    double w_c = 1.0;
    std::size_t k_tau = 0;  // 0 selects n_iter / 3
    std::size_t t_tau = 0;  // 0 selects 200 * T / 1000
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double p_drop = 0.05;
    std::uint64_t seed = 0;
    BranchMode mode = BranchMode::kShared;
    bool online_augment = true;
    bool reuse_eps_in_aug = true;
    std::size_t checkpoint_every = 0;  // 0 selects n_iter / 10

    std::size_t resolved_k_tau() const;
    std::size_t resolved_t_tau(std::size_t T) const;
    std::size_t resolved_checkpoint_every() const;
    double effective_w_c() const { return mode == BranchMode::kControlNet ? 0.0 : w_c; }
    bool augmentation_enabled() const { return online_augment && mode != BranchMode::kControlNet; }
    void validate(std::size_t T) const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Per-parameter AdamW moments, indexed like SiameseModel::parameters().
/// Frozen parameters keep empty moment vectors.
struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

OptimizerState make_optimizer(const SiameseModel& model, const TrainConfig& cfg);
/// Decoupled weight decay p *= 1 - lr*wd, then the bias-corrected Adam step.
/// A parameter without a gradient buffer counts as zero gradient; frozen
/// parameters are untouched.
void adamw_update(OptimizerState& opt, SiameseModel& model);

/// w_a = 1 iff k > K_tau and t < T_tau.
int gate_w_a(std::size_t k, std::size_t t, std::size_t k_tau, std::size_t t_tau);

/// Mean squared error between a prediction and its noise target.
Tensor denoising_loss(const Tensor& eps_pred, const Tensor& eps);
/// w_c * mse(eps_m, sg[eps_mix]).
Tensor loss_consistency(const Tensor& eps_m, const Tensor& eps_mix, double w_c);

/// Re-noised single-step estimate fed back through the mask branch, for the
/// samples with w_a[n] = 1:
///   z0' = (z_t - sqrt(1 - ab) sg[eps_mix]) / sqrt(ab),  z_t' = sqrt(ab) z0' + sqrt(1 - ab) eps,
///   loss = mse(eps_theta(z_t', t, c_m), eps) * n_active / N.
/// No forward pass runs when every gate is off.
Tensor online_augment_loss(const SiameseModel& m, const Tensor& z_t, std::span<const std::size_t> t,
                           const ControlFeatures& c_m, const Tensor& eps_mix, const Tensor& eps,
                           const NoiseSchedule& s, std::span<const int> w_a);

/// Random draws of one iteration: timesteps, noise, control-dropout keeps.
struct TrainDraws {
    std::vector<std::size_t> indices;  // dataset rows of the batch
    std::vector<std::size_t> t;
    Tensor eps;
    Tensor eps_aug;  // only when the augmentation does not reuse eps
    std::vector<double> keep;  // 0 drops the mask control of that sample
};

TrainDraws draw_iteration(std::uint64_t seed, std::size_t k, std::size_t dataset_size, const TrainConfig& cfg,
                          const Shape& sample_shape, std::size_t T);

struct BatchTensors {
    Tensor x0;  // [N, C, S, S]
    Tensor y0;  // [N, 1, S, S]
};

BatchTensors gather_batch(const std::vector<PairedSample>& data, std::span<const std::size_t> indices);

/// Values the stop-gradient treats as constants. Finite-difference checks
/// pin them at the base point so perturbed re-evaluations see the same anchors.
struct Anchors {
    Tensor eps_mix;
    ControlFeatures c_m;
};

/// Per-sample fingerprints of the noise each loss term was trained against.
struct NoiseFingerprints {
    std::vector<std::uint64_t> mask, image, aug;
    std::vector<std::size_t> aug_rows;
};

struct LossTerms {
    Tensor l_m, l_i, l_c, l_mp, total;
    double w_i = 0.0;
    double w_c = 0.0;
    std::vector<int> w_a;
    std::size_t n_active = 0;
    Anchors anchors;
    // Graph handles kept for routing audits.
    Tensor eps_m, eps_mix;
    ControlFeatures c_i, c_m;
    NoiseFingerprints fingerprints;
};

struct StepContext {
    std::size_t k = 0;
    const NoiseSchedule* schedule = nullptr;
    const TrainConfig* cfg = nullptr;
};

LossTerms compute_losses(const SiameseModel& m, const BatchTensors& batch, const TrainDraws& draws,
                         const StepContext& ctx, const Anchors* frozen = nullptr);

struct LossReport {
    std::size_t k = 0;
    std::vector<std::size_t> t;
    double loss_m = 0, loss_i = 0, loss_c = 0, loss_m_prime = 0, total = 0;
    double w_i = 0, w_a = 0, w_c = 0;  // w_a: fraction of the batch with the gate open
};

std::string loss_csv_header();
std::string loss_csv_row(const LossReport& r);

/// Outcome of the gradient-routing audit of one step.
struct RoutingAudit {
    std::size_t k = 0;
    double image_branch_grad_from_anchored_terms = 0;  // max |d(L_c + L_m')/d(eps_mix, c_i)|
    double mask_term_grad_through_mix = 0;             // max |d L_i / d c_m|
    bool shared_noise = true;
    bool passed() const {
        return image_branch_grad_from_anchored_terms == 0.0 && mask_term_grad_through_mix == 0.0 && shared_noise;
    }
};

/// One optimizer update at iteration k. With `audit` set, the step is also
/// checked for gradient routing and shared-noise discipline.
LossReport train_step(SiameseModel& m, const std::vector<PairedSample>& data, std::size_t k, const TrainConfig& cfg,
                      OptimizerState& opt, const NoiseSchedule& s, RoutingAudit* audit = nullptr);

struct TrainHooks {
    std::function<void(const LossReport&)> on_report;
    std::function<void(std::size_t completed)> on_checkpoint;
    std::function<void(const RoutingAudit&)> on_audit;  // enables auditing when set
};

/// Runs iterations [start, n_iter). Checkpoint hooks fire every
/// checkpoint_every completed iterations and after the last one.
void train(SiameseModel& m, const std::vector<PairedSample>& data, const TrainConfig& cfg, const NoiseSchedule& s,
           OptimizerState& opt, const TrainHooks& hooks, std::size_t start = 0);

/// theta_a + w_c (theta_b - theta_a), elementwise over matching manifests.
std::vector<Parameter> param_interpolation_diagnostic(const std::vector<Parameter>& theta_a,
                                                      const std::vector<Parameter>& theta_b, double w_c);

std::uint64_t fingerprint_row(std::span<const double> row);

struct LossGradcheckConfig {
    double fraction = 0.01;  // share of trainable elements probed
    double step = 1e-3;
    double tol = 1e-5;
    std::size_t batch = 2;
    std::uint64_t seed = 0;
};

/// Finite-difference check of the full training loss with every term live:
/// k past K_tau, all timesteps under T_tau, w_i strictly between 0 and 1.
/// Zero-initialized parameters are filled with small noise first so that
/// every path carries gradient.
GradcheckReport check_training_gradients(const ModelConfig& mc, const LossGradcheckConfig& g);

}  // namespace dualprior
