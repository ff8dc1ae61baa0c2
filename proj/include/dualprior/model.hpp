#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dualprior/rng.hpp"
#include "dualprior/tensor.hpp"

namespace dualprior {

struct DenoiserConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t base_width = 8;
    std::size_t depth = 2;
    std::size_t time_embed_dim = 32;

    std::size_t stage_width(std::size_t stage) const { return base_width << stage; }
};

/// Control feature extractor. blocks_per_stage = 0 gives the plain "hint"
/// encoder (one conv per stage); > 0 gives the dense residual variant.
struct ControlEncoderConfig {
    std::vector<std::size_t> stage_channels{8, 16, 32};
    std::size_t blocks_per_stage = 2;
    std::string merge = "space_to_depth";
};

struct ModelConfig {
    DenoiserConfig denoiser;
    ControlEncoderConfig control;
    bool freeze_encoder = true;
    // Timestep count of the schedule the model is conditioned on.
    std::size_t timesteps = 200;

    void validate() const;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// One feature map per resolution level, finest first. levels[i] matches
/// the decoder stage i activations: [N, stage_width(i), S/2^i, S/2^i].
struct ControlFeatures {
    std::vector<Tensor> levels;
};

struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;
};

/// Parameter tensors a forward pass reads. A live view reads the model's own
/// tensors; a detached view reads value copies that carry no gradient.
struct ParamView {
    std::vector<Tensor> tensors;
};

/// Frozen-encoder activations for one noisy input; shared by every decoder
/// pass over the same (z_t, t).
struct EncoderState {
    std::vector<Tensor> skips;
    Tensor time_embedding;
};

/// Single parameter set shared by the mask-conditioned and mixed-control
/// branches: the denoiser (frozen encoder + trainable decoder) and the
/// control feature extractor.
class SiameseModel {
   public:
    SiameseModel(ModelConfig cfg, std::uint64_t init_seed);
    // Tensor handles share storage, so a copy would alias the parameters.
    SiameseModel(const SiameseModel&) = delete;
    SiameseModel& operator=(const SiameseModel&) = delete;
    SiameseModel(SiameseModel&&) = default;
    SiameseModel& operator=(SiameseModel&&) = default;

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::size_t parameter_count(bool trainable_only = false) const;
    std::vector<Tensor> trainable_tensors() const;
    void zero_grad();

    ParamView live_view() const;
    ParamView detached_view() const;

    /// input: image [N, C, S, S] or mask [N, 1, S, S] (replicated to C).
    ControlFeatures extract_control(const Tensor& input) const;
    ControlFeatures extract_control(const Tensor& input, const ParamView& view) const;

    EncoderState encode(const Tensor& z_t, std::span<const std::size_t> t) const;
    EncoderState encode(const Tensor& z_t, std::span<const std::size_t> t, const ParamView& view) const;
    Tensor decode(const EncoderState& state, const ControlFeatures* control) const;
    Tensor decode(const EncoderState& state, const ControlFeatures* control, const ParamView& view) const;

    /// eps_theta(z_t, t, c); control == nullptr is the unconditional branch.
    Tensor predict_noise(const Tensor& z_t, std::span<const std::size_t> t, const ControlFeatures* control) const;

    /// Validates a z_t batch against the configured size.
    void check_input(const Tensor& z) const;

   private:
    std::size_t index(const std::string& name) const;
    const Tensor& p(const ParamView& v, const std::string& name) const { return v.tensors[index(name)]; }
    void add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k, bool frozen, double init_scale);
    void add_linear(const std::string& name, std::size_t in, std::size_t out, bool frozen);
    void add_resblock(const std::string& name, std::size_t width, bool with_time, bool frozen);

    Tensor conv(const ParamView& v, const std::string& name, const Tensor& x, std::size_t stride, std::size_t pad) const;
    Tensor resblock(const ParamView& v, const std::string& name, const Tensor& x, const Tensor* temb) const;
    Tensor time_mlp(const ParamView& v, std::span<const std::size_t> t) const;

    ModelConfig cfg_;
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> lookup_;
    Rng init_rng_;
};

/// Sinusoidal timestep embedding [N, dim]: sin(t w_k) for k < dim/2 followed
/// by cos(t w_k), with w_k = 10000^(-k / (dim/2)).
Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim);

/// c_mix = w_i * c_i + w_m * sg[c_m], w_i = k / n_iter.
ControlFeatures mix_controls(const ControlFeatures& c_i, const ControlFeatures& c_m, std::size_t k, std::size_t n_iter,
                             double w_m);
double image_control_weight(std::size_t k, std::size_t n_iter);

/// Zero out the control of selected samples: keep[n] = 0 drops sample n.
ControlFeatures mask_control_samples(const ControlFeatures& c, std::span<const double> keep);
ControlFeatures detach_controls(const ControlFeatures& c);

/// eps_u + lambda (eps_c - eps_u), with eps_u from the unconditional branch.
Tensor guided_noise(const SiameseModel& m, const Tensor& z_t, std::span<const std::size_t> t, const ControlFeatures& c_m,
                    double lambda);
/// Same combination on precomputed predictions.
Tensor combine_guidance(const Tensor& eps_uncond, const Tensor& eps_cond, double lambda);

/// Replicate a [N, 1, S, S] mask batch to [N, C, S, S].
Tensor replicate_channels(const Tensor& mask, std::size_t channels);

}  // namespace dualprior
