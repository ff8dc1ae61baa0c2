#include "dualprior/model.hpp"

#include <cmath>

#include "dualprior/error.hpp"
#include "dualprior/ops.hpp"

namespace dualprior {

void ModelConfig::validate() const {
    const auto& d = denoiser;
    if (d.image_size == 0 || d.channels == 0 || d.base_width == 0 || d.time_embed_dim == 0) {
        throw ConfigError("denoiser sizes must be >= 1");
    }
    if (timesteps == 0) throw ConfigError("timesteps must be >= 1");
    if (d.time_embed_dim % 2) throw ConfigError("time_embed_dim must be even");
    if (d.image_size % (std::size_t{1} << d.depth)) throw ConfigError("image_size must be divisible by 2^depth");
    if (control.stage_channels.size() != d.depth + 1) {
        throw ConfigError("control encoder needs depth+1 = " + std::to_string(d.depth + 1) + " stages");
    }
    for (std::size_t i = 0; i < control.stage_channels.size(); ++i) {
        if (control.stage_channels[i] == 0) throw ConfigError("control stage widths must be >= 1");
        if (i > 0 && control.stage_channels[i] <= control.stage_channels[i - 1]) {
            throw ConfigError("control stage widths must be strictly increasing");
        }
    }
    if (control.merge != "space_to_depth") throw ConfigError("unknown control merge '" + control.merge + "'");
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    const auto& d = cfg.denoiser;
    return {
        {"denoiser",
         {{"image_size", d.image_size},
          {"channels", d.channels},
          {"base_width", d.base_width},
          {"depth", d.depth},
          {"time_embed_dim", d.time_embed_dim}}},
        {"control",
         {{"stage_channels", cfg.control.stage_channels},
          {"blocks_per_stage", cfg.control.blocks_per_stage},
          {"merge", cfg.control.merge}}},
        {"freeze_encoder", cfg.freeze_encoder},
        {"timesteps", cfg.timesteps},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        const auto& d = j.at("denoiser");
        cfg.denoiser.image_size = d.at("image_size");
        cfg.denoiser.channels = d.at("channels");
        cfg.denoiser.base_width = d.at("base_width");
        cfg.denoiser.depth = d.at("depth");
        cfg.denoiser.time_embed_dim = d.at("time_embed_dim");
        const auto& c = j.at("control");
        cfg.control.stage_channels = c.at("stage_channels").get<std::vector<std::size_t>>();
        cfg.control.blocks_per_stage = c.at("blocks_per_stage");
        cfg.control.merge = c.at("merge");
        cfg.freeze_encoder = j.at("freeze_encoder");
        cfg.timesteps = j.at("timesteps");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

SiameseModel::SiameseModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)), init_rng_(init_seed) {
    cfg_.validate();
    const auto& d = cfg_.denoiser;
    const bool fz = cfg_.freeze_encoder;
    const std::size_t temb = d.time_embed_dim;

    // Denoiser encoder and time embedding: the frozen half.
    add_linear("time.l1", temb, temb, fz);
    add_linear("time.l2", temb, temb, fz);
    add_conv("enc.in", d.stage_width(0), d.channels, 3, fz, 1.0);
    for (std::size_t i = 0; i <= d.depth; ++i) {
        add_resblock("enc.s" + std::to_string(i), d.stage_width(i), true, fz);
        if (i < d.depth) add_conv("enc.down" + std::to_string(i), d.stage_width(i + 1), d.stage_width(i), 3, fz, 1.0);
    }
    // Decoder, always trainable.
    for (std::size_t i = d.depth + 1; i-- > 0;) {
        if (i < d.depth) add_conv("dec.up" + std::to_string(i), d.stage_width(i), d.stage_width(i + 1), 3, false, 1.0);
        add_resblock("dec.s" + std::to_string(i), d.stage_width(i), true, false);
    }
    add_conv("dec.out", d.channels, d.stage_width(0), 3, false, 0.0);

    // Control feature extractor.
    const auto& sc = cfg_.control.stage_channels;
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const auto si = std::to_string(i);
        if (i == 0) {
            add_conv("ctl.stem", sc[0], d.channels, 3, false, 1.0);
        } else {
            add_conv("ctl.merge" + si, sc[i], sc[i - 1] * 4, 1, false, 1.0);
        }
        if (cfg_.control.blocks_per_stage == 0) {
            add_conv("ctl.s" + si + ".conv", sc[i], sc[i], 3, false, 1.0);
        }
        for (std::size_t b = 0; b < cfg_.control.blocks_per_stage; ++b) {
            add_resblock("ctl.s" + si + ".rb" + std::to_string(b), sc[i], false, false);
        }
        add_conv("ctl.zero" + si, d.stage_width(i), sc[i], 1, false, 0.0);
    }
}

void SiameseModel::add_conv(const std::string& name, std::size_t out, std::size_t in, std::size_t k, bool frozen,
                            double init_scale) {
    const double std_dev = init_scale * std::sqrt(2.0 / static_cast<double>(in * k * k));
    std::vector<double> w(out * in * k * k);
    for (auto& v : w) v = std_dev == 0.0 ? 0.0 : std_dev * init_rng_.normal();
    lookup_[name + ".w"] = params_.size();
    params_.push_back({name + ".w", Tensor::from_data({out, in, k, k}, std::move(w), !frozen), frozen});
    lookup_[name + ".b"] = params_.size();
    params_.push_back({name + ".b", Tensor::zeros({out}, !frozen), frozen});
}

void SiameseModel::add_linear(const std::string& name, std::size_t in, std::size_t out, bool frozen) {
    const double std_dev = std::sqrt(1.0 / static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = std_dev * init_rng_.normal();
    lookup_[name + ".w"] = params_.size();
    params_.push_back({name + ".w", Tensor::from_data({in, out}, std::move(w), !frozen), frozen});
    lookup_[name + ".b"] = params_.size();
    params_.push_back({name + ".b", Tensor::zeros({out}, !frozen), frozen});
}

void SiameseModel::add_resblock(const std::string& name, std::size_t width, bool with_time, bool frozen) {
    add_conv(name + ".conv1", width, width, 3, frozen, 1.0);
    if (with_time) add_linear(name + ".temb", cfg_.denoiser.time_embed_dim, width, frozen);
    add_conv(name + ".conv2", width, width, 3, frozen, 0.5);
}

std::size_t SiameseModel::index(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
}

std::size_t SiameseModel::parameter_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (!trainable_only || !p.frozen) n += p.value.numel();
    }
    return n;
}

std::vector<Tensor> SiameseModel::trainable_tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
        if (!p.frozen) out.push_back(p.value);
    }
    return out;
}

void SiameseModel::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

ParamView SiameseModel::live_view() const {
    ParamView v;
    for (const auto& p : params_) v.tensors.push_back(p.value);
    return v;
}

ParamView SiameseModel::detached_view() const {
    ParamView v;
    for (const auto& p : params_) v.tensors.push_back(stop_gradient(p.value));
    return v;
}

Tensor SiameseModel::conv(const ParamView& v, const std::string& name, const Tensor& x, std::size_t stride,
                          std::size_t pad) const {
    return add_channel_bias(conv2d(x, p(v, name + ".w"), stride, pad), p(v, name + ".b"));
}

Tensor SiameseModel::resblock(const ParamView& v, const std::string& name, const Tensor& x, const Tensor* temb) const {
    Tensor h = conv(v, name + ".conv1", silu(x), 1, 1);
    if (temb) {
        h = add_sample_channel_bias(h, add_row_bias(matmul(*temb, p(v, name + ".temb.w")), p(v, name + ".temb.b")));
    }
    h = conv(v, name + ".conv2", silu(h), 1, 1);
    return add(x, h);
}

Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim) {
    const std::size_t half = dim / 2;
    std::vector<double> out(t.size() * dim);
    for (std::size_t n = 0; n < t.size(); ++n) {
        for (std::size_t k = 0; k < half; ++k) {
            const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
            out[n * dim + k] = std::sin(static_cast<double>(t[n]) * w);
            out[n * dim + half + k] = std::cos(static_cast<double>(t[n]) * w);
        }
    }
    return Tensor::from_data({t.size(), dim}, std::move(out));
}

Tensor SiameseModel::time_mlp(const ParamView& v, std::span<const std::size_t> t) const {
    Tensor e = timestep_embedding(t, cfg_.denoiser.time_embed_dim);
    e = silu(add_row_bias(matmul(e, p(v, "time.l1.w")), p(v, "time.l1.b")));
    e = add_row_bias(matmul(e, p(v, "time.l2.w")), p(v, "time.l2.b"));
    // Stage projections read silu(temb).
    return silu(e);
}

Tensor replicate_channels(const Tensor& mask, std::size_t channels) {
    if (mask.rank() != 4 || mask.dim(1) != 1) throw ShapeError("replicate_channels expects [N,1,H,W]");
    const auto n = mask.dim(0), hw = mask.dim(2) * mask.dim(3);
    std::vector<double> out(n * channels * hw);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < channels; ++c)
            std::copy_n(mask.data().begin() + i * hw, hw, out.begin() + (i * channels + c) * hw);
    return Tensor::from_data({n, channels, mask.dim(2), mask.dim(3)}, std::move(out));
}

void SiameseModel::check_input(const Tensor& z) const {
    const auto& d = cfg_.denoiser;
    if (z.rank() != 4 || z.dim(1) != d.channels || z.dim(2) != d.image_size || z.dim(3) != d.image_size) {
        throw ShapeError("expected [N," + std::to_string(d.channels) + "," + std::to_string(d.image_size) + "," +
                         std::to_string(d.image_size) + "], got " + shape_str(z.shape()));
    }
}

ControlFeatures SiameseModel::extract_control(const Tensor& input) const { return extract_control(input, live_view()); }

ControlFeatures SiameseModel::extract_control(const Tensor& input, const ParamView& v) const {
    const auto& d = cfg_.denoiser;
    Tensor x = input;
    if (x.rank() == 4 && x.dim(1) == 1 && d.channels != 1) {
        if (x.requires_grad()) throw ShapeError("mask controls are data and cannot require grad");
        x = replicate_channels(x, d.channels);
    }
    check_input(x);
    const auto& sc = cfg_.control.stage_channels;
    ControlFeatures out;
    Tensor h;
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const auto si = std::to_string(i);
        h = i == 0 ? silu(conv(v, "ctl.stem", x, 1, 1)) : silu(conv(v, "ctl.merge" + si, space_to_depth(h, 2), 1, 0));
        if (cfg_.control.blocks_per_stage == 0) h = silu(conv(v, "ctl.s" + si + ".conv", h, 1, 1));
        for (std::size_t b = 0; b < cfg_.control.blocks_per_stage; ++b) {
            h = resblock(v, "ctl.s" + si + ".rb" + std::to_string(b), h, nullptr);
        }
        out.levels.push_back(conv(v, "ctl.zero" + si, h, 1, 0));
    }
    return out;
}

EncoderState SiameseModel::encode(const Tensor& z_t, std::span<const std::size_t> t) const {
    return encode(z_t, t, live_view());
}

EncoderState SiameseModel::encode(const Tensor& z_t, std::span<const std::size_t> t, const ParamView& v) const {
    check_input(z_t);
    if (t.size() != z_t.dim(0)) throw ShapeError("one timestep per sample required");
    for (auto ti : t) {
        if (ti >= cfg_.timesteps) throw ConfigError("timestep " + std::to_string(ti) + " out of range");
    }
    const auto& d = cfg_.denoiser;
    EncoderState st;
    st.time_embedding = time_mlp(v, t);
    Tensor h = conv(v, "enc.in", z_t, 1, 1);
    for (std::size_t i = 0; i <= d.depth; ++i) {
        h = resblock(v, "enc.s" + std::to_string(i), h, &st.time_embedding);
        st.skips.push_back(h);
        if (i < d.depth) h = conv(v, "enc.down" + std::to_string(i), h, 2, 1);
    }
    return st;
}

Tensor SiameseModel::decode(const EncoderState& state, const ControlFeatures* control) const {
    return decode(state, control, live_view());
}

Tensor SiameseModel::decode(const EncoderState& st, const ControlFeatures* control, const ParamView& v) const {
    const auto& d = cfg_.denoiser;
    if (control && control->levels.size() != d.depth + 1) throw ShapeError("control pyramid depth mismatch");
    Tensor h = st.skips[d.depth];
    for (std::size_t i = d.depth + 1; i-- > 0;) {
        const auto si = std::to_string(i);
        if (i < d.depth) h = add(conv(v, "dec.up" + si, upsample_nearest(h, 2), 1, 1), st.skips[i]);
        if (control) {
            const Tensor& c = control->levels[i];
            if (c.shape() != h.shape()) {
                throw ShapeError("control level " + si + " " + shape_str(c.shape()) + " vs stage " + shape_str(h.shape()));
            }
            h = add(h, c);
        }
        h = resblock(v, "dec.s" + si, h, &st.time_embedding);
    }
    return conv(v, "dec.out", silu(h), 1, 1);
}

Tensor SiameseModel::predict_noise(const Tensor& z_t, std::span<const std::size_t> t,
                                   const ControlFeatures* control) const {
    return decode(encode(z_t, t), control);
}

double image_control_weight(std::size_t k, std::size_t n_iter) {
    if (n_iter == 0) throw ConfigError("n_iter must be positive");
    if (k > n_iter) throw ConfigError("iteration beyond n_iter");
    return static_cast<double>(k) / static_cast<double>(n_iter);
}

ControlFeatures mix_controls(const ControlFeatures& c_i, const ControlFeatures& c_m, std::size_t k, std::size_t n_iter,
                             double w_m) {
    if (c_i.levels.size() != c_m.levels.size()) throw ShapeError("mix_controls: pyramid depth mismatch");
    const double w_i = image_control_weight(k, n_iter);
    ControlFeatures out;
    for (std::size_t l = 0; l < c_i.levels.size(); ++l) {
        if (c_i.levels[l].shape() != c_m.levels[l].shape()) throw ShapeError("mix_controls: level shape mismatch");
        out.levels.push_back(add(scale(c_i.levels[l], w_i), scale(stop_gradient(c_m.levels[l]), w_m)));
    }
    return out;
}

ControlFeatures mask_control_samples(const ControlFeatures& c, std::span<const double> keep) {
    ControlFeatures out;
    for (const auto& l : c.levels) out.levels.push_back(scale_per_sample(l, keep));
    return out;
}

ControlFeatures detach_controls(const ControlFeatures& c) {
    ControlFeatures out;
    for (const auto& l : c.levels) out.levels.push_back(stop_gradient(l));
    return out;
}

Tensor combine_guidance(const Tensor& eps_uncond, const Tensor& eps_cond, double lambda) {
    if (lambda < 0.0) throw ConfigError("guidance scale must be >= 0");
    // (1 - lambda) u + lambda c keeps lambda = 0 and lambda = 1 exact.
    return add(scale(eps_uncond, 1.0 - lambda), scale(eps_cond, lambda));
}

Tensor guided_noise(const SiameseModel& m, const Tensor& z_t, std::span<const std::size_t> t, const ControlFeatures& c_m,
                    double lambda) {
    if (lambda < 0.0) throw ConfigError("guidance scale must be >= 0");
    const auto st = m.encode(z_t, t);
    return combine_guidance(m.decode(st, nullptr), m.decode(st, &c_m), lambda);
}

}  // namespace dualprior
