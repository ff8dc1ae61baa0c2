#include "dualprior/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "dualprior/error.hpp"
#include "dualprior/ops.hpp"

namespace dualprior {

using nlohmann::json;

namespace {
constexpr std::uint64_t kTrainStream = 1;

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
}

ControlFeatures select_levels(const ControlFeatures& c, std::span<const std::size_t> rows) {
    ControlFeatures out;
    for (const auto& l : c.levels) out.levels.push_back(select_samples(l, rows));
    return out;
}

double max_abs_grad(const Tensor& t) {
    double m = 0.0;
    if (t.defined() && t.has_grad())
        for (double g : t.grad()) m = std::max(m, std::abs(g));
    return m;
}

std::vector<std::uint64_t> fingerprint_rows(const Tensor& t) {
    const std::size_t n = t.dim(0), row = t.numel() / n;
    std::vector<std::uint64_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fingerprint_row(t.data().subspan(i * row, row));
    return out;
}

}  // namespace

BranchMode parse_branch_mode(const std::string& s) {
    if (s == "shared" || s == "siamese") return BranchMode::kShared;
    if (s == "detached") return BranchMode::kDetached;
    if (s == "controlnet") return BranchMode::kControlNet;
    throw ConfigError("unknown mode '" + s + "' (siamese|detached|controlnet)");
}

std::string branch_mode_name(BranchMode m) {
    switch (m) {
        case BranchMode::kShared: return "siamese";
        case BranchMode::kDetached: return "detached";
        case BranchMode::kControlNet: return "controlnet";
    }
    return "?";
}

std::size_t TrainConfig::resolved_k_tau() const { return k_tau ? k_tau : n_iter / 3; }
std::size_t TrainConfig::resolved_t_tau(std::size_t T) const {
    return t_tau ? t_tau : std::max<std::size_t>(1, 200 * T / 1000);
}
std::size_t TrainConfig::resolved_checkpoint_every() const {
    return checkpoint_every ? checkpoint_every : std::max<std::size_t>(1, n_iter / 10);
}

void TrainConfig::validate(std::size_t T) const {
    require(n_iter >= 2, "n_iter must be >= 2");
    require(batch_size >= 1, "batch_size must be >= 1");
    const auto kt = resolved_k_tau();
    require(kt > 0 && kt < n_iter, "need 0 < k_tau < n_iter (got " + std::to_string(kt) + ")");
    const auto tt = resolved_t_tau(T);
    require(tt > 0 && tt <= T, "need 0 < t_tau <= T (got " + std::to_string(tt) + ")");
    require(w_c >= 0 && std::isfinite(w_c), "w_c must be >= 0");
    require(w_m >= 0 && std::isfinite(w_m), "w_m must be >= 0");
    require(lr > 0 && std::isfinite(lr), "lr must be > 0");
    require(weight_decay >= 0, "weight_decay must be >= 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
    require(adam_eps > 0, "adam_eps must be > 0");
    require(p_drop >= 0 && p_drop <= 1, "p_drop must lie in [0, 1]");
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"n_iter", c.n_iter},
                {"batch_size", c.batch_size},
                {"w_m", c.w_m},
                {"w_c", c.w_c},
                {"k_tau", c.k_tau},
                {"t_tau", c.t_tau},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"p_drop", c.p_drop},
                {"seed", c.seed},
                {"mode", branch_mode_name(c.mode)},
                {"online_augment", c.online_augment},
                {"reuse_eps_in_aug", c.reuse_eps_in_aug},
                {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    const json defaults = train_config_to_json(c);
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) throw ConfigError("train config: unknown key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("n_iter", c.n_iter);
        get("batch_size", c.batch_size);
        get("w_m", c.w_m);
        get("w_c", c.w_c);
        get("k_tau", c.k_tau);
        get("t_tau", c.t_tau);
        get("lr", c.lr);
        get("weight_decay", c.weight_decay);
        get("beta1", c.beta1);
        get("beta2", c.beta2);
        get("adam_eps", c.adam_eps);
        get("p_drop", c.p_drop);
        get("seed", c.seed);
        if (j.contains("mode")) c.mode = parse_branch_mode(j.at("mode").get<std::string>());
        get("online_augment", c.online_augment);
        get("reuse_eps_in_aug", c.reuse_eps_in_aug);
        get("checkpoint_every", c.checkpoint_every);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

OptimizerState make_optimizer(const SiameseModel& model, const TrainConfig& cfg) {
    OptimizerState opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.adam_eps;
    for (const auto& p : model.parameters()) {
        const std::size_t n = p.frozen ? 0 : p.value.numel();
        opt.m.emplace_back(n, 0.0);
        opt.v.emplace_back(n, 0.0);
    }
    return opt;
}

void adamw_update(OptimizerState& opt, SiameseModel& model) {
    auto& params = model.parameters();
    if (opt.m.size() != params.size()) throw ConfigError("optimizer state does not match the model");
    ++opt.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    const double decay = 1.0 - opt.lr * opt.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (p.frozen) continue;
        auto w = p.value.mutable_data();
        auto& m = opt.m[i];
        auto& v = opt.v[i];
        if (m.size() != w.size()) throw ConfigError("optimizer moment shape mismatch for " + p.name);
        const auto g = p.value.grad();
        const bool has = !g.empty();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = has ? g[j] : 0.0;
            w[j] *= decay;
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
            w[j] -= opt.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + opt.eps);
        }
    }
}

int gate_w_a(std::size_t k, std::size_t t, std::size_t k_tau, std::size_t t_tau) {
    return k > k_tau && t < t_tau ? 1 : 0;
}

Tensor denoising_loss(const Tensor& eps_pred, const Tensor& eps) { return mse(eps_pred, eps); }

Tensor loss_consistency(const Tensor& eps_m, const Tensor& eps_mix, double w_c) {
    if (w_c < 0) throw ConfigError("w_c must be >= 0");
    if (w_c == 0.0) return Tensor::scalar(0.0);
    return scale(mse(eps_m, stop_gradient(eps_mix)), w_c);
}

Tensor online_augment_loss(const SiameseModel& m, const Tensor& z_t, std::span<const std::size_t> t,
                           const ControlFeatures& c_m, const Tensor& eps_mix, const Tensor& eps,
                           const NoiseSchedule& s, std::span<const int> w_a) {
    const std::size_t n = z_t.dim(0);
    if (t.size() != n || w_a.size() != n) throw ShapeError("online_augment_loss: per-sample inputs disagree");
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
        if (w_a[i]) rows.push_back(i);
    if (rows.empty()) return Tensor::scalar(0.0);
    std::vector<std::size_t> t_sel;
    for (auto r : rows) t_sel.push_back(t[r]);
    const Tensor eps_sel = select_samples(eps, rows);
    const Tensor z0p = single_step_x0(select_samples(z_t, rows), t_sel, select_samples(stop_gradient(eps_mix), rows), s);
    const Tensor ztp = forward_diffuse(z0p, t_sel, eps_sel, s);
    const auto c_sel = select_levels(c_m, rows);
    const Tensor pred = m.predict_noise(ztp, t_sel, &c_sel);
    return scale(mse(pred, eps_sel), static_cast<double>(rows.size()) / static_cast<double>(n));
}

TrainDraws draw_iteration(std::uint64_t seed, std::size_t k, std::size_t dataset_size, const TrainConfig& cfg,
                          const Shape& sample_shape, std::size_t T) {
    if (dataset_size == 0) throw DataError("training set is empty");
    Rng rng(derive_seed(derive_seed(seed, kTrainStream), k));
    const std::size_t B = cfg.batch_size;
    TrainDraws d;
    for (std::size_t i = 0; i < B; ++i) d.indices.push_back(rng.below(dataset_size));
    for (std::size_t i = 0; i < B; ++i) d.t.push_back(rng.below(T));
    Shape shape{B};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    std::vector<double> eps(shape_numel(shape));
    rng.fill_normal(eps);
    d.eps = Tensor::from_data(shape, std::move(eps));
    for (std::size_t i = 0; i < B; ++i) d.keep.push_back(rng.uniform() < cfg.p_drop ? 0.0 : 1.0);
    if (!cfg.reuse_eps_in_aug) {
        std::vector<double> e2(shape_numel(shape));
        rng.fill_normal(e2);
        d.eps_aug = Tensor::from_data(shape, std::move(e2));
    }
    return d;
}

BatchTensors gather_batch(const std::vector<PairedSample>& data, std::span<const std::size_t> indices) {
    std::vector<const Image*> images, masks;
    for (auto i : indices) {
        if (i >= data.size()) throw DataError("batch index out of range");
        images.push_back(&data[i].image);
        masks.push_back(&data[i].mask);
    }
    return {stack_images(std::span<const Image* const>(images)), stack_images(std::span<const Image* const>(masks))};
}

LossTerms compute_losses(const SiameseModel& m, const BatchTensors& batch, const TrainDraws& draws,
                         const StepContext& ctx, const Anchors* frozen) {
    const auto& cfg = *ctx.cfg;
    const auto& s = *ctx.schedule;
    const std::size_t B = batch.x0.dim(0);
    if (B == 0) throw DataError("empty batch");
    if (draws.t.size() != B || draws.keep.size() != B) throw ShapeError("draws do not match the batch");

    LossTerms out;
    out.w_i = image_control_weight(ctx.k, cfg.n_iter);
    out.w_c = cfg.effective_w_c();

    const Tensor z_t = forward_diffuse(batch.x0, draws.t, draws.eps, s);
    const auto st = m.encode(z_t, draws.t);

    // Mask branch.
    out.c_m = m.extract_control(batch.y0);
    const auto c_m_drop = mask_control_samples(out.c_m, draws.keep);
    out.eps_m = m.decode(st, &c_m_drop);
    out.l_m = denoising_loss(out.eps_m, draws.eps);
    out.fingerprints.mask = fingerprint_rows(draws.eps);

    // Image branch on the mixed control.
    const ControlFeatures c_m_anchor = frozen ? frozen->c_m : detach_controls(out.c_m);
    if (cfg.mode == BranchMode::kDetached) {
        const auto view = m.detached_view();
        out.c_i = m.extract_control(batch.x0, view);
        const auto c_mix = mix_controls(out.c_i, c_m_anchor, ctx.k, cfg.n_iter, cfg.w_m);
        out.eps_mix = m.decode(m.encode(z_t, draws.t, view), &c_mix, view);
    } else {
        out.c_i = m.extract_control(batch.x0);
        const auto c_mix = mix_controls(out.c_i, c_m_anchor, ctx.k, cfg.n_iter, cfg.w_m);
        out.eps_mix = m.decode(st, &c_mix);
    }
    out.l_i = denoising_loss(out.eps_mix, draws.eps);
    out.fingerprints.image = fingerprint_rows(draws.eps);

    out.anchors.eps_mix = frozen ? frozen->eps_mix : stop_gradient(out.eps_mix);
    out.anchors.c_m = c_m_anchor;

    out.l_c = loss_consistency(out.eps_m, out.anchors.eps_mix, out.w_c);

    out.w_a.assign(B, 0);
    if (cfg.augmentation_enabled()) {
        const auto k_tau = cfg.resolved_k_tau(), t_tau = cfg.resolved_t_tau(s.T);
        for (std::size_t n = 0; n < B; ++n) out.w_a[n] = gate_w_a(ctx.k, draws.t[n], k_tau, t_tau);
    }
    const Tensor& eps_aug = cfg.reuse_eps_in_aug ? draws.eps : draws.eps_aug;
    out.l_mp = online_augment_loss(m, z_t, draws.t, out.c_m, out.anchors.eps_mix, eps_aug, s, out.w_a);
    const auto aug_fp = fingerprint_rows(eps_aug);
    for (std::size_t n = 0; n < B; ++n) {
        if (!out.w_a[n]) continue;
        ++out.n_active;
        out.fingerprints.aug.push_back(aug_fp[n]);
        out.fingerprints.aug_rows.push_back(n);
    }

    out.total = add(add(add(out.l_m, out.l_i), out.l_c), out.l_mp);
    return out;
}

std::string loss_csv_header() { return "k,t,loss_m,loss_i,loss_c,loss_m_prime,total,w_i,w_a"; }

std::string loss_csv_row(const LossReport& r) {
    std::string t;
    for (std::size_t i = 0; i < r.t.size(); ++i) t += (i ? ";" : "") + std::to_string(r.t[i]);
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.k, t.c_str(), r.loss_m,
                  r.loss_i, r.loss_c, r.loss_m_prime, r.total, r.w_i, r.w_a);
    return buf;
}

namespace {

void clear_graph_grads(LossTerms& terms) {
    for (Tensor* t : {&terms.eps_m, &terms.eps_mix}) t->zero_grad();
    for (auto* c : {&terms.c_i, &terms.c_m})
        for (auto& l : c->levels) l.zero_grad();
}

void run_audit(SiameseModel& m, LossTerms& terms, const TrainConfig& cfg, RoutingAudit& audit) {
    m.zero_grad();
    clear_graph_grads(terms);
    backward(add(terms.l_c, terms.l_mp));
    double img = max_abs_grad(terms.eps_mix);
    for (const auto& l : terms.c_i.levels) img = std::max(img, max_abs_grad(l));
    audit.image_branch_grad_from_anchored_terms = img;

    m.zero_grad();
    clear_graph_grads(terms);
    backward(terms.l_i);
    double mask = 0.0;
    for (const auto& l : terms.c_m.levels) mask = std::max(mask, max_abs_grad(l));
    audit.mask_term_grad_through_mix = mask;

    const auto& fp = terms.fingerprints;
    bool ok = fp.mask == fp.image;
    if (cfg.reuse_eps_in_aug)
        for (std::size_t j = 0; j < fp.aug.size(); ++j) ok = ok && fp.aug[j] == fp.mask[fp.aug_rows[j]];
    audit.shared_noise = ok;

    m.zero_grad();
    clear_graph_grads(terms);
}

}  // namespace

LossReport train_step(SiameseModel& m, const std::vector<PairedSample>& data, std::size_t k, const TrainConfig& cfg,
                      OptimizerState& opt, const NoiseSchedule& s, RoutingAudit* audit) {
    if (data.empty()) throw DataError("empty training set");
    const Image& first = data.front().image;
    const auto draws = draw_iteration(cfg.seed, k, data.size(), cfg, {first.channels, first.height, first.width}, s.T);
    const auto batch = gather_batch(data, draws.indices);
    StepContext ctx{k, &s, &cfg};
    auto terms = compute_losses(m, batch, draws, ctx);

    if (audit) {
        audit->k = k;
        run_audit(m, terms, cfg, *audit);
    }
    m.zero_grad();
    backward(terms.total);
    adamw_update(opt, m);

    LossReport r;
    r.k = k;
    r.t = draws.t;
    r.loss_m = terms.l_m.item();
    r.loss_i = terms.l_i.item();
    r.loss_c = terms.l_c.item();
    r.loss_m_prime = terms.l_mp.item();
    r.total = terms.total.item();
    r.w_i = terms.w_i;
    r.w_a = static_cast<double>(terms.n_active) / static_cast<double>(draws.t.size());
    r.w_c = terms.w_c;
    if (!std::isfinite(r.total)) throw NumericError("non-finite loss at iteration " + std::to_string(k));
    return r;
}

void train(SiameseModel& m, const std::vector<PairedSample>& data, const TrainConfig& cfg, const NoiseSchedule& s,
           OptimizerState& opt, const TrainHooks& hooks, std::size_t start) {
    cfg.validate(s.T);
    if (m.config().timesteps != s.T) throw ConfigError("model and schedule disagree on T");
    const auto every = cfg.resolved_checkpoint_every();
    for (std::size_t k = start; k < cfg.n_iter; ++k) {
        RoutingAudit audit;
        const auto r = train_step(m, data, k, cfg, opt, s, hooks.on_audit ? &audit : nullptr);
        if (hooks.on_report) hooks.on_report(r);
        if (hooks.on_audit) hooks.on_audit(audit);
        const auto done = k + 1;
        if (hooks.on_checkpoint && (done % every == 0 || done == cfg.n_iter)) hooks.on_checkpoint(done);
    }
}

std::vector<Parameter> param_interpolation_diagnostic(const std::vector<Parameter>& a, const std::vector<Parameter>& b,
                                                      double w_c) {
    if (a.size() != b.size()) throw ShapeError("parameter manifests differ in length");
    std::vector<Parameter> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].value.shape() != b[i].value.shape())
            throw ShapeError("parameter manifests differ at " + a[i].name);
        std::vector<double> v(a[i].value.numel());
        const auto da = a[i].value.data(), db = b[i].value.data();
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = w_c == 1.0 ? db[j] : da[j] + w_c * (db[j] - da[j]);
        out.push_back({a[i].name, Tensor::from_data(a[i].value.shape(), std::move(v)), a[i].frozen});
    }
    return out;
}

std::uint64_t fingerprint_row(std::span<const double> row) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double d : row) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &d, sizeof d);
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

GradcheckReport check_training_gradients(const ModelConfig& mc, const LossGradcheckConfig& g) {
    mc.validate();
    if (!(g.fraction > 0 && g.fraction <= 1)) throw ConfigError("gradcheck fraction must be in (0, 1]");
    if (!(g.step > 0) || !(g.tol > 0)) throw ConfigError("gradcheck step and tol must be positive");
    if (g.batch == 0) throw ConfigError("gradcheck batch must be >= 1");

    SiameseModel m(mc, derive_seed(g.seed, 0));
    Rng wake(derive_seed(g.seed, 1));
    for (auto& p : m.parameters()) {
        if (p.frozen) continue;
        auto d = p.value.mutable_data();
        if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; }))
            for (auto& v : d) v = 0.1 * wake.normal();
    }
    // Content is irrelevant to the check, so any size works: noise images, coin-flip masks.
    const std::size_t S = mc.denoiser.image_size, C = mc.denoiser.channels;
    Rng fill(derive_seed(g.seed, 2));
    std::vector<PairedSample> data(g.batch);
    for (auto& d : data) {
        d.image = Image(C, S, S);
        d.mask = Image(1, S, S);
        for (auto& v : d.image.data) v = std::clamp(0.5 * fill.normal(), -1.0, 1.0);
        for (auto& v : d.mask.data) v = fill.uniform() < 0.5 ? 1.0 : 0.0;
    }
    const NoiseSchedule s = make_linear_schedule(mc.timesteps, 1e-4, 0.02);

    TrainConfig cfg;
    cfg.n_iter = 30;
    cfg.k_tau = 10;
    cfg.batch_size = g.batch;
    cfg.p_drop = 0.0;
    cfg.seed = g.seed;
    const std::size_t k = 20;
    const std::size_t t_tau = cfg.resolved_t_tau(mc.timesteps);
    auto draws = draw_iteration(cfg.seed, k, data.size(), cfg,
                                {mc.denoiser.channels, mc.denoiser.image_size, mc.denoiser.image_size}, mc.timesteps);
    for (std::size_t i = 0; i < draws.t.size(); ++i) draws.t[i] = (3 + 17 * i) % t_tau;
    const auto batch = gather_batch(data, draws.indices);
    StepContext ctx{k, &s, &cfg};
    const auto base = compute_losses(m, batch, draws, ctx);
    const Anchors frozen = base.anchors;

    auto tensors = m.trainable_tensors();
    Rng pick(derive_seed(g.seed, 3));
    std::vector<std::vector<std::size_t>> elements(tensors.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const std::size_t n = tensors[i].numel();
        for (std::size_t j = 0; j < n; ++j)
            if (pick.uniform() < g.fraction) elements[i].push_back(j);
        if (elements[i].empty()) elements[i].push_back(pick.below(n));
    }
    auto loss = [&] { return compute_losses(m, batch, draws, ctx, &frozen).total; };
    return gradcheck_elements(loss, tensors, elements, g.step, g.tol);
}

}  // namespace dualprior
