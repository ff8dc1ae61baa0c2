#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dualprior/checkpoint.hpp"
#include "dualprior/error.hpp"
#include "dualprior/ops.hpp"
#include "dualprior/sampler.hpp"
#include "dualprior/texture.hpp"
#include "fixtures.hpp"

using namespace dualprior;
using namespace fixtures;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("dualprior_sampler_" + name);
    fs::remove_all(p);
    return p;
}

bool same_data(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

// Exact noise predictor for a data distribution concentrated on one image.
NoisePredictor point_mass_oracle(const Tensor& x_star, const NoiseSchedule& s) {
    return [x_star, &s](const Tensor& z, std::span<const std::size_t> t) {
        std::vector<double> out(z.numel());
        const std::size_t row = z.numel() / z.dim(0);
        for (std::size_t n = 0; n < z.dim(0); ++n) {
            const double ab = s.alpha_bar[t[n]];
            for (std::size_t i = 0; i < row; ++i)
                out[n * row + i] = (z.data()[n * row + i] - std::sqrt(ab) * x_star.data()[i]) / std::sqrt(1.0 - ab);
        }
        return Tensor::from_data(z.shape(), std::move(out));
    };
}

double pearson(std::span<const double> a, std::span<const double> b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= a.size();
    mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

Tensor mask_batch(std::size_t n, std::size_t s, Rng& rng) { return random_mask(n, s, rng); }

}  // namespace

TEST_CASE("sampling determinism and seed sensitivity") {
    SiameseModel m(tiny_config(), 1);
    wake_zero_inits(m, 2);
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    Rng rng(3);
    const auto masks = mask_batch(2, 8, rng);
    SampleConfig cfg;
    cfg.steps = 10;
    cfg.seed = 4;
    const auto a = sample(m, masks, cfg, s);
    const auto b = sample(m, masks, cfg, s);
    CHECK(same_data(a, b));
    CHECK(a.shape() == Shape{2, 3, 8, 8});
    for (double v : a.data()) REQUIRE((v >= -1.0 && v <= 1.0));
    cfg.seed = 5;
    CHECK_FALSE(same_data(a, sample(m, masks, cfg, s)));
    CHECK_FALSE(a.requires_grad());
}

TEST_CASE("guidance scale 1 is conditional-only sampling") {
    SiameseModel m(tiny_config(), 6);
    wake_zero_inits(m, 7);
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    Rng rng(8);
    const auto masks = mask_batch(2, 8, rng);
    SampleConfig cfg;
    cfg.steps = 8;
    cfg.lambda = 1.0;
    const auto guided = sample(m, masks, cfg, s);
    const auto c_m = m.extract_control(masks);
    const std::vector<std::uint64_t> seeds{derive_seed(cfg.seed, 0), derive_seed(cfg.seed, 1)};
    NoisePredictor cond = [&](const Tensor& z, std::span<const std::size_t> t) { return m.predict_noise(z, t, &c_m); };
    const auto direct = ddim_sample(cond, initial_noise(seeds, {3, 8, 8}), cfg.steps, s);
    CHECK(same_data(guided, direct));
}

TEST_CASE("sampler input validation") {
    SiameseModel m(tiny_config(), 1);
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    SampleConfig cfg;
    CHECK_THROWS_AS(sample(m, Tensor::zeros({1, 1, 16, 16}), cfg, s), ShapeError);
    CHECK_THROWS_AS(sample(m, Tensor::full({1, 1, 8, 8}, 0.5), cfg, s), DataError);
    cfg.steps = 201;
    CHECK_THROWS_AS(sample(m, Tensor::zeros({1, 1, 8, 8}), cfg, s), ConfigError);
    cfg.steps = 10;
    cfg.eta = 0.5;
    CHECK_THROWS_AS(cfg.validate(200), ConfigError);
}

TEST_CASE("oracle denoiser recovers the training image and its texture") {
    GeneratorConfig g;  // 32x32 default
    const auto sample_pair = generate_sample(g, 11, 0);
    const auto x_star = stack_images(std::span<const Image>(&sample_pair.image, 1));
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    const auto oracle = point_mass_oracle(x_star, s);
    const std::vector<std::uint64_t> seeds{1};
    const auto z_T = initial_noise(seeds, {3, 32, 32});
    const auto x50 = ddim_sample(oracle, z_T, 50, s);
    const auto xfull = ddim_sample(oracle, z_T, 200, s);
    const Image img = tensor_sample(x50, 0);
    double err = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 32 * 32; ++i)
            if (sample_pair.mask.data[i] > 0.5) {
                err += std::abs(img.data[c * 1024 + i] - sample_pair.image.data[c * 1024 + i]);
                ++n;
            }
    CHECK(err / n < 1e-9);
    CHECK(texture_fidelity(img, sample_pair.mask, g).total <= g.texture_noise_floor());
    CHECK(pearson(x50.data(), xfull.data()) > 0.9);
}

TEST_CASE("sample grid writes a manifest that round-trips") {
    SiameseModel m(tiny_config(), 12);
    wake_zero_inits(m, 13);
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    SampleConfig cfg;
    cfg.steps = 4;
    cfg.batch = 3;
    const auto dir = scratch("grid");
    std::vector<MaskInput> masks;
    Rng rng(14);
    for (int i = 0; i < 2; ++i) {
        const auto t = mask_batch(1, 8, rng);
        masks.push_back({"mask" + std::to_string(i), tensor_sample(t, 0)});
    }
    const std::vector<std::uint64_t> seeds{3, 4, 9};
    const auto manifest = sample_grid(m, masks, seeds, cfg, s, dir);
    CHECK(manifest.entries.size() == 6);
    for (const auto& e : manifest.entries) {
        CHECK(fs::exists(dir / e.output_file));
        CHECK(read_mask_png(dir / e.mask_copy) == masks[e.mask_index].mask);
    }
    std::ifstream f(dir / "manifest.json");
    const auto back = sample_manifest_from_json(nlohmann::json::parse(f));
    CHECK(sample_manifest_to_json(back) == sample_manifest_to_json(manifest));

    // the same job sampled alone matches the batched grid output
    const std::vector<std::uint64_t> one{manifest.entries[4].stream};
    const auto mt = stack_images(std::span<const Image>(&masks[1].mask, 1));
    const auto alone = tensor_sample(sample_with_seeds(m, mt, one, cfg, s), 0);
    CHECK(read_png(dir / manifest.entries[4].output_file) == quantize_roundtrip(alone));

    const auto empty = sample_grid(m, {}, seeds, cfg, s, scratch("empty"));
    CHECK(empty.entries.empty());
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip is bit exact") {
    auto mc = tiny_config(2);
    SiameseModel m(mc, 21);
    wake_zero_inits(m, 22);
    const auto s = make_linear_schedule(200, 1e-4, 0.02);
    TrainConfig tc;
    auto opt = make_optimizer(m, tc);
    for (auto& p : m.parameters())
        if (!p.frozen) p.value.mutable_grad()[0] = 0.25;
    adamw_update(opt, m);
    const auto dir = scratch("ckpt");
    save_checkpoint(dir / "model.ckpt", m, s, &opt, {{"k", 7}});
    CHECK_FALSE(fs::exists(dir / "model.ckpt.tmp"));
    const auto ck = load_checkpoint(dir / "model.ckpt");
    CHECK(ck.extra.at("k") == 7);
    CHECK(schedule_to_json(ck.schedule) == schedule_to_json(s));
    REQUIRE(ck.optimizer.has_value());
    CHECK(ck.optimizer->step == 1);
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
        const auto& a = m.parameters()[i];
        const auto& b = ck.model->parameters()[i];
        CHECK(a.name == b.name);
        CHECK(same_data(a.value, b.value));
        CHECK(ck.optimizer->m[i] == opt.m[i]);
        CHECK(ck.optimizer->v[i] == opt.v[i]);
    }
    // re-saving the loaded checkpoint gives identical bytes
    save_checkpoint(dir / "again.ckpt", *ck.model, ck.schedule, &*ck.optimizer, ck.extra);
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    CHECK(slurp(dir / "model.ckpt") == slurp(dir / "again.ckpt"));

    save_checkpoint(dir / "noopt.ckpt", m, s, nullptr);
    CHECK_FALSE(load_checkpoint(dir / "noopt.ckpt").optimizer.has_value());

    std::ofstream(dir / "bad.ckpt") << "garbage!garbage!";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
    auto bytes = slurp(dir / "model.ckpt");
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
    fs::remove_all(dir);
}
