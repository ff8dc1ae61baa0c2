#include "dualprior/sampler.hpp"

#include <algorithm>
#include <fstream>

#include "dualprior/error.hpp"
#include "dualprior/ops.hpp"
#include "dualprior/rng.hpp"

namespace dualprior {

namespace fs = std::filesystem;
using nlohmann::json;

void SampleConfig::validate(std::size_t T) const {
    if (steps < 1 || steps > T) throw ConfigError("sample steps must be in [1, T=" + std::to_string(T) + "]");
    if (eta != 0.0) throw ConfigError("only eta = 0 is supported");
    if (!(lambda >= 0.0)) throw ConfigError("guidance scale lambda must be >= 0");
    if (batch < 1) throw ConfigError("sample batch must be >= 1");
}

json sample_config_to_json(const SampleConfig& c) {
    return {{"steps", c.steps}, {"eta", c.eta}, {"lambda", c.lambda}, {"seed", c.seed}, {"batch", c.batch}};
}

SampleConfig sample_config_from_json(const json& j) {
    SampleConfig c;
    try {
        c.steps = j.at("steps");
        c.eta = j.at("eta");
        c.lambda = j.at("lambda");
        c.seed = j.at("seed");
        c.batch = j.value("batch", c.batch);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("sample config: ") + e.what());
    }
    return c;
}

Tensor initial_noise(std::span<const std::uint64_t> seeds, const Shape& sample_shape) {
    const std::size_t row = shape_numel(sample_shape);
    std::vector<double> z(seeds.size() * row);
    for (std::size_t n = 0; n < seeds.size(); ++n) {
        Rng rng(seeds[n]);
        rng.fill_normal(std::span<double>(z).subspan(n * row, row));
    }
    Shape shape{seeds.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor::from_data(shape, std::move(z));
}

Tensor ddim_sample(const NoisePredictor& predict, Tensor z, std::size_t steps, const NoiseSchedule& s) {
    NoGradGuard no_grad;
    const auto ladder = ddim_timesteps(s, steps);
    const std::size_t n = z.dim(0);
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        const std::vector<std::size_t> t(n, ladder[i]);
        const std::ptrdiff_t t_prev = i + 1 < ladder.size() ? static_cast<std::ptrdiff_t>(ladder[i + 1]) : kCleanStep;
        z = ddim_step(z, ladder[i], t_prev, predict(z, t), 0.0, s);
    }
    std::vector<double> out(z.data().begin(), z.data().end());
    for (auto& v : out) v = std::clamp(v, -1.0, 1.0);
    return Tensor::from_data(z.shape(), std::move(out));
}

Tensor sample_with_seeds(const SiameseModel& m, const Tensor& masks, std::span<const std::uint64_t> row_seeds,
                         const SampleConfig& cfg, const NoiseSchedule& s) {
    cfg.validate(s.T);
    if (m.config().timesteps != s.T) throw ConfigError("model and schedule disagree on T");
    const auto& d = m.config().denoiser;
    if (masks.rank() != 4 || masks.dim(1) != 1 || masks.dim(2) != d.image_size || masks.dim(3) != d.image_size)
        throw ShapeError("masks must be [N,1," + std::to_string(d.image_size) + "," + std::to_string(d.image_size) +
                         "], got " + shape_str(masks.shape()));
    if (row_seeds.size() != masks.dim(0)) throw ShapeError("one seed per mask row required");
    for (double v : masks.data())
        if (v != 0.0 && v != 1.0) throw DataError("masks must be binary {0, 1}");

    NoGradGuard no_grad;
    const auto c_m = m.extract_control(masks);
    const double lambda = cfg.lambda;
    NoisePredictor predict = [&](const Tensor& z, std::span<const std::size_t> t) {
        return guided_noise(m, z, t, c_m, lambda);
    };
    return ddim_sample(predict, initial_noise(row_seeds, {d.channels, d.image_size, d.image_size}), cfg.steps, s);
}

Tensor sample(const SiameseModel& m, const Tensor& masks, const SampleConfig& cfg, const NoiseSchedule& s) {
    std::vector<std::uint64_t> seeds(masks.rank() ? masks.dim(0) : 0);
    for (std::size_t n = 0; n < seeds.size(); ++n) seeds[n] = derive_seed(cfg.seed, n);
    return sample_with_seeds(m, masks, seeds, cfg, s);
}

std::vector<Image> sample_images(const SiameseModel& m, const std::vector<Image>& masks,
                                 std::span<const std::uint64_t> seeds, const SampleConfig& cfg, const NoiseSchedule& s) {
    struct Job {
        std::size_t mask;
        std::uint64_t stream;
    };
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < masks.size(); ++i)
        for (auto seed : seeds) jobs.push_back({i, derive_seed(seed, i)});
    std::vector<Image> out;
    out.reserve(jobs.size());
    for (std::size_t start = 0; start < jobs.size(); start += cfg.batch) {
        const std::size_t end = std::min(jobs.size(), start + cfg.batch);
        std::vector<const Image*> batch;
        std::vector<std::uint64_t> streams;
        for (std::size_t j = start; j < end; ++j) {
            batch.push_back(&masks[jobs[j].mask]);
            streams.push_back(jobs[j].stream);
        }
        const auto images = sample_with_seeds(m, stack_images(std::span<const Image* const>(batch)), streams, cfg, s);
        for (std::size_t j = 0; j < batch.size(); ++j) out.push_back(tensor_sample(images, j));
    }
    return out;
}

json sample_manifest_to_json(const SampleManifest& m) {
    json entries = json::array();
    for (const auto& e : m.entries)
        entries.push_back({{"mask_index", e.mask_index},
                           {"mask_file", e.mask_file},
                           {"mask_copy", e.mask_copy},
                           {"seed", e.seed},
                           {"stream", e.stream},
                           {"output_file", e.output_file}});
    return {{"config", sample_config_to_json(m.config)}, {"entries", entries}};
}

SampleManifest sample_manifest_from_json(const json& j) {
    SampleManifest m;
    try {
        m.config = sample_config_from_json(j.at("config"));
        for (const auto& e : j.at("entries"))
            m.entries.push_back({e.at("mask_index"), e.at("mask_file"), e.at("mask_copy"), e.at("seed"), e.at("stream"),
                                 e.at("output_file")});
    } catch (const json::exception& e) {
        throw DataError(std::string("sample manifest: ") + e.what());
    }
    return m;
}

SampleManifest sample_grid(const SiameseModel& m, const std::vector<MaskInput>& masks,
                           std::span<const std::uint64_t> seeds, const SampleConfig& cfg, const NoiseSchedule& s,
                           const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (!ec) fs::create_directories(out_dir / "masks", ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    std::vector<Image> plain;
    for (const auto& mi : masks) plain.push_back(mi.mask);
    const auto images = sample_images(m, plain, seeds, cfg, s);

    SampleManifest manifest;
    manifest.config = cfg;
    std::size_t k = 0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const std::string copy = "masks/m" + std::to_string(i) + ".png";
        write_mask_png(out_dir / copy, masks[i].mask);
        for (auto seed : seeds) {
            GridEntry e;
            e.mask_index = i;
            e.mask_file = masks[i].source;
            e.mask_copy = copy;
            e.seed = seed;
            e.stream = derive_seed(seed, i);
            e.output_file = "images/m" + std::to_string(i) + "_s" + std::to_string(seed) + ".png";
            write_png(out_dir / e.output_file, images[k++]);
            manifest.entries.push_back(std::move(e));
        }
    }
    std::ofstream f(out_dir / "manifest.json");
    if (!f) throw IoError("cannot write " + (out_dir / "manifest.json").string());
    f << sample_manifest_to_json(manifest).dump(2) << '\n';
    if (!f) throw IoError("failed writing " + (out_dir / "manifest.json").string());
    return manifest;
}

}  // namespace dualprior
