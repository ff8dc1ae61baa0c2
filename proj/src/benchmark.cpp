#include "dualprior/benchmark.hpp"

#include <cstdio>

#include "dualprior/error.hpp"
#include "dualprior/manifest.hpp"
#include "dualprior/rng.hpp"

namespace dualprior {

using nlohmann::json;

void BenchmarkConfig::validate() const {
    model.validate();
    train.validate(model.timesteps);
    sample.validate(model.timesteps);
    if (sample.steps > model.timesteps) throw ConfigError("sample.steps must not exceed model.timesteps");
    if (model.denoiser.image_size != generator.image_size || model.denoiser.channels != generator.channels)
        throw ConfigError("model image size/channels must match the generator");
    if (n_test == 0) throw ConfigError("n_test must be >= 1");
    if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1)) throw ConfigError("need 0 < beta_start < beta_end < 1");
    if (random_masks.magnitude_min > random_masks.magnitude_max) throw ConfigError("random_masks magnitude range is empty");
}

json benchmark_config_to_json(const BenchmarkConfig& c) {
    return {{"generator", generator_config_to_json(c.generator)},
            {"n_test", c.n_test},
            {"test_seed", c.test_seed},
            {"model", model_config_to_json(c.model)},
            {"train", train_config_to_json(c.train)},
            {"sample", sample_config_to_json(c.sample)},
            {"segmenter", segmenter_config_to_json(c.segmenter)},
            {"random_masks",
             {{"kind", mask_transform_kind_name(c.random_masks.kind)},
              {"magnitude_min", c.random_masks.magnitude_min},
              {"magnitude_max", c.random_masks.magnitude_max},
              {"seed", c.random_masks.seed}}},
            {"n_synth", c.n_synth},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end}};
}

BenchmarkConfig benchmark_config_from_json(const json& j) {
    BenchmarkConfig c;
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "generator") c.generator = generator_config_from_json(v);
            else if (k == "n_test") c.n_test = v.get<std::size_t>();
            else if (k == "test_seed") c.test_seed = v.get<std::uint64_t>();
            else if (k == "model") c.model = model_config_from_json(v);
            else if (k == "train") c.train = train_config_from_json(v);
            else if (k == "sample") c.sample = sample_config_from_json(v);
            else if (k == "segmenter") c.segmenter = segmenter_config_from_json(v);
            else if (k == "random_masks") {
                c.random_masks.kind = parse_mask_transform_kind(v.at("kind").get<std::string>());
                c.random_masks.magnitude_min = v.at("magnitude_min");
                c.random_masks.magnitude_max = v.at("magnitude_max");
                c.random_masks.seed = v.at("seed");
            } else if (k == "n_synth") c.n_synth = v.get<std::size_t>();
            else if (k == "beta_start") c.beta_start = v.get<double>();
            else if (k == "beta_end") c.beta_end = v.get<double>();
            else throw ConfigError("unknown benchmark key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("benchmark config: ") + e.what());
    }
    return c;
}

NoiseSchedule benchmark_schedule(const BenchmarkConfig& c) {
    return make_linear_schedule(c.model.timesteps, c.beta_start, c.beta_end);
}

std::vector<Image> random_masks(const std::vector<PairedSample>& source, std::size_t count, const MaskTransform& t) {
    if (source.empty() && count > 0) throw DataError("no source masks to transform");
    std::vector<Image> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        MaskTransform ti = t;
        ti.seed = derive_seed(t.seed, i);
        out.push_back(transform_mask(source[i % source.size()].mask, ti));
    }
    return out;
}

std::vector<PairedSample> synthesize(const SiameseModel& m, const std::vector<Image>& masks, const SampleConfig& cfg,
                                     const NoiseSchedule& s) {
    const std::uint64_t seeds[] = {cfg.seed};
    const auto images = sample_images(m, masks, seeds, cfg, s);
    std::vector<PairedSample> out(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        out[i].id = "synth" + sample_file_stem(i);
        out[i].image = quantize_roundtrip(images[i]);
        out[i].mask = masks[i];
    }
    return out;
}

std::vector<AblationSetting> ablation_settings(const std::string& grid) {
    std::vector<AblationSetting> out;
    if (grid == "component" || grid == "all") {
        // Lattice order: none, DHI, Aug, Lc, Aug+Lc, DHI+Aug, DHI+Lc, all.
        const bool lattice[8][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                                    {0, 1, 1}, {1, 1, 0}, {1, 0, 1}, {1, 1, 1}};
        for (int i = 0; i < 8; ++i) {
            const auto [dhi, aug, lc] = lattice[i];
            out.push_back({"s" + std::to_string(i + 1), "component", dhi, aug, lc, lc ? 1.0 : 0.0});
        }
    }
    if (grid == "wc" || grid == "all") {
        for (double w : {0.0, 0.5, 1.0, 1.5, 2.0}) {
            char name[16];
            std::snprintf(name, sizeof name, "wc%.1f", w);
            out.push_back({name, "wc", true, true, w > 0, w});
        }
    }
    if (out.empty()) throw ConfigError("unknown ablation grid '" + grid + "' (component, wc, all)");
    return out;
}

const AblationSetting& find_setting(const std::vector<AblationSetting>& settings, const std::string& name) {
    for (const auto& s : settings)
        if (s.name == name) return s;
    throw ConfigError("no ablation row named '" + name + "'");
}

BenchmarkConfig apply_setting(const BenchmarkConfig& base, const AblationSetting& s, std::uint64_t seed) {
    BenchmarkConfig c = base;
    if (!s.dhi) c.model.control.blocks_per_stage = 0;
    else if (c.model.control.blocks_per_stage == 0) c.model.control.blocks_per_stage = 2;
    c.train.online_augment = s.aug;
    c.train.w_c = s.w_c;
    const bool baseline = s.group == "component" && !s.dhi && !s.aug && !s.lc;
    c.train.mode = baseline ? BranchMode::kControlNet : BranchMode::kShared;
    c.train.seed = seed;
    c.sample.seed = derive_seed(seed, 3);
    c.segmenter.seed = derive_seed(seed, 4);
    return c;
}

AblationRow run_ablation_row(const BenchmarkConfig& base, const AblationSetting& s, std::uint64_t seed,
                             const std::vector<PairedSample>& train_data) {
    const BenchmarkConfig c = apply_setting(base, s, seed);
    c.validate();
    if (train_data.empty()) throw DataError("ablation needs training data");

    AblationRow row;
    row.setting = s;
    row.seed = seed;
    row.config_hash = config_hash(benchmark_config_to_json(c));

    const NoiseSchedule sched = benchmark_schedule(c);
    SiameseModel m(c.model, derive_seed(seed, 7));
    auto opt = make_optimizer(m, c.train);
    train(m, train_data, c.train, sched, opt, {}, 0);

    const auto masks = random_masks(train_data, c.n_synth, c.random_masks);
    const auto synth = synthesize(m, masks, c.sample, sched);
    const auto fa = image_features(synth, c.generator);
    const auto fb = image_features(train_data, c.generator);
    row.frechet = frechet_distance(fa, fb);
    row.kid = kid(fa, fb);
    row.texture_fidelity = mean_texture_fidelity(synth, c.generator);

    const auto test = generate_dataset(c.n_test, c.generator, c.test_seed);
    const auto arms = downstream_experiment(train_data, synth, c.segmenter, test);
    for (const auto& a : arms)
        if (a.arm == "real+synth") {
            row.dice = a.dice;
            row.iou = a.iou;
        }
    return row;
}

std::string ablation_csv_header() {
    return "setting,group,dhi,aug,lc,w_c,mode,seed,config_hash,frechet,kid,texture_fidelity,dice,iou";
}

std::string ablation_csv_row(const AblationRow& r) {
    const auto& s = r.setting;
    const bool baseline = s.group == "component" && !s.dhi && !s.aug && !s.lc;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%d,%.17g,%s,%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g", s.name.c_str(),
                  s.group.c_str(), int(s.dhi), int(s.aug), int(s.lc), s.w_c, baseline ? "controlnet" : "siamese",
                  static_cast<unsigned long long>(r.seed), r.config_hash.c_str(), r.frechet, r.kid, r.texture_fidelity,
                  r.dice, r.iou);
    return buf;
}

}  // namespace dualprior
