#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>

#include <Eigen/Core>

#include "dualprior/benchmark.hpp"
#include "dualprior/checkpoint.hpp"
#include "dualprior/dataset.hpp"
#include "dualprior/error.hpp"
#include "dualprior/eval.hpp"
#include "dualprior/image.hpp"
#include "dualprior/model.hpp"
#include "dualprior/rng.hpp"
#include "dualprior/sampler.hpp"
#include "dualprior/trainer.hpp"

namespace dualprior::cli {

using nlohmann::json;

// ---------------------------------------------------------------- plumbing

int threads_from_env() {
    const char* v = std::getenv("SDK_NUM_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1 || n > 1024) throw ConfigError(std::string("SDK_NUM_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<int>(n);
}

void prepare_output(const fs::path& out, bool force) {
    std::error_code ec;
    if (fs::exists(out, ec)) {
        if (!fs::is_directory(out)) throw IoError("output path exists and is not a directory: " + out.string());
        if (!fs::is_empty(out)) {
            if (!force) throw IoError("output directory " + out.string() + " is not empty (pass --force to replace it)");
            fs::remove_all(out, ec);
            if (ec) throw IoError("cannot clear " + out.string() + ": " + ec.message());
        }
    }
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

std::string content_hash(const fs::path& path) {
    if (fs::is_directory(path)) return config_hash(json(hash_tree(path, {})));
    return hash_file(path);
}

void finish_run(const Run& run, const json& config, std::uint64_t seed, const std::vector<std::string>& inputs) {
    RunManifest m;
    m.command = run.command;
    m.args = run.args;
    if (!run.config_file.empty()) {
        std::ifstream f(run.config_file, std::ios::binary);
        m.config_text.assign(std::istreambuf_iterator<char>(f), {});
    }
    m.config = config;
    m.config_hash = config_hash(config);
    m.seed = seed;
    m.inputs = inputs;
    for (const auto& in : inputs) m.input_hashes[in] = content_hash(in);
    m.output = run.out.string();
    m.output_hashes = hash_tree(run.out);
    m.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - run.started).count();
    write_manifest(run.out / "run.json", m);
}

void add_common(CLI::App* sub, Run& run, bool out_required) {
    sub->add_option("--config", run.config_file, "Plain-text config file (key = value); flags override it");
    auto* out = sub->add_option("--out", run.out, "Output directory");
    if (out_required) out->required();
    sub->add_flag("--force", run.force, "Replace a non-empty output directory");
}

namespace {

json read_json_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot open " + p.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw DataError("corrupt JSON " + p.string() + ": " + e.what());
    }
}

void require_dir(const std::string& p, const char* what) {
    if (!fs::is_directory(p)) throw IoError(std::string(what) + " directory not found: " + p);
}

/// Generator settings recorded next to a dataset, or defaults sized to it.
GeneratorConfig generator_for(const fs::path& dir, const std::vector<PairedSample>& data) {
    if (fs::exists(dir / "generator.json")) return generator_config_from_json(read_json_file(dir / "generator.json"));
    GeneratorConfig g;
    if (!data.empty()) {
        g.image_size = data.front().image.height;
        g.channels = data.front().image.channels;
    }
    return g;
}

std::vector<PairedSample> load_nonempty(const std::string& dir, const char* what) {
    require_dir(dir, what);
    auto d = load_dataset(dir);
    if (d.empty()) throw DataError(std::string(what) + " directory holds no samples: " + dir);
    return d;
}

/// Synthetic sets come either as a sample grid (manifest.json) or a dataset
/// directory. `groups[i]` is the mask index of sample i.
std::vector<PairedSample> load_synthetic(const fs::path& dir, std::vector<std::size_t>* groups) {
    require_dir(dir.string(), "synthetic");
    std::vector<PairedSample> out;
    if (fs::exists(dir / "manifest.json")) {
        const auto man = sample_manifest_from_json(read_json_file(dir / "manifest.json"));
        for (const auto& e : man.entries) {
            PairedSample s;
            s.id = e.output_file;
            s.image = read_png(dir / e.output_file);
            s.mask = read_mask_png(dir / e.mask_copy);
            out.push_back(std::move(s));
            if (groups) groups->push_back(e.mask_index);
        }
    } else {
        out = load_dataset(dir);
        if (groups) groups->assign(out.size(), 0);
    }
    return out;
}

void add_generator_options(CLI::App* sub, GeneratorConfig& g, std::vector<double>& bg, std::vector<double>& tint) {
    sub->add_option("--size", g.image_size, "Image side length in pixels")->capture_default_str();
    sub->add_option("--channels", g.channels)->capture_default_str();
    sub->add_option("--min-axis", g.min_axis, "Lesion semi-axis range, pixels")->capture_default_str();
    sub->add_option("--max-axis", g.max_axis)->capture_default_str();
    sub->add_option("--center-margin", g.center_margin)->capture_default_str();
    sub->add_option("--blob-fraction", g.blob_fraction, "Share of lobed (non-ellipse) lesions")->capture_default_str();
    sub->add_option("--blob-amp-min", g.blob_amp_min)->capture_default_str();
    sub->add_option("--blob-amp-max", g.blob_amp_max)->capture_default_str();
    sub->add_option("--texture-freq-min", g.texture_freq_min, "Lesion texture cycles per image")->capture_default_str();
    sub->add_option("--texture-freq-max", g.texture_freq_max)->capture_default_str();
    sub->add_option("--texture-contrast-min", g.texture_contrast_min)->capture_default_str();
    sub->add_option("--texture-contrast-max", g.texture_contrast_max)->capture_default_str();
    sub->add_option("--lesion-offset-min", g.lesion_offset_min)->capture_default_str();
    sub->add_option("--lesion-offset-max", g.lesion_offset_max)->capture_default_str();
    sub->add_option("--mean-contrast", g.mean_contrast)->capture_default_str();
    sub->add_option("--bg-gradient-amplitude", g.bg_gradient_amplitude)->capture_default_str();
    sub->add_option("--noise-sigma", g.noise_sigma)->capture_default_str();
    sub->add_option("--bg-color", bg, "Background RGB in [-1, 1]")->expected(3);
    sub->add_option("--lesion-tint", tint, "Per-channel lesion tint")->expected(3);
    sub->add_option("--dominance-threshold", g.dominance_threshold)->capture_default_str();
}

void apply_vectors(GeneratorConfig& g, const std::vector<double>& bg, const std::vector<double>& tint) {
    if (!bg.empty()) std::copy_n(bg.begin(), 3, g.bg_color.begin());
    if (!tint.empty()) std::copy_n(tint.begin(), 3, g.lesion_tint.begin());
}

void add_model_options(CLI::App* sub, ModelConfig& mc, bool with_size) {
    if (with_size) {
        sub->add_option("--image-size", mc.denoiser.image_size)->capture_default_str();
        sub->add_option("--channels", mc.denoiser.channels)->capture_default_str();
    }
    sub->add_option("--timesteps", mc.timesteps, "Diffusion steps T")->capture_default_str();
    sub->add_option("--base-width", mc.denoiser.base_width)->capture_default_str();
    sub->add_option("--depth", mc.denoiser.depth)->capture_default_str();
    sub->add_option("--time-embed-dim", mc.denoiser.time_embed_dim)->capture_default_str();
    sub->add_option("--stage-channels", mc.control.stage_channels, "Control encoder channels per stage");
    sub->add_option("--dhi-blocks", mc.control.blocks_per_stage, "Residual blocks per control stage; 0 = plain hint encoder")
        ->capture_default_str();
    sub->add_option("--merge", mc.control.merge, "Control downsampling: space_to_depth or avg_pool")->capture_default_str();
    sub->add_flag("--freeze-encoder,!--no-freeze-encoder", mc.freeze_encoder, "Keep the control stem frozen");
}

void add_train_options(CLI::App* sub, TrainConfig& tc) {
    sub->add_option("--iters", tc.n_iter, "Training iterations")->capture_default_str();
    sub->add_option("--batch", tc.batch_size)->capture_default_str();
    sub->add_option("--wm", tc.w_m, "Weight of the mask-branch denoising term")->capture_default_str();
    sub->add_option("--wc", tc.w_c, "Noise consistency weight")->capture_default_str();
    sub->add_option("--k-tau", tc.k_tau, "Augmentation start iteration; 0 = iters/3")->capture_default_str();
    sub->add_option("--t-tau", tc.t_tau, "Augmentation timestep cap; 0 = T/5")->capture_default_str();
    sub->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
    sub->add_option("--beta1", tc.beta1)->capture_default_str();
    sub->add_option("--beta2", tc.beta2)->capture_default_str();
    sub->add_option("--adam-eps", tc.adam_eps)->capture_default_str();
    sub->add_option("--p-drop", tc.p_drop, "Control dropout probability")->capture_default_str();
    sub->add_flag("--online-augment,!--no-online-augment", tc.online_augment);
    sub->add_flag("--reuse-eps,!--fresh-eps", tc.reuse_eps_in_aug, "Re-noise augmented samples with the step's noise");
    sub->add_option("--checkpoint-every", tc.checkpoint_every, "0 = iters/10")->capture_default_str();
}

// ---------------------------------------------------------------- commands

struct GenData {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    GeneratorConfig g;
    std::vector<double> bg, tint;

    void add(CLI::App* sub) {
        sub->add_option("--n", n, "Number of pairs")->required()->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed)->capture_default_str();
        add_generator_options(sub, g, bg, tint);
    }

    void exec(Run& run) {
        apply_vectors(g, bg, tint);
        g.validate();
        prepare_output(run.out, run.force);
        save_dataset(run.out, generate_dataset(n, g, seed));
        write_text_atomic(run.out / "generator.json", generator_config_to_json(g).dump(2) + "\n");
        std::fprintf(stderr, "wrote %zu pairs to %s\n", n, run.out.string().c_str());
        finish_run(run, {{"n", n}, {"seed", seed}, {"generator", generator_config_to_json(g)}}, seed, {});
    }
};

struct Train {
    std::string data;
    std::string profile = "desk";
    std::string mode = "siamese";
    double lr = 1e-3;
    CLI::Option* lr_opt = nullptr;
    double beta_start = 1e-4, beta_end = 0.02;
    TrainConfig tc;
    ModelConfig mc;

    void add(CLI::App* sub) {
        sub->add_option("--data", data, "Dataset directory")->required();
        sub->add_option("--profile", profile, "desk or paper-faithful (lr 1e-5)")
            ->check(CLI::IsMember({"desk", "paper-faithful"}))
            ->capture_default_str();
        sub->add_option("--mode", mode, "siamese, controlnet or detached")
            ->check(CLI::IsMember({"siamese", "controlnet", "detached"}))
            ->capture_default_str();
        sub->add_option("--seed", tc.seed)->capture_default_str();
        lr_opt = sub->add_option("--lr", lr, "Learning rate (profile default when unset)");
        add_train_options(sub, tc);
        add_model_options(sub, mc, false);
        sub->add_option("--beta-start", beta_start)->capture_default_str();
        sub->add_option("--beta-end", beta_end)->capture_default_str();
    }

    void exec(Run& run) {
        tc.lr = lr_opt->count() ? lr : (profile == "paper-faithful" ? 1e-5 : 1e-3);
        tc.mode = parse_branch_mode(mode);
        const auto ds = load_nonempty(data, "data");
        mc.denoiser.image_size = ds.front().image.height;
        mc.denoiser.channels = ds.front().image.channels;
        mc.validate();
        tc.validate(mc.timesteps);
        const NoiseSchedule s = make_linear_schedule(mc.timesteps, beta_start, beta_end);
        prepare_output(run.out, run.force);
        fs::create_directories(run.out / "checkpoints");

        SiameseModel m(mc, derive_seed(tc.seed, 7));
        auto opt = make_optimizer(m, tc);
        std::ofstream csv(run.out / "loss.csv");
        if (!csv) throw IoError("cannot write " + (run.out / "loss.csv").string());
        csv << loss_csv_header() << "\n";
        const std::size_t every = std::max<std::size_t>(1, tc.n_iter / 20);
        TrainHooks hooks;
        hooks.on_report = [&](const LossReport& r) {
            csv << loss_csv_row(r) << "\n";
            if (r.k % every == 0) std::fprintf(stderr, "k=%zu total=%.5f L_m=%.5f\n", r.k, r.total, r.loss_m);
        };
        hooks.on_checkpoint = [&](std::size_t done) {
            const json extra{{"train", train_config_to_json(tc)}, {"completed", done}};
            if (done == tc.n_iter) {
                save_checkpoint(run.out / "model.ckpt", m, s, &opt, extra);
            } else {
                char name[32];
                std::snprintf(name, sizeof name, "ckpt_%06zu.bin", done);
                save_checkpoint(run.out / "checkpoints" / name, m, s, &opt, extra);
            }
        };
        train(m, ds, tc, s, opt, hooks);
        csv.close();
        if (!csv) throw IoError("failed writing loss.csv");
        json cfg{{"data", data},
                 {"profile", profile},
                 {"train", train_config_to_json(tc)},
                 {"model", model_config_to_json(mc)},
                 {"schedule", schedule_to_json(s)}};
        finish_run(run, cfg, tc.seed, {data});
    }
};

struct Sample {
    std::string ckpt, masks;
    SampleConfig sc;
    std::vector<std::uint64_t> seeds{0};
    std::string transform = "none";
    double tmin = 1.0, tmax = 1.0;
    std::uint64_t tseed = 0;
    std::size_t limit = 0;

    void add(CLI::App* sub) {
        sub->add_option("--ckpt", ckpt, "Checkpoint file")->required();
        sub->add_option("--masks", masks, "Mask PNG, directory of PNGs, or dataset directory")->required();
        sub->add_option("--steps", sc.steps, "DDIM steps")->capture_default_str();
        sub->add_option("--lambda", sc.lambda, "Guidance scale")->capture_default_str();
        sub->add_option("--seeds", seeds, "One image per mask per seed");
        sub->add_option("--batch", sc.batch, "Rows per forward pass")->capture_default_str();
        sub->add_option("--transform", transform, "none, scale, translate, rotate or elastic")
            ->check(CLI::IsMember({"none", "scale", "translate", "rotate", "elastic"}))
            ->capture_default_str();
        sub->add_option("--transform-min", tmin)->capture_default_str();
        sub->add_option("--transform-max", tmax)->capture_default_str();
        sub->add_option("--transform-seed", tseed)->capture_default_str();
        sub->add_option("--limit", limit, "Use the first N masks; 0 = all")->capture_default_str();
    }

    std::vector<MaskInput> collect() const {
        std::vector<fs::path> files;
        if (fs::is_regular_file(masks)) {
            files.push_back(masks);
        } else if (fs::is_directory(masks)) {
            const fs::path dir = fs::is_directory(fs::path(masks) / "masks") ? fs::path(masks) / "masks" : fs::path(masks);
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
            std::sort(files.begin(), files.end());
        } else {
            throw IoError("masks not found: " + masks);
        }
        if (limit > 0 && files.size() > limit) files.resize(limit);
        std::vector<MaskInput> out;
        for (std::size_t i = 0; i < files.size(); ++i) {
            Image mk = read_mask_png(files[i]);
            if (transform != "none") {
                MaskTransform t{parse_mask_transform_kind(transform), tmin, tmax, derive_seed(tseed, i)};
                mk = transform_mask(mk, t);
            }
            out.push_back({files[i].generic_string(), std::move(mk)});
        }
        return out;
    }

    void exec(Run& run) {
        if (seeds.empty()) throw ConfigError("--seeds needs at least one value");
        auto ck = load_checkpoint(ckpt);
        sc.validate(ck.schedule.T);
        const auto inputs = collect();
        prepare_output(run.out, run.force);
        const auto man = sample_grid(*ck.model, inputs, seeds, sc, ck.schedule, run.out);
        std::fprintf(stderr, "wrote %zu images to %s\n", man.entries.size(), run.out.string().c_str());
        json cfg{{"ckpt", ckpt},
                 {"masks", masks},
                 {"sample", sample_config_to_json(sc)},
                 {"seeds", seeds},
                 {"transform", {{"kind", transform}, {"min", tmin}, {"max", tmax}, {"seed", tseed}}},
                 {"limit", limit}};
        finish_run(run, cfg, seeds.front(), {ckpt, masks});
    }
};

struct Eval {
    std::string real, synth;
    std::vector<std::string> metrics{"fid", "kid", "texture", "diversity"};

    void add(CLI::App* sub) {
        sub->add_option("--real", real, "Real dataset directory")->required();
        sub->add_option("--synth", synth, "Sample grid or dataset directory")->required();
        sub->add_option("--metrics", metrics, "Any of fid, kid, texture, diversity")
            ->check(CLI::IsMember({"fid", "kid", "texture", "diversity"}));
    }

    void exec(Run& run) {
        const auto r = load_nonempty(real, "real");
        std::vector<std::size_t> groups;
        const auto s = load_synthetic(synth, &groups);
        if (s.empty()) throw DataError("synthetic set is empty: " + synth);
        const auto g = generator_for(real, r);
        prepare_output(run.out, run.force);

        json result = json::object();
        std::vector<FeatureVector> fr, fs_;
        auto features = [&] {
            if (fr.empty()) {
                fr = image_features(r, g);
                fs_ = image_features(s, g);
            }
        };
        for (const auto& name : metrics) {
            if (name == "fid") {
                features();
                result["frechet"] = frechet_distance(fs_, fr);
            } else if (name == "kid") {
                features();
                if (fr.size() < 2 || fs_.size() < 2) throw DataError("kid needs at least two samples per set");
                result["kid"] = kid(fs_, fr);
            } else if (name == "texture") {
                result["texture_fidelity_synth"] = mean_texture_fidelity(s, g);
                result["texture_fidelity_real"] = mean_texture_fidelity(r, g);
                result["texture_noise_floor"] = g.texture_noise_floor();
            } else if (name == "diversity") {
                features();
                std::map<std::size_t, std::vector<FeatureVector>> by_mask;
                for (std::size_t i = 0; i < s.size(); ++i) by_mask[groups[i]].push_back(fs_[i]);
                double sum = 0;
                std::size_t n = 0;
                for (const auto& [_, fv] : by_mask)
                    if (fv.size() >= 2) {
                        sum += diversity(fv);
                        ++n;
                    }
                result["diversity"] = n ? sum / static_cast<double>(n) : 0.0;
            }
        }
        std::ostringstream csv;
        csv << "metric,value\n";
        char buf[64];
        for (const auto& [k, v] : result.items()) {
            std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
            csv << k << "," << buf << "\n";
        }
        write_text_atomic(run.out / "metrics.csv", csv.str());
        write_text_atomic(run.out / "metrics.json", result.dump(2) + "\n");
        std::cout << result.dump(2) << "\n";
        finish_run(run, {{"real", real}, {"synth", synth}, {"metrics", metrics}, {"generator", generator_config_to_json(g)}},
                   0, {real, synth});
    }
};

struct SegBench {
    std::string real, synth, test;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    SegmenterConfig seg;

    void add(CLI::App* sub) {
        sub->add_option("--real", real, "Real training dataset")->required();
        sub->add_option("--synth", synth, "Synthetic pairs (sample grid or dataset)")->required();
        sub->add_option("--test", test, "Held-out test dataset")->required();
        sub->add_option("--seeds", seeds, "Segmenter seeds");
        sub->add_option("--width", seg.width)->capture_default_str();
        sub->add_option("--lr", seg.lr)->capture_default_str();
        sub->add_option("--iterations", seg.iterations)->capture_default_str();
        sub->add_option("--batch", seg.batch)->capture_default_str();
    }

    void exec(Run& run) {
        if (seeds.empty()) throw ConfigError("--seeds needs at least one value");
        const auto r = load_nonempty(real, "real");
        const auto t = load_nonempty(test, "test");
        const auto s = load_synthetic(synth, nullptr);
        prepare_output(run.out, run.force);
        std::ostringstream csv;
        csv << "seed,arm,dice,iou,train_size\n";
        std::map<std::string, std::pair<double, double>> mean;
        std::vector<std::string> order;
        char buf[256];
        for (auto seed : seeds) {
            SegmenterConfig c = seg;
            c.seed = seed;
            for (const auto& a : downstream_experiment(r, s, c, t)) {
                std::snprintf(buf, sizeof buf, "%llu,%s,%.17g,%.17g,%zu\n", static_cast<unsigned long long>(seed),
                              a.arm.c_str(), a.dice, a.iou, a.train_size);
                csv << buf;
                if (!mean.count(a.arm)) order.push_back(a.arm);
                mean[a.arm].first += a.dice / static_cast<double>(seeds.size());
                mean[a.arm].second += a.iou / static_cast<double>(seeds.size());
            }
        }
        json summary = json::object();
        for (const auto& arm : order) {
            std::snprintf(buf, sizeof buf, "mean,%s,%.17g,%.17g,\n", arm.c_str(), mean[arm].first, mean[arm].second);
            csv << buf;
            summary[arm] = {{"dice", mean[arm].first}, {"iou", mean[arm].second}};
        }
        write_text_atomic(run.out / "seg_bench.csv", csv.str());
        write_text_atomic(run.out / "summary.json", summary.dump(2) + "\n");
        std::cout << summary.dump(2) << "\n";
        json cfg{{"real", real}, {"synth", synth}, {"test", test}, {"seeds", seeds}, {"segmenter", segmenter_config_to_json(seg)}};
        finish_run(run, cfg, seeds.front(), {real, synth, test});
    }
};

struct Ablate {
    std::string data, grid = "all", row;
    std::uint64_t seed = 0;
    BenchmarkConfig bc;
    std::string transform = "scale";

    void add(CLI::App* sub) {
        sub->add_option("--data", data, "Training dataset directory")->required();
        sub->add_option("--grid", grid, "component, wc or all")
            ->check(CLI::IsMember({"component", "wc", "all"}))
            ->capture_default_str();
        sub->add_option("--row", row, "Run a single named row (s1..s8, wc0.0..wc2.0)");
        sub->add_option("--seed", seed, "Seed shared by every row")->capture_default_str();
        sub->add_option("--iters", bc.train.n_iter)->capture_default_str();
        sub->add_option("--batch", bc.train.batch_size)->capture_default_str();
        sub->add_option("--lr", bc.train.lr)->capture_default_str();
        sub->add_option("--p-drop", bc.train.p_drop)->capture_default_str();
        sub->add_option("--timesteps", bc.model.timesteps)->capture_default_str();
        sub->add_option("--base-width", bc.model.denoiser.base_width)->capture_default_str();
        sub->add_option("--dhi-blocks", bc.model.control.blocks_per_stage, "Residual blocks per stage when DHI is on")
            ->capture_default_str();
        sub->add_option("--steps", bc.sample.steps)->capture_default_str();
        sub->add_option("--lambda", bc.sample.lambda)->capture_default_str();
        sub->add_option("--n-synth", bc.n_synth, "Synthetic pairs per row")->capture_default_str();
        sub->add_option("--n-test", bc.n_test)->capture_default_str();
        sub->add_option("--test-seed", bc.test_seed)->capture_default_str();
        sub->add_option("--seg-iterations", bc.segmenter.iterations)->capture_default_str();
        sub->add_option("--seg-width", bc.segmenter.width)->capture_default_str();
        sub->add_option("--transform", transform, "Random-mask transform")
            ->check(CLI::IsMember({"scale", "translate", "rotate", "elastic"}))
            ->capture_default_str();
        sub->add_option("--transform-min", bc.random_masks.magnitude_min)->capture_default_str();
        sub->add_option("--transform-max", bc.random_masks.magnitude_max)->capture_default_str();
    }

    void exec(Run& run) {
        const auto ds = load_nonempty(data, "data");
        bc.generator = generator_for(data, ds);
        bc.model.denoiser.image_size = bc.generator.image_size;
        bc.model.denoiser.channels = bc.generator.channels;
        bc.random_masks.kind = parse_mask_transform_kind(transform);
        if (bc.model.control.blocks_per_stage == 0) throw ConfigError("--dhi-blocks must be >= 1 (DHI-off rows use 0)");
        auto settings = ablation_settings(grid);
        if (!row.empty()) settings = {find_setting(settings, row)};
        bc.validate();
        prepare_output(run.out, run.force);

        std::ostringstream csv;
        csv << ablation_csv_header() << "\n";
        json rows = json::array();
        for (const auto& st : settings) {
            std::fprintf(stderr, "ablation row %s\n", st.name.c_str());
            const auto r = run_ablation_row(bc, st, seed, ds);
            csv << ablation_csv_row(r) << "\n";
            rows.push_back({{"setting", st.name},
                            {"seed", r.seed},
                            {"config_hash", r.config_hash},
                            {"config", benchmark_config_to_json(apply_setting(bc, st, seed))},
                            {"replay", {"ablate", "--data", data, "--grid", grid, "--row", st.name, "--seed",
                                        std::to_string(seed)}}});
        }
        write_text_atomic(run.out / "ablation.csv", csv.str());
        write_text_atomic(run.out / "ablation.json", json{{"rows", rows}}.dump(2) + "\n");
        std::cout << csv.str();
        json cfg{{"data", data}, {"grid", grid}, {"row", row}, {"seed", seed}, {"benchmark", benchmark_config_to_json(bc)}};
        finish_run(run, cfg, seed, {data});
    }
};

struct Gradcheck {
    ModelConfig mc;
    LossGradcheckConfig g;

    void add(CLI::App* sub) {
        sub->add_option("--tol", g.tol, "Largest accepted relative error")->capture_default_str();
        sub->add_option("--fraction", g.fraction, "Share of trainable elements probed")->capture_default_str();
        sub->add_option("--step", g.step, "Finite-difference step")->capture_default_str();
        sub->add_option("--batch", g.batch)->capture_default_str();
        sub->add_option("--seed", g.seed)->capture_default_str();
        add_model_options(sub, mc, true);
    }

    void exec(Run& run) {
        if (!run.out.empty()) prepare_output(run.out, run.force);
        const auto r = check_training_gradients(mc, g);
        std::printf("gradcheck: max relative error %.3e over %zu probes (tol %.1e): %s\n", r.max_rel_error,
                    r.entries.size(), g.tol, r.passed ? "PASS" : "FAIL");
        if (!run.out.empty()) {
            json rep{{"max_rel_error", r.max_rel_error}, {"probes", r.entries.size()}, {"tol", g.tol}, {"passed", r.passed}};
            write_text_atomic(run.out / "gradcheck.json", rep.dump(2) + "\n");
            json cfg{{"model", model_config_to_json(mc)},
                     {"fraction", g.fraction},
                     {"step", g.step},
                     {"tol", g.tol},
                     {"batch", g.batch},
                     {"seed", g.seed}};
            finish_run(run, cfg, g.seed, {});
        }
        if (!r.passed) throw NumericError("gradient check failed");
    }
};

struct Replay {
    std::string manifest;

    void add(CLI::App* sub) { sub->add_option("--manifest", manifest, "run.json of the original run")->required(); }

    int exec(Run& run) {
        const auto m = read_manifest(manifest);
        if (m.command == "replay") throw ConfigError("cannot replay a replay");
        std::vector<std::string> args = m.args;
        fs::path config_copy;
        bool has_out = false;
        for (std::size_t i = 0; i < args.size(); ++i) {
            auto value_of = [&](const std::string& flag, const std::string& v) {
                if (args[i] == flag && i + 1 < args.size()) {
                    args[++i] = v;
                    return true;
                }
                if (args[i].rfind(flag + "=", 0) == 0) {
                    args[i] = flag + "=" + v;
                    return true;
                }
                return false;
            };
            if (value_of("--out", run.out.string())) {
                has_out = true;
                continue;
            }
            if (!m.config_text.empty()) {
                if (config_copy.empty()) config_copy = fs::temp_directory_path() / ("dualprior-replay-" + m.config_hash + ".cfg");
                if (value_of("--config", config_copy.string())) write_text_atomic(config_copy, m.config_text);
            }
        }
        if (!has_out) throw ConfigError("manifest has no --out to redirect");
        if (run.force) args.push_back("--force");
        std::fprintf(stderr, "replaying %s into %s\n", m.command.c_str(), run.out.string().c_str());
        const int code = run_cli(args);
        if (code != 0) return code;
        const auto now = hash_tree(run.out);
        std::size_t diff = 0;
        for (const auto& [file, h] : m.output_hashes) {
            auto it = now.find(file);
            if (it == now.end()) {
                std::fprintf(stderr, "missing: %s\n", file.c_str());
                ++diff;
            } else if (it->second != h) {
                std::fprintf(stderr, "differs: %s\n", file.c_str());
                ++diff;
            }
        }
        for (const auto& [file, _] : now)
            if (!m.output_hashes.count(file)) {
                std::fprintf(stderr, "extra: %s\n", file.c_str());
                ++diff;
            }
        if (diff) throw DataError("replay diverged in " + std::to_string(diff) + " file(s)");
        std::printf("replay identical: %zu files\n", now.size());
        return 0;
    }
};

/// Applies `key = value` lines from the config file to options the command
/// line left unset, then enforces required options.
void merge_config(CLI::App* sub, const std::string& path, const std::vector<CLI::Option*>& required) {
    if (!path.empty()) {
        if (!fs::is_regular_file(path)) throw IoError("config file not found: " + path);
        std::vector<CLI::ConfigItem> items;
        try {
            items = CLI::ConfigTOML().from_file(path);
        } catch (const CLI::ParseError& e) {
            throw ConfigError("config file " + path + ": " + e.what());
        }
        for (const auto& item : items) {
            if (item.name == "++" || item.name == "--") continue;  // section markers
            if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub->get_name()))
                throw ConfigError("config file " + path + ": unexpected section for '" + item.fullname() + "'");
            std::string key = item.name;
            std::replace(key.begin(), key.end(), '_', '-');
            CLI::Option* opt = sub->get_option_no_throw("--" + key);
            if (!opt || key == "config" || key == "help")
                throw ConfigError("config file " + path + ": unknown key '" + item.name + "'");
            if (opt->count() > 0) continue;  // the flag wins
            try {
                for (const auto& v : item.inputs) opt->add_result(v);
                opt->run_callback();
            } catch (const CLI::Error& e) {
                throw ConfigError("config file " + path + ": bad value for '" + item.name + "': " + e.what());
            }
        }
    }
    for (auto* opt : required)
        if (opt->count() == 0) throw ConfigError(opt->get_name() + " is required (flag or config file)");
}

int category_code(const Error& e) { return static_cast<int>(e.category()); }

const char* category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::kConfig: return "config error";
        case ErrorCategory::kData: return "data error";
        case ErrorCategory::kNumeric: return "numeric error";
        case ErrorCategory::kIo: return "io error";
    }
    return "error";
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Mask-conditioned diffusion with an image-conditioned training prior", "dualprior"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", kCodeVersion);

    Run run;
    run.args = args;
    GenData gen_data;
    Train train_cmd;
    Sample sample_cmd;
    Eval eval_cmd;
    SegBench seg;
    Ablate ablate;
    Gradcheck grad;
    Replay replay;

    auto* s_gen = app.add_subcommand("gen-data", "Generate a procedural paired dataset");
    auto* s_train = app.add_subcommand("train", "Train a model on a dataset");
    auto* s_sample = app.add_subcommand("sample", "Synthesize images from masks");
    auto* s_eval = app.add_subcommand("eval", "Distribution and fidelity metrics");
    auto* s_seg = app.add_subcommand("seg-bench", "Downstream segmentation benchmark");
    auto* s_ablate = app.add_subcommand("ablate", "Component lattice and consistency-weight sweep");
    auto* s_grad = app.add_subcommand("gradcheck", "Finite-difference check of the training loss");
    auto* s_replay = app.add_subcommand("replay", "Re-run a command from its run.json and compare outputs");

    for (auto* s : {s_gen, s_train, s_sample, s_eval, s_seg, s_ablate}) add_common(s, run);
    add_common(s_grad, run, false);
    s_replay->add_option("--out", run.out, "Output directory")->required();
    s_replay->add_flag("--force", run.force);
    gen_data.add(s_gen);
    train_cmd.add(s_train);
    sample_cmd.add(s_sample);
    eval_cmd.add(s_eval);
    seg.add(s_seg);
    ablate.add(s_ablate);
    grad.add(s_grad);
    replay.add(s_replay);

    // Required options may come from the config file, so they are checked
    // after it is merged.
    std::map<CLI::App*, std::vector<CLI::Option*>> required;
    for (auto* s : app.get_subcommands({}))
        for (auto* o : s->get_options())
            if (o->get_required()) {
                required[s].push_back(o);
                o->required(false);
            }

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::fprintf(stderr, "config error: %s\n", e.what());
        std::fprintf(stderr, "run with --help for usage\n");
        return static_cast<int>(ErrorCategory::kConfig);
    }

    CLI::App* sub = app.get_subcommands().front();
    run.command = sub->get_name();
    try {
        merge_config(sub, run.config_file, required[sub]);
        Eigen::setNbThreads(threads_from_env());
        if (sub == s_gen) gen_data.exec(run);
        else if (sub == s_train) train_cmd.exec(run);
        else if (sub == s_sample) sample_cmd.exec(run);
        else if (sub == s_eval) eval_cmd.exec(run);
        else if (sub == s_seg) seg.exec(run);
        else if (sub == s_ablate) ablate.exec(run);
        else if (sub == s_grad) grad.exec(run);
        else if (sub == s_replay) return replay.exec(run);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s: %s\n", category_name(e.category()), e.what());
        return category_code(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace dualprior::cli
