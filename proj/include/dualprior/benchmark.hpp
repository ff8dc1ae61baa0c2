#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualprior/dataset.hpp"
#include "dualprior/eval.hpp"
#include "dualprior/model.hpp"
#include "dualprior/sampler.hpp"
#include "dualprior/schedule.hpp"
#include "dualprior/trainer.hpp"

namespace dualprior {

/// The toy benchmark shared by the ablation driver and the acceptance runs.
struct BenchmarkConfig {
    GeneratorConfig generator;
    std::size_t n_test = 64;
    std::uint64_t test_seed = 3000;
    ModelConfig model;
    TrainConfig train;
    SampleConfig sample;
    SegmenterConfig segmenter;
    // "Random" masks: transformed copies of the training masks.
    MaskTransform random_masks{MaskTransformKind::kScale, 0.8, 1.25, 17};
    std::size_t n_synth = 200;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    void validate() const;
};

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j);

NoiseSchedule benchmark_schedule(const BenchmarkConfig& c);

/// Mask i is the i % n-th training mask under transform seed derive_seed(t.seed, i).
std::vector<Image> random_masks(const std::vector<PairedSample>& source, std::size_t count, const MaskTransform& t);

/// One image per mask, sample stream derive_seed(cfg.seed, i).
std::vector<PairedSample> synthesize(const SiameseModel& m, const std::vector<Image>& masks, const SampleConfig& cfg,
                                     const NoiseSchedule& s);

struct AblationSetting {
    std::string name;   // s1..s8, wc0.0..wc2.0
    std::string group;  // "component" or "wc"
    bool dhi = false;
    bool aug = false;
    bool lc = false;
    double w_c = 0.0;
};

/// grid: "component" (8 rows), "wc" (5 rows) or "all" (13 rows).
std::vector<AblationSetting> ablation_settings(const std::string& grid);
const AblationSetting& find_setting(const std::vector<AblationSetting>& settings, const std::string& name);

/// The benchmark with the setting's switches applied. DHI off swaps the
/// residual encoder for the plain hint encoder; s1 trains in controlnet mode.
BenchmarkConfig apply_setting(const BenchmarkConfig& base, const AblationSetting& s, std::uint64_t seed);

struct AblationRow {
    AblationSetting setting;
    std::uint64_t seed = 0;
    std::string config_hash;
    double frechet = 0.0;
    double kid = 0.0;
    double texture_fidelity = 0.0;
    double dice = 0.0;
    double iou = 0.0;
};

AblationRow run_ablation_row(const BenchmarkConfig& base, const AblationSetting& s, std::uint64_t seed,
                             const std::vector<PairedSample>& train_data);

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& r);

}  // namespace dualprior
