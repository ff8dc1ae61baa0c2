#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dualprior/dataset.hpp"
#include "dualprior/image.hpp"

namespace dualprior {

/// Handcrafted per-image statistics standing in for a pretrained embedding:
///   [0, 3)   channel means             [3, 6)   channel stds
///   [6, 14)  gradient-magnitude histogram (fractions, bin width 0.125, last bin open)
///   [14, 22) radial FFT energy profile of the luminance (fractions)
///   [22, 24) texture frequency / image size and contrast inside the mask
///   24       texture dominance / 10    [25, 28) channel means inside the mask
///   28       inside-minus-outside mean luminance
using FeatureVector = std::vector<double>;
inline constexpr std::size_t kFeatureDim = 29;

FeatureVector image_features(const Image& image, const Image& mask, const GeneratorConfig& g);
std::vector<FeatureVector> image_features(const std::vector<PairedSample>& samples, const GeneratorConfig& g);

/// Principal square root of a symmetric PSD matrix by eigendecomposition;
/// eigenvalues below zero (round-off) are clamped to zero.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
double frechet_distance_gaussian(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                                 const Eigen::MatrixXd& cov_b);
/// Sample means and unbiased covariances. With fewer than d+1 samples per side
/// the covariances are reduced to their diagonals when allowed, else DataError.
double frechet_distance(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b,
                        bool diagonal_fallback = true);

/// Cubic polynomial kernel (x.y/d + 1)^3.
double kid_kernel(const FeatureVector& x, const FeatureVector& y);
/// Unbiased MMD^2 u-statistic with kid_kernel; may be slightly negative.
double kid(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b);

struct DiceIou {
    double dice = 0.0;
    double iou = 0.0;
};
/// Both are 1 when both masks are empty.
DiceIou dice_iou(const Image& pred, const Image& truth);

/// Mean pairwise L2 distance between feature vectors.
double diversity(const std::vector<FeatureVector>& feats);

/// Tiny three-layer conv segmenter.
struct SegmenterConfig {
    std::size_t width = 8;
    double lr = 1e-2;
    std::size_t iterations = 300;
    std::size_t batch = 8;
    std::uint64_t seed = 0;
};

nlohmann::json segmenter_config_to_json(const SegmenterConfig& c);
SegmenterConfig segmenter_config_from_json(const nlohmann::json& j);

class Segmenter {
   public:
    Segmenter(std::size_t channels, const SegmenterConfig& cfg);
    void train(const std::vector<PairedSample>& data);
    /// Per-pixel foreground probability [1, S, S].
    Image predict_probability(const Image& image) const;
    Image predict_mask(const Image& image) const;

   private:
    SegmenterConfig cfg_;
    std::vector<Tensor> params_;
};

struct ArmResult {
    std::string arm;
    double dice = 0.0;
    double iou = 0.0;
    std::size_t train_size = 0;
};

/// Arms: real-only, real + copy-paste (real samples duplicated to the synthetic
/// count), real + synthetic. Every arm trains with the same segmenter seed.
std::vector<ArmResult> downstream_experiment(const std::vector<PairedSample>& real,
                                             const std::vector<PairedSample>& synth, const SegmenterConfig& cfg,
                                             const std::vector<PairedSample>& test);

/// Content hash of an (image, mask) pair after 8-bit quantization.
std::uint64_t sample_content_hash(const PairedSample& s);

/// Mean texture_fidelity over samples with a mask of at least 16 pixels.
double mean_texture_fidelity(const std::vector<PairedSample>& samples, const GeneratorConfig& g);

}  // namespace dualprior
