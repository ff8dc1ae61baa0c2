#include "dualprior/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include <Eigen/Eigenvalues>

#include "dualprior/error.hpp"
#include "dualprior/ops.hpp"
#include "dualprior/rng.hpp"
#include "dualprior/texture.hpp"

namespace dualprior {

using nlohmann::json;

FeatureVector image_features(const Image& img, const Image& mask, const GeneratorConfig& g) {
    const std::size_t S = img.height, C = img.channels, P = img.pixels();
    if (img.width != S || mask.height != S || mask.width != S) throw ShapeError("features need square matching inputs");
    FeatureVector f(kFeatureDim, 0.0);
    for (std::size_t c = 0; c < std::min<std::size_t>(C, 3); ++c) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < P; ++i) m += img.data[c * P + i];
        m /= P;
        for (std::size_t i = 0; i < P; ++i) v += (img.data[c * P + i] - m) * (img.data[c * P + i] - m);
        f[c] = m;
        f[3 + c] = std::sqrt(v / P);
    }

    const auto lum = luminance(img);
    for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
            const double gx = lum[y * S + std::min(x + 1, S - 1)] - lum[y * S + x];
            const double gy = lum[std::min(y + 1, S - 1) * S + x] - lum[y * S + x];
            const auto bin = std::min<std::size_t>(7, static_cast<std::size_t>(std::hypot(gx, gy) / 0.125));
            f[6 + bin] += 1.0 / static_cast<double>(P);
        }

    double mu = 0;
    for (double v : lum) mu += v;
    mu /= P;
    std::vector<double> plane(P);
    for (std::size_t i = 0; i < P; ++i) plane[i] = lum[i] - mu;
    const auto rings = ring_power(power_spectrum(plane, S), S);
    const std::size_t R = rings.size() - 1;  // rings 1..S/2
    double total = 0;
    for (std::size_t r = 1; r <= R; ++r) total += rings[r];
    if (total > 0)
        for (std::size_t r = 1; r <= R; ++r) f[14 + std::min<std::size_t>(7, (r - 1) * 8 / R)] += rings[r] / total;

    double in = 0, out = 0;
    std::size_t n_in = 0;
    for (std::size_t i = 0; i < P; ++i) {
        if (mask.data[i] > 0.5) {
            in += lum[i];
            ++n_in;
            for (std::size_t c = 0; c < std::min<std::size_t>(C, 3); ++c) f[25 + c] += img.data[c * P + i];
        } else {
            out += lum[i];
        }
    }
    if (n_in >= kMinMaskArea) {
        const auto est = analyze_texture(img, mask, g.dominance_threshold);
        f[22] = est.frequency / static_cast<double>(S);
        f[23] = est.contrast;
        f[24] = est.dominance / 10.0;
    }
    if (n_in > 0)
        for (std::size_t c = 0; c < 3; ++c) f[25 + c] /= static_cast<double>(n_in);
    if (n_in > 0 && n_in < P) f[28] = in / n_in - out / (P - n_in);
    return f;
}

std::vector<FeatureVector> image_features(const std::vector<PairedSample>& samples, const GeneratorConfig& g) {
    std::vector<FeatureVector> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(image_features(s.image, s.mask, g));
    return out;
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw ShapeError("sqrtm_psd: matrix must be square");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
    if (es.info() != Eigen::Success) throw NumericError("sqrtm_psd: eigendecomposition failed");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double frechet_distance_gaussian(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                                 const Eigen::MatrixXd& cov_b) {
    if (mu_a.size() != mu_b.size() || cov_a.rows() != mu_a.size() || cov_b.rows() != mu_b.size())
        throw ShapeError("frechet_distance: dimension mismatch");
    const Eigen::MatrixXd ra = sqrtm_psd(cov_a);
    const Eigen::MatrixXd inner = ra * cov_b * ra;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
    const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_cross;
    return std::max(0.0, d);
}

namespace {

void moments(const std::vector<FeatureVector>& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto d = static_cast<Eigen::Index>(x.front().size());
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(x[i].size()) != d) throw ShapeError("feature vectors differ in length");
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = x[i][j];
    }
    mu = m.colwise().mean();
    const Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
    cov = n > 1 ? Eigen::MatrixXd(centered.transpose() * centered / static_cast<double>(n - 1))
                : Eigen::MatrixXd::Zero(d, d);
}

}  // namespace

double frechet_distance(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b, bool diagonal_fallback) {
    if (a.empty() || b.empty()) throw DataError("frechet_distance: empty feature set");
    const std::size_t d = a.front().size();
    if (b.front().size() != d) throw ShapeError("frechet_distance: dimension mismatch");
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    moments(a, mu_a, cov_a);
    moments(b, mu_b, cov_b);
    if (a.size() < d + 1 || b.size() < d + 1) {
        if (!diagonal_fallback)
            throw DataError("frechet_distance: need at least " + std::to_string(d + 1) + " samples per side");
        cov_a = Eigen::MatrixXd(cov_a.diagonal().asDiagonal());
        cov_b = Eigen::MatrixXd(cov_b.diagonal().asDiagonal());
    }
    return frechet_distance_gaussian(mu_a, cov_a, mu_b, cov_b);
}

double kid_kernel(const FeatureVector& x, const FeatureVector& y) {
    if (x.size() != y.size()) throw ShapeError("kid: dimension mismatch");
    double dot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
    const double k = dot / static_cast<double>(x.size()) + 1.0;
    return k * k * k;
}

double kid(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b) {
    const std::size_t m = a.size(), n = b.size();
    if (m < 2 || n < 2) throw DataError("kid: need at least 2 samples per side");
    double kaa = 0, kbb = 0, kab = 0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) kaa += kid_kernel(a[i], a[j]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) kbb += kid_kernel(b[i], b[j]);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) kab += kid_kernel(a[i], b[j]);
    return kaa / static_cast<double>(m * (m - 1)) + kbb / static_cast<double>(n * (n - 1)) -
           2.0 * kab / static_cast<double>(m * n);
}

DiceIou dice_iou(const Image& pred, const Image& truth) {
    if (pred.channels != truth.channels || pred.height != truth.height || pred.width != truth.width)
        throw ShapeError("dice_iou: mask shapes differ");
    std::size_t a = 0, b = 0, inter = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] > 0.5, t = truth.data[i] > 0.5;
        a += p;
        b += t;
        inter += p && t;
    }
    if (a + b == 0) return {1.0, 1.0};
    const double uni = static_cast<double>(a + b - inter);
    return {2.0 * static_cast<double>(inter) / static_cast<double>(a + b), static_cast<double>(inter) / uni};
}

double diversity(const std::vector<FeatureVector>& feats) {
    if (feats.size() < 2) throw DataError("diversity: need at least 2 images");
    double total = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < feats.size(); ++i)
        for (std::size_t j = i + 1; j < feats.size(); ++j) {
            if (feats[i].size() != feats[j].size()) throw ShapeError("diversity: dimension mismatch");
            double d2 = 0;
            for (std::size_t k = 0; k < feats[i].size(); ++k) d2 += (feats[i][k] - feats[j][k]) * (feats[i][k] - feats[j][k]);
            total += std::sqrt(d2);
            ++pairs;
        }
    return total / static_cast<double>(pairs);
}

json segmenter_config_to_json(const SegmenterConfig& c) {
    return {{"width", c.width}, {"lr", c.lr}, {"iterations", c.iterations}, {"batch", c.batch}, {"seed", c.seed}};
}

SegmenterConfig segmenter_config_from_json(const json& j) {
    SegmenterConfig c;
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "width") c.width = v.get<std::size_t>();
            else if (k == "lr") c.lr = v.get<double>();
            else if (k == "iterations") c.iterations = v.get<std::size_t>();
            else if (k == "batch") c.batch = v.get<std::size_t>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("unknown segmenter key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("segmenter config: ") + e.what());
    }
    return c;
}

Segmenter::Segmenter(std::size_t channels, const SegmenterConfig& cfg) : cfg_(cfg) {
    if (cfg.width == 0 || cfg.batch == 0 || !(cfg.lr > 0)) throw ConfigError("segmenter: width, batch and lr must be positive");
    Rng rng(derive_seed(cfg.seed, 0));
    const std::size_t w = cfg.width;
    const std::size_t shapes[3][2] = {{w, channels}, {w, w}, {1, w}};
    for (const auto& s : shapes) {
        std::vector<double> v(s[0] * s[1] * 9);
        const double sd = std::sqrt(2.0 / static_cast<double>(s[1] * 9));
        for (auto& x : v) x = sd * rng.normal();
        params_.push_back(Tensor::from_data({s[0], s[1], 3, 3}, std::move(v), true));
        params_.push_back(Tensor::zeros({s[0]}, true));
    }
}

namespace {

Tensor segmenter_logits(const std::vector<Tensor>& p, const Tensor& x) {
    Tensor h = silu(add_channel_bias(conv2d(x, p[0], 1, 1), p[1]));
    h = silu(add_channel_bias(conv2d(h, p[2], 1, 1), p[3]));
    return add_channel_bias(conv2d(h, p[4], 1, 1), p[5]);
}

}  // namespace

void Segmenter::train(const std::vector<PairedSample>& data) {
    if (data.empty()) throw DataError("segmenter: empty training set");
    std::vector<std::vector<double>> m(params_.size()), v(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m[i].assign(params_[i].numel(), 0.0);
        v[i].assign(params_[i].numel(), 0.0);
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (std::size_t it = 0; it < cfg_.iterations; ++it) {
        Rng rng(derive_seed(derive_seed(cfg_.seed, 1), it));
        std::vector<const Image*> xs, ys;
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            const auto& s = data[rng.below(data.size())];
            xs.push_back(&s.image);
            ys.push_back(&s.mask);
        }
        const Tensor x = stack_images(std::span<const Image* const>(xs));
        const Tensor y = stack_images(std::span<const Image* const>(ys));
        for (auto& p : params_) p.zero_grad();
        backward(bce_with_logits(segmenter_logits(params_, x), y));
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(it + 1));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(it + 1));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto w = params_[i].mutable_data();
            const auto g = params_[i].grad();
            if (g.empty()) continue;
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[i][j] = b1 * m[i][j] + (1 - b1) * g[j];
                v[i][j] = b2 * v[i][j] + (1 - b2) * g[j] * g[j];
                w[j] -= cfg_.lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
            }
        }
    }
    for (auto& p : params_) p.zero_grad();
}

Image Segmenter::predict_probability(const Image& image) const {
    NoGradGuard no_grad;
    const Tensor logits = segmenter_logits(params_, stack_images(std::span<const Image>(&image, 1)));
    Image out(1, image.height, image.width);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 1.0 / (1.0 + std::exp(-logits.data()[i]));
    return out;
}

Image Segmenter::predict_mask(const Image& image) const {
    Image p = predict_probability(image);
    for (auto& v : p.data) v = v >= 0.5 ? 1.0 : 0.0;
    return p;
}

std::uint64_t sample_content_hash(const PairedSample& s) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](std::uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ULL;
    };
    for (double v : s.image.data) mix(quantize_pixel(v));
    for (double v : s.mask.data) mix(v > 0.5 ? 255 : 0);
    return h;
}

std::vector<ArmResult> downstream_experiment(const std::vector<PairedSample>& real,
                                             const std::vector<PairedSample>& synth, const SegmenterConfig& cfg,
                                             const std::vector<PairedSample>& test) {
    if (real.empty() || test.empty()) throw DataError("downstream_experiment: real and test sets must be non-empty");
    std::unordered_set<std::uint64_t> train_hashes;
    for (const auto& s : real) train_hashes.insert(sample_content_hash(s));
    for (const auto& s : synth) train_hashes.insert(sample_content_hash(s));
    for (const auto& s : test)
        if (train_hashes.count(sample_content_hash(s))) throw DataError("test sample " + s.id + " also appears in training data");

    std::vector<PairedSample> copy = real;
    for (std::size_t i = 0; i < synth.size(); ++i) copy.push_back(real[i % real.size()]);
    std::vector<PairedSample> mixed = real;
    mixed.insert(mixed.end(), synth.begin(), synth.end());

    std::vector<ArmResult> out;
    for (const auto& [name, set] : std::vector<std::pair<std::string, const std::vector<PairedSample>*>>{
             {"real", &real}, {"real+copy", &copy}, {"real+synth", &mixed}}) {
        Segmenter seg(real.front().image.channels, cfg);
        seg.train(*set);
        ArmResult r;
        r.arm = name;
        r.train_size = set->size();
        for (const auto& s : test) {
            const auto di = dice_iou(seg.predict_mask(s.image), s.mask);
            r.dice += di.dice;
            r.iou += di.iou;
        }
        r.dice /= static_cast<double>(test.size());
        r.iou /= static_cast<double>(test.size());
        out.push_back(r);
    }
    return out;
}

double mean_texture_fidelity(const std::vector<PairedSample>& samples, const GeneratorConfig& g) {
    double total = 0;
    std::size_t n = 0;
    for (const auto& s : samples) {
        if (mask_area(s.mask) < kMinMaskArea) continue;
        total += texture_fidelity(s.image, s.mask, g).total;
        ++n;
    }
    if (n == 0) throw DataError("no sample has a mask of at least 16 pixels");
    return total / static_cast<double>(n);
}

}  // namespace dualprior
