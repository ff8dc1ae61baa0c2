#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dualprior/error.hpp"
#include "dualprior/eval.hpp"
#include "dualprior/rng.hpp"
#include "dualprior/texture.hpp"

using namespace dualprior;

namespace {

std::vector<FeatureVector> gaussian_set(std::size_t n, std::size_t d, double shift, Rng& rng) {
    std::vector<FeatureVector> out(n, FeatureVector(d));
    for (auto& v : out)
        for (auto& x : v) x = rng.normal() + shift;
    return out;
}

// Denman-Beavers iteration: an independent route to the principal square root.
Eigen::MatrixXd sqrtm_oracle(const Eigen::MatrixXd& a) {
    Eigen::MatrixXd y = a, z = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    for (int i = 0; i < 100; ++i) {
        const Eigen::MatrixXd yi = y.inverse(), zi = z.inverse();
        y = 0.5 * (y + zi);
        z = 0.5 * (z + yi);
    }
    return y;
}

Image random_binary(std::size_t s, double p, Rng& rng) {
    Image m(1, s, s);
    for (auto& v : m.data) v = rng.uniform() < p ? 1.0 : 0.0;
    return m;
}

}  // namespace

TEST_CASE("Frechet distance analytic fixtures") {
    Eigen::VectorXd mu_a(1), mu_b(1);
    Eigen::MatrixXd ca(1, 1), cb(1, 1);
    mu_a << 0;
    mu_b << 3;
    ca << 1;
    cb << 1;
    CHECK(std::abs(frechet_distance_gaussian(mu_a, ca, mu_b, cb) - 9.0) < 1e-9);
    mu_b << 0;
    cb << 4;
    CHECK(std::abs(frechet_distance_gaussian(mu_a, ca, mu_b, cb) - 1.0) < 1e-9);

    Rng rng(1);
    const auto a = gaussian_set(60, 4, 0.0, rng);
    CHECK(frechet_distance(a, a) < 1e-9);
}

TEST_CASE("Frechet distance symmetry and non-negativity") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.below(6);
        const auto a = gaussian_set(10 + rng.below(20), d, rng.uniform(-1, 1), rng);
        const auto b = gaussian_set(10 + rng.below(20), d, rng.uniform(-1, 1), rng);
        const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
        CHECK(ab >= 0.0);
        CHECK(std::abs(ab - ba) <= 1e-9 * std::max(1.0, ab));
    }
    const auto few = gaussian_set(3, 5, 0.0, rng);
    CHECK_THROWS_AS(frechet_distance(few, few, false), DataError);
    CHECK(frechet_distance(few, few, true) < 1e-12);
}

TEST_CASE("matrix square root against an iterative oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 2 + static_cast<int>(rng.below(8));
        Eigen::MatrixXd x(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
        const Eigen::MatrixXd spd = x * x.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
        const Eigen::MatrixXd r = sqrtm_psd(spd);
        CHECK((r - sqrtm_oracle(spd)).cwiseAbs().maxCoeff() < 1e-8);
        CHECK((r * r - spd).cwiseAbs().maxCoeff() < 1e-8);
    }
    // a PSD matrix with round-off-negative eigenvalues stays finite
    Eigen::MatrixXd rank1(3, 3);
    rank1 << 1, 1, 1, 1, 1, 1, 1, 1, 1;
    const auto r = sqrtm_psd(rank1);
    CHECK(r.allFinite());
    CHECK((r * r - rank1).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("KID fixtures and properties") {
    // A = B = {a, b}: k(a,a) = k(b,b) = 1.5^3, k(a,b) = 1; u-statistic
    // 1 + 1 - 2 * (3.375 + 1 + 1 + 3.375) / 4 = -2.375.
    const std::vector<FeatureVector> two{{1.0, 0.0}, {0.0, 1.0}};
    CHECK(std::abs(kid(two, two) - (-2.375)) < 1e-12);
    CHECK_THROWS_AS(kid({{1.0}}, two), DataError);

    Rng rng(4);
    SUBCASE("same distribution, n = 500, within three bootstrap deviations") {
        const auto a = gaussian_set(500, 3, 0.0, rng), b = gaussian_set(500, 3, 0.0, rng);
        const double value = kid(a, b);
        std::vector<double> boots;
        for (int r = 0; r < 10; ++r) {
            std::vector<FeatureVector> ra, rb;
            for (int i = 0; i < 100; ++i) {
                ra.push_back(a[rng.below(500)]);
                rb.push_back(b[rng.below(500)]);
            }
            boots.push_back(kid(ra, rb));
        }
        double m = std::accumulate(boots.begin(), boots.end(), 0.0) / boots.size(), v = 0;
        for (double x : boots) v += (x - m) * (x - m);
        const double sd = std::sqrt(v / (boots.size() - 1));
        CHECK(std::abs(value) < 3 * sd);
    }
    SUBCASE("unbiased over 200 resamples") {
        std::vector<double> vals;
        for (int r = 0; r < 200; ++r) vals.push_back(kid(gaussian_set(15, 3, 0.0, rng), gaussian_set(15, 3, 0.0, rng)));
        const double m = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
        double v = 0;
        for (double x : vals) v += (x - m) * (x - m);
        const double se = std::sqrt(v / (vals.size() - 1) / vals.size());
        CHECK(std::abs(m) < 3 * se);
    }
    SUBCASE("monotone in a growing shift") {
        const auto a = gaussian_set(60, 3, 0.0, rng);
        const auto b = gaussian_set(60, 3, 0.0, rng);
        double prev = -1e300;
        for (double shift : {1.0, 2.0, 4.0}) {
            auto shifted = b;
            for (auto& v : shifted)
                for (auto& x : v) x += shift;
            const double k = kid(a, shifted);
            CHECK(k > 0);
            CHECK(k > prev);
            prev = k;
        }
    }
}

TEST_CASE("dice and iou") {
    Image a(1, 4, 4), b(1, 4, 4);
    CHECK(dice_iou(a, b).dice == 1.0);
    CHECK(dice_iou(a, b).iou == 1.0);
    a.data = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    b.data = {0, 0, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(dice_iou(a, b).dice == 0.5);
    CHECK(dice_iou(a, b).iou == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(dice_iou(a, a).dice == 1.0);
    Image c(1, 4, 4);
    c.data[15] = 1;
    CHECK(dice_iou(a, c).dice == 0.0);
    CHECK(dice_iou(a, c).iou == 0.0);
    CHECK_THROWS_AS(dice_iou(a, Image(1, 5, 5)), ShapeError);

    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto p = random_binary(8, rng.uniform(), rng), t = random_binary(8, rng.uniform(), rng);
        const auto r = dice_iou(p, t);
        REQUIRE(r.dice >= r.iou);
        REQUIRE(r.dice <= 1.0);
        REQUIRE(r.iou >= 0.0);
        REQUIRE(std::abs(r.dice - 2 * r.iou / (1 + r.iou)) < 1e-12);
        REQUIRE((r.dice == r.iou) == (r.dice == 0.0 || r.dice == 1.0));
    }
}

TEST_CASE("diversity") {
    const FeatureVector a{0, 0}, b{3, 4};
    CHECK(diversity({a, b}) == 5.0);
    CHECK(diversity({b, b, b}) == 0.0);
    CHECK_THROWS_AS(diversity({a}), DataError);
}

TEST_CASE("features") {
    GeneratorConfig g;
    const auto data = generate_dataset(4, g, 6);
    const auto f = image_features(data[0].image, data[0].mask, g);
    CHECK(f.size() == kFeatureDim);
    for (double v : f) CHECK(std::isfinite(v));
    CHECK(std::accumulate(f.begin() + 6, f.begin() + 14, 0.0) == doctest::Approx(1.0));
    CHECK(std::accumulate(f.begin() + 14, f.begin() + 22, 0.0) == doctest::Approx(1.0));
    CHECK(f[28] >= g.mean_contrast);
    CHECK(image_features(data, g).size() == 4);
}

TEST_CASE("texture fidelity on noise fill") {
    GeneratorConfig g;
    const auto s = generate_sample(g, 7, 0);
    Rng rng(8);
    std::size_t maxed = 0;
    for (int k = 0; k < 20; ++k) {
        Image noisy = s.image;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < noisy.pixels(); ++i)
                if (s.mask.data[i] > 0.5) noisy.data[c * noisy.pixels() + i] = 0.3 * rng.normal();
        maxed += texture_fidelity(noisy, s.mask, g).frequency_term == max_frequency_distance(g);
    }
    CHECK(maxed >= 18);
}

TEST_CASE("segmenter and downstream arms") {
    GeneratorConfig g;
    g.image_size = 16;
    g.min_axis = 3;
    g.max_axis = 5;
    g.center_margin = 5;
    g.texture_freq_min = 2.5;
    g.texture_freq_max = 3.5;
    const auto all = generate_dataset(48, g, 9);
    const std::vector<PairedSample> real(all.begin(), all.begin() + 16), synth(all.begin() + 16, all.begin() + 32),
        test(all.begin() + 32, all.end());
    SegmenterConfig cfg;
    cfg.iterations = 120;
    const auto a = downstream_experiment(real, {}, cfg, test);
    REQUIRE(a.size() == 3);
    CHECK(a[0].arm == "real");
    CHECK(a[0].dice == a[2].dice);
    CHECK(a[0].iou == a[2].iou);
    CHECK(a[0].dice > 0.5);
    const auto b = downstream_experiment(real, synth, cfg, test);
    const auto c = downstream_experiment(real, synth, cfg, test);
    CHECK(b[1].dice == c[1].dice);
    CHECK(b[2].dice == c[2].dice);
    CHECK(b[2].train_size == 32);
    CHECK(b[1].train_size == 32);
    for (const auto& r : b) {
        CHECK(r.dice >= r.iou);
        CHECK(r.dice <= 1.0);
    }
    CHECK_THROWS_AS(downstream_experiment(real, synth, cfg, real), DataError);

    Segmenter seg(3, cfg);
    const auto p = seg.predict_probability(test[0].image);
    for (double v : p.data) CHECK((v >= 0.0 && v <= 1.0));
}
