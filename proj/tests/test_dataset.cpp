#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "dualprior/dataset.hpp"
#include "dualprior/error.hpp"
#include "dualprior/rng.hpp"
#include "dualprior/texture.hpp"

using namespace dualprior;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("dualprior_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

Image centered_ellipse(std::size_t s, double a, double b) {
    Image m(1, s, s);
    const double c = static_cast<double>(s) / 2;
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
            const double dx = (x + 0.5 - c) / a, dy = (y + 0.5 - c) / b;
            m.at(0, y, x) = dx * dx + dy * dy <= 1.0 ? 1.0 : 0.0;
        }
    return m;
}

double mean_gap(const PairedSample& s) {
    const auto lum = luminance(s.image);
    double in = 0, out = 0;
    std::size_t n_in = 0;
    for (std::size_t i = 0; i < lum.size(); ++i) {
        if (s.mask.data[i] > 0.5) {
            in += lum[i];
            ++n_in;
        } else {
            out += lum[i];
        }
    }
    return in / n_in - out / (lum.size() - n_in);
}

}  // namespace

TEST_CASE("generation is deterministic down to PNG bytes") {
    GeneratorConfig g;
    const auto a = generate_dataset(1, g, 77);
    const auto b = generate_dataset(1, g, 77);
    CHECK(a[0].image == b[0].image);
    CHECK(a[0].mask == b[0].mask);
    const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
    save_dataset(d1, a);
    save_dataset(d2, b);
    CHECK(slurp(d1 / "images/0000.png") == slurp(d2 / "images/0000.png"));
    CHECK(slurp(d1 / "masks/0000.png") == slurp(d2 / "masks/0000.png"));
    CHECK(slurp(d1 / "meta/0000.json") == slurp(d2 / "meta/0000.json"));
    // sample i does not depend on how many samples precede it
    CHECK(generate_dataset(5, g, 77)[3].image == generate_sample(g, 77, 3).image);
    CHECK_FALSE(generate_sample(g, 78, 0).image == a[0].image);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("invariants hold over 1000 seeds") {
    GeneratorConfig g;
    std::size_t blobs = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto s = generate_sample(g, seed, seed % 7);
        REQUIRE(mask_area(s.mask) >= kMinMaskArea);
        REQUIRE(s.meta.has_value());
        const auto& m = *s.meta;
        CHECK(m.texture_freq >= g.texture_freq_min);
        CHECK(m.texture_freq <= g.texture_freq_max);
        CHECK(m.texture_contrast >= g.texture_contrast_min);
        CHECK(m.texture_contrast <= g.texture_contrast_max);
        CHECK(m.axis_a >= g.min_axis);
        CHECK(m.axis_b <= g.max_axis);
        blobs += m.shape == LesionShape::kBlob;
        for (double v : s.image.data) REQUIRE((std::isfinite(v) && v >= -1.0 && v <= 1.0));
        for (double v : s.mask.data) REQUIRE((v == 0.0 || v == 1.0));
        // mean brightness gap is a construction guarantee
        REQUIRE(mean_gap(s) >= g.mean_contrast);
    }
    CHECK(blobs > 400);
    CHECK(blobs < 600);
}

TEST_CASE("FFT frequency estimate within one bin on at least 95% of samples") {
    GeneratorConfig g;
    const auto data = generate_dataset(400, g, 2024);
    std::size_t hits = 0, dominant = 0;
    for (const auto& s : data) {
        const auto est = analyze_texture(s.image, s.mask, g.dominance_threshold);
        hits += std::abs(est.frequency - s.meta->texture_freq) <= 1.0;
        dominant += est.dominant;
    }
    CHECK(hits >= 380);
    CHECK(dominant >= 380);
}

TEST_CASE("texture analysis oracles") {
    GeneratorConfig g;
    const std::size_t S = 32;
    SUBCASE("pure sinusoid over the whole canvas hits its ring exactly") {
        Image img(3, S, S), mask(1, S, S, 1.0);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < S; ++y)
                for (std::size_t x = 0; x < S; ++x) img.at(c, y, x) = 0.25 * std::sin(2 * std::numbers::pi * 6.0 * x / S);
        const auto est = analyze_texture(img, mask, g.dominance_threshold);
        CHECK(est.peak_ring == 6);
        CHECK(est.dominant);
        CHECK(est.frequency == doctest::Approx(6.0).epsilon(0.2));
        // eroded region drops the border rows and columns, still close to sqrt(2)*std = amplitude
        CHECK(est.contrast == doctest::Approx(0.25).epsilon(0.05));
        const auto fid = texture_fidelity(img, mask, g);
        CHECK(fid.total < 0.3);
    }
    SUBCASE("flat region has no dominant peak and gets the maximal frequency penalty") {
        Image img(3, S, S, 0.1), mask(1, S, S, 1.0);
        const auto fid = texture_fidelity(img, mask, g);
        CHECK_FALSE(fid.estimate.dominant);
        CHECK(fid.frequency_term == doctest::Approx(10.0));
        CHECK(max_frequency_distance(g) == doctest::Approx(10.0));
        CHECK(fid.contrast_term == doctest::Approx(0.25));
    }
    SUBCASE("white noise rarely passes the gate") {
        Rng rng(5);
        std::size_t passed = 0;
        for (int k = 0; k < 200; ++k) {
            const auto s = generate_sample(g, 9, k);
            Image noise(3, S, S);
            for (double& v : noise.data) v = 0.3 * rng.normal();
            passed += analyze_texture(noise, s.mask, g.dominance_threshold).dominant;
        }
        CHECK(passed <= 10);
    }
    SUBCASE("tiny masks are rejected") {
        Image img(3, S, S), mask(1, S, S);
        mask.at(0, 3, 3) = 1;
        CHECK_THROWS_AS(analyze_texture(img, mask, 2.5), DataError);
    }
    CHECK(g.texture_noise_floor() == doctest::Approx(1.55));
}

TEST_CASE("generated lesions sit under the texture noise floor") {
    GeneratorConfig g;
    const auto data = generate_dataset(200, g, 31);
    std::size_t under = 0;
    for (const auto& s : data) under += texture_fidelity(s.image, s.mask, g).total <= g.texture_noise_floor();
    CHECK(under >= 190);
}

TEST_CASE("mask transforms") {
    const auto mask = centered_ellipse(32, 5, 4);
    const auto area = static_cast<double>(mask_area(mask));
    SUBCASE("identity") {
        CHECK(transform_mask(mask, {MaskTransformKind::kScale, 1.0, 1.0, 3}) == mask);
        CHECK(transform_mask(mask, {MaskTransformKind::kTranslate, 0.0, 0.0, 3}) == mask);
        CHECK(transform_mask(mask, {MaskTransformKind::kRotate, 0.0, 0.0, 3}) == mask);
        CHECK(transform_mask(mask, {MaskTransformKind::kElastic, 0.0, 0.0, 3}) == mask);
    }
    SUBCASE("scale 2x quadruples the area") {
        const auto out = transform_mask(mask, {MaskTransformKind::kScale, 2.0, 2.0, 1});
        CHECK(static_cast<double>(mask_area(out)) / area == doctest::Approx(4.0).epsilon(0.10));
    }
    SUBCASE("translation beyond bounds is resampled") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto out = transform_mask(mask, {MaskTransformKind::kTranslate, 0.0, 40.0, seed});
            CHECK(mask_area(out) >= kMinMaskArea);
            CHECK(static_cast<double>(mask_area(out)) >= 0.75 * area);
            for (double v : out.data) CHECK((v == 0.0 || v == 1.0));
        }
        CHECK_THROWS_AS(transform_mask(mask, {MaskTransformKind::kTranslate, 40.0, 40.0, 0}), DataError);
    }
    SUBCASE("rotation and elastic keep a valid binary mask") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto r = transform_mask(mask, {MaskTransformKind::kRotate, 0.0, 3.14, seed});
            CHECK(std::abs(static_cast<double>(mask_area(r)) - area) <= 0.15 * area);
            const auto e = transform_mask(mask, {MaskTransformKind::kElastic, 1.0, 3.0, seed});
            CHECK(mask_area(e) >= kMinMaskArea);
        }
    }
    CHECK(parse_mask_transform_kind("elastic") == MaskTransformKind::kElastic);
    CHECK_THROWS_AS(parse_mask_transform_kind("shear"), ConfigError);
}

TEST_CASE("save and load round trip") {
    GeneratorConfig g;
    auto data = generate_dataset(4, g, 8);
    const auto dir = scratch_dir("rt");
    save_dataset(dir, data);
    SUBCASE("pixels match after quantization, masks stay binary") {
        const auto back = load_dataset(dir);
        REQUIRE(back.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(back[i].id == sample_file_stem(i));
            CHECK(back[i].image == quantize_roundtrip(data[i].image));
            CHECK(back[i].mask == data[i].mask);
            REQUIRE(back[i].meta.has_value());
            CHECK(meta_to_json(*back[i].meta) == meta_to_json(*data[i].meta));
        }
        const auto raw = read_png(dir / "masks/0000.png");
        for (double v : raw.data) CHECK((v == -1.0 || v == 1.0));
    }
    SUBCASE("missing sidecar leaves meta empty") {
        fs::remove(dir / "meta/0002.json");
        const auto back = load_dataset(dir);
        CHECK_FALSE(back[2].meta.has_value());
        CHECK(back[1].meta.has_value());
    }
    SUBCASE("corrupt files are reported") {
        std::ofstream(dir / "images/0001.png") << "not a png";
        CHECK_THROWS_AS(load_dataset(dir), DataError);
    }
    SUBCASE("dimension mismatch is reported") {
        write_mask_png(dir / "masks/0003.png", Image(1, 16, 16));
        CHECK_THROWS_AS(load_dataset(dir), DataError);
    }
    fs::remove_all(dir);
}

TEST_CASE("generator config json") {
    GeneratorConfig g;
    g.noise_sigma = 0.05;
    const auto back = generator_config_from_json(generator_config_to_json(g));
    CHECK(back.noise_sigma == 0.05);
    CHECK_THROWS_AS(generator_config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(generator_config_from_json({{"min_axis", 12.0}}), ConfigError);
    CHECK_THROWS_AS(generate_dataset(0, g, 1), ConfigError);
}
