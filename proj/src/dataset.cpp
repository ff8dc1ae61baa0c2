#include "dualprior/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "dualprior/error.hpp"
#include "dualprior/rng.hpp"

namespace dualprior {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kMaxGenerationAttempts = 1000;
constexpr int kMaxTransformAttempts = 100;

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("generator config: " + what);
}
}  // namespace

double GeneratorConfig::texture_noise_floor() const {
    return 0.5 * (texture_freq_max - texture_freq_min) + 1.0 + 0.5 * (texture_contrast_max - texture_contrast_min) +
           noise_sigma;
}

void GeneratorConfig::validate() const {
    require(image_size >= 8 && image_size <= 1024, "image_size must be in [8, 1024]");
    require(channels == 1 || channels == 3, "channels must be 1 or 3");
    require(min_axis > 0 && min_axis <= max_axis, "need 0 < min_axis <= max_axis");
    require(center_margin >= 0 && 2 * center_margin < static_cast<double>(image_size), "center_margin too large");
    require(blob_fraction >= 0 && blob_fraction <= 1, "blob_fraction must be in [0, 1]");
    require(blob_amp_min >= 0 && blob_amp_min <= blob_amp_max && blob_amp_max < 1, "bad blob amplitude range");
    require(texture_freq_min > 0 && texture_freq_min <= texture_freq_max &&
                texture_freq_max < static_cast<double>(image_size) / 2,
            "texture frequency range must lie in (0, image_size/2)");
    require(texture_contrast_min >= 0 && texture_contrast_min <= texture_contrast_max, "bad texture contrast range");
    require(lesion_offset_min <= lesion_offset_max, "bad lesion offset range");
    require(mean_contrast >= 0, "mean_contrast must be >= 0");
    require(bg_gradient_amplitude >= 0 && noise_sigma >= 0, "amplitudes must be >= 0");
    require(dominance_threshold > 1, "dominance_threshold must exceed 1");
    for (double v : bg_color) require(std::isfinite(v), "bg_color must be finite");
    for (double v : lesion_tint) require(std::isfinite(v), "lesion_tint must be finite");
}

json generator_config_to_json(const GeneratorConfig& g) {
    return json{{"image_size", g.image_size},
                {"channels", g.channels},
                {"min_axis", g.min_axis},
                {"max_axis", g.max_axis},
                {"center_margin", g.center_margin},
                {"blob_fraction", g.blob_fraction},
                {"blob_amp_min", g.blob_amp_min},
                {"blob_amp_max", g.blob_amp_max},
                {"texture_freq_min", g.texture_freq_min},
                {"texture_freq_max", g.texture_freq_max},
                {"texture_contrast_min", g.texture_contrast_min},
                {"texture_contrast_max", g.texture_contrast_max},
                {"lesion_offset_min", g.lesion_offset_min},
                {"lesion_offset_max", g.lesion_offset_max},
                {"mean_contrast", g.mean_contrast},
                {"bg_gradient_amplitude", g.bg_gradient_amplitude},
                {"noise_sigma", g.noise_sigma},
                {"bg_color", g.bg_color},
                {"lesion_tint", g.lesion_tint},
                {"dominance_threshold", g.dominance_threshold}};
}

GeneratorConfig generator_config_from_json(const json& j) {
    GeneratorConfig g;
    const json defaults = generator_config_to_json(g);
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) throw ConfigError("generator config: unknown key '" + key + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        get("image_size", g.image_size);
        get("channels", g.channels);
        get("min_axis", g.min_axis);
        get("max_axis", g.max_axis);
        get("center_margin", g.center_margin);
        get("blob_fraction", g.blob_fraction);
        get("blob_amp_min", g.blob_amp_min);
        get("blob_amp_max", g.blob_amp_max);
        get("texture_freq_min", g.texture_freq_min);
        get("texture_freq_max", g.texture_freq_max);
        get("texture_contrast_min", g.texture_contrast_min);
        get("texture_contrast_max", g.texture_contrast_max);
        get("lesion_offset_min", g.lesion_offset_min);
        get("lesion_offset_max", g.lesion_offset_max);
        get("mean_contrast", g.mean_contrast);
        get("bg_gradient_amplitude", g.bg_gradient_amplitude);
        get("noise_sigma", g.noise_sigma);
        get("bg_color", g.bg_color);
        get("lesion_tint", g.lesion_tint);
        get("dominance_threshold", g.dominance_threshold);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    g.validate();
    return g;
}

json meta_to_json(const LesionMeta& m) {
    return json{{"shape", m.shape == LesionShape::kBlob ? "blob" : "ellipse"},
                {"center", {m.center_x, m.center_y}},
                {"axes", {m.axis_a, m.axis_b}},
                {"rotation", m.rotation},
                {"blob", {{"lobes", m.blob_lobes}, {"amplitude", m.blob_amp}, {"phase", m.blob_phase}}},
                {"texture",
                 {{"freq", m.texture_freq},
                  {"orientation", m.texture_orientation},
                  {"contrast", m.texture_contrast},
                  {"phase", m.texture_phase}}},
                {"lesion_offset", m.lesion_offset},
                {"bg_texture", {{"freq_x", m.bg_freq_x}, {"freq_y", m.bg_freq_y}, {"phase", m.bg_phase}}},
                {"noise_sigma", m.noise_sigma}};
}

LesionMeta meta_from_json(const json& j) {
    LesionMeta m;
    try {
        const auto shape = j.at("shape").get<std::string>();
        if (shape == "blob")
            m.shape = LesionShape::kBlob;
        else if (shape == "ellipse")
            m.shape = LesionShape::kEllipse;
        else
            throw DataError("meta: unknown shape '" + shape + "'");
        m.center_x = j.at("center").at(0);
        m.center_y = j.at("center").at(1);
        m.axis_a = j.at("axes").at(0);
        m.axis_b = j.at("axes").at(1);
        m.rotation = j.at("rotation");
        m.blob_lobes = j.at("blob").at("lobes");
        m.blob_amp = j.at("blob").at("amplitude");
        m.blob_phase = j.at("blob").at("phase");
        m.texture_freq = j.at("texture").at("freq");
        m.texture_orientation = j.at("texture").at("orientation");
        m.texture_contrast = j.at("texture").at("contrast");
        m.texture_phase = j.at("texture").at("phase");
        m.lesion_offset = j.at("lesion_offset");
        m.bg_freq_x = j.at("bg_texture").at("freq_x");
        m.bg_freq_y = j.at("bg_texture").at("freq_y");
        m.bg_phase = j.at("bg_texture").at("phase");
        m.noise_sigma = j.at("noise_sigma");
    } catch (const json::exception& e) {
        throw DataError(std::string("meta: ") + e.what());
    }
    return m;
}

namespace {

// Signed distance (pixels, along the ray from the centre) from a point to the
// lesion boundary: positive inside.
double boundary_distance(const LesionMeta& m, double px, double py) {
    const double dx = px - m.center_x, dy = py - m.center_y;
    const double rho = std::hypot(dx, dy);
    const double th = std::atan2(dy, dx);
    const double u = std::cos(th - m.rotation) / m.axis_a;
    const double v = std::sin(th - m.rotation) / m.axis_b;
    double rb = 1.0 / std::sqrt(u * u + v * v);
    if (m.shape == LesionShape::kBlob) rb *= 1.0 + m.blob_amp * std::sin(m.blob_lobes * th + m.blob_phase);
    return rb - rho;
}

}  // namespace

PairedSample generate_sample(const GeneratorConfig& g, std::uint64_t seed, std::size_t index) {
    g.validate();
    Rng rng(derive_seed(seed, index));
    const std::size_t S = g.image_size, C = g.channels;
    const double Sd = static_cast<double>(S);

    for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
        LesionMeta m;
        m.shape = rng.uniform() < g.blob_fraction ? LesionShape::kBlob : LesionShape::kEllipse;
        m.center_x = rng.uniform(g.center_margin, Sd - g.center_margin);
        m.center_y = rng.uniform(g.center_margin, Sd - g.center_margin);
        m.axis_a = rng.uniform(g.min_axis, g.max_axis);
        m.axis_b = rng.uniform(g.min_axis, g.max_axis);
        m.rotation = rng.uniform(0.0, std::numbers::pi);
        const int lobes = 3 + static_cast<int>(rng.below(3));
        const double amp = rng.uniform(g.blob_amp_min, g.blob_amp_max);
        const double bphase = rng.uniform(0.0, kTwoPi);
        if (m.shape == LesionShape::kBlob) {
            m.blob_lobes = lobes;
            m.blob_amp = amp;
            m.blob_phase = bphase;
        }
        m.texture_freq = rng.uniform(g.texture_freq_min, g.texture_freq_max);
        m.texture_orientation = rng.uniform(0.0, std::numbers::pi);
        m.texture_contrast = rng.uniform(g.texture_contrast_min, g.texture_contrast_max);
        m.texture_phase = rng.uniform(0.0, kTwoPi);
        m.lesion_offset = rng.uniform(g.lesion_offset_min, g.lesion_offset_max);
        m.bg_freq_x = rng.uniform(-1.0, 1.0);
        m.bg_freq_y = rng.uniform(-1.0, 1.0);
        m.bg_phase = rng.uniform(0.0, kTwoPi);
        m.noise_sigma = g.noise_sigma;

        Image mask(1, S, S);
        std::vector<double> alpha(S * S), bg(S * S), tex(S * S);
        const double co = std::cos(m.texture_orientation), so = std::sin(m.texture_orientation);
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                const double d = boundary_distance(m, px, py);
                const auto i = y * S + x;
                alpha[i] = std::clamp(0.5 + d, 0.0, 1.0);
                mask.data[i] = d >= 0.0 ? 1.0 : 0.0;
                bg[i] = g.bg_gradient_amplitude * std::sin(kTwoPi * (m.bg_freq_x * px + m.bg_freq_y * py) / Sd + m.bg_phase);
                tex[i] = m.texture_contrast * std::sin(kTwoPi * m.texture_freq * (px * co + py * so) / Sd + m.texture_phase);
            }
        if (mask_area(mask) < kMinMaskArea) continue;

        Image image(C, S, S);
        for (std::size_t c = 0; c < C; ++c) {
            double base = g.bg_color[c], tint = g.lesion_tint[c];
            if (C == 1) {
                base = (g.bg_color[0] + g.bg_color[1] + g.bg_color[2]) / 3.0;
                tint = (g.lesion_tint[0] + g.lesion_tint[1] + g.lesion_tint[2]) / 3.0;
            }
            for (std::size_t i = 0; i < S * S; ++i) {
                const double b = base + bg[i];
                const double l = base + m.lesion_offset * tint + tex[i];
                const double v = (1.0 - alpha[i]) * b + alpha[i] * l + g.noise_sigma * rng.normal();
                image.data[c * S * S + i] = std::clamp(v, -1.0, 1.0);
            }
        }

        const auto lum = luminance(image);
        double in_sum = 0, out_sum = 0;
        std::size_t in_n = 0;
        for (std::size_t i = 0; i < S * S; ++i) {
            if (mask.data[i] > 0.5) {
                in_sum += lum[i];
                ++in_n;
            } else {
                out_sum += lum[i];
            }
        }
        const std::size_t out_n = S * S - in_n;
        if (out_n == 0 || in_sum / in_n - out_sum / out_n < g.mean_contrast) continue;

        PairedSample s;
        s.id = sample_file_stem(index);
        s.image = std::move(image);
        s.mask = std::move(mask);
        s.meta = m;
        return s;
    }
    throw DataError("generate_sample: no valid sample after 1000 draws; check the generator config");
}

std::vector<PairedSample> generate_dataset(std::size_t n, const GeneratorConfig& g, std::uint64_t seed) {
    if (n == 0) throw ConfigError("generate_dataset: n must be >= 1");
    std::vector<PairedSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(g, seed, i));
    return out;
}

MaskTransformKind parse_mask_transform_kind(const std::string& s) {
    if (s == "scale") return MaskTransformKind::kScale;
    if (s == "translate") return MaskTransformKind::kTranslate;
    if (s == "rotate") return MaskTransformKind::kRotate;
    if (s == "elastic") return MaskTransformKind::kElastic;
    throw ConfigError("unknown mask transform '" + s + "' (scale|translate|rotate|elastic)");
}

std::string mask_transform_kind_name(MaskTransformKind k) {
    switch (k) {
        case MaskTransformKind::kScale: return "scale";
        case MaskTransformKind::kTranslate: return "translate";
        case MaskTransformKind::kRotate: return "rotate";
        case MaskTransformKind::kElastic: return "elastic";
    }
    return "scale";
}

Image transform_mask(const Image& mask, const MaskTransform& t) {
    if (mask.channels != 1) throw DataError("transform_mask: mask must have one channel");
    if (t.magnitude_min > t.magnitude_max) throw ConfigError("transform_mask: magnitude_min > magnitude_max");
    if (t.kind == MaskTransformKind::kScale && t.magnitude_min <= 0) throw ConfigError("transform_mask: scale must be > 0");
    const std::size_t area = mask_area(mask);
    if (area == 0) throw DataError("transform_mask: empty mask");
    const std::size_t H = mask.height, W = mask.width;

    double cx = 0, cy = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            if (mask.at(0, y, x) > 0.5) {
                cx += static_cast<double>(x) + 0.5;
                cy += static_cast<double>(y) + 0.5;
            }
    cx /= static_cast<double>(area);
    cy /= static_cast<double>(area);

    for (int attempt = 0; attempt < kMaxTransformAttempts; ++attempt) {
        Rng rng(derive_seed(t.seed, static_cast<std::uint64_t>(attempt)));
        const double mag = t.magnitude_min == t.magnitude_max ? t.magnitude_min : rng.uniform(t.magnitude_min, t.magnitude_max);
        const double dir = rng.uniform(0.0, kTwoPi);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        double fx[2], fy[2], ph[4];
        for (int k = 0; k < 2; ++k) {
            fx[k] = rng.uniform(-2.0, 2.0);
            fy[k] = rng.uniform(-2.0, 2.0);
        }
        for (double& p : ph) p = rng.uniform(0.0, kTwoPi);

        double expected = static_cast<double>(area);
        if (t.kind == MaskTransformKind::kScale) expected *= mag * mag;

        Image out(1, H, W);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                double sx = px, sy = py;  // inverse-mapped source point
                switch (t.kind) {
                    case MaskTransformKind::kScale:
                        sx = cx + (px - cx) / mag;
                        sy = cy + (py - cy) / mag;
                        break;
                    case MaskTransformKind::kTranslate:
                        sx = px - mag * std::cos(dir);
                        sy = py - mag * std::sin(dir);
                        break;
                    case MaskTransformKind::kRotate: {
                        const double a = -sign * mag, c = std::cos(a), s = std::sin(a);
                        sx = cx + c * (px - cx) - s * (py - cy);
                        sy = cy + s * (px - cx) + c * (py - cy);
                        break;
                    }
                    case MaskTransformKind::kElastic: {
                        const double ux = (fx[0] * px + fy[0] * py) / static_cast<double>(W);
                        const double uy = (fx[1] * px + fy[1] * py) / static_cast<double>(H);
                        sx = px + mag * std::sin(kTwoPi * ux + ph[0]) * std::cos(kTwoPi * uy + ph[1]);
                        sy = py + mag * std::sin(kTwoPi * uy + ph[2]) * std::cos(kTwoPi * ux + ph[3]);
                        break;
                    }
                }
                const double fxs = std::floor(sx), fys = std::floor(sy);
                if (fxs < 0 || fys < 0 || fxs >= static_cast<double>(W) || fys >= static_cast<double>(H)) continue;
                out.at(0, y, x) = mask.at(0, static_cast<std::size_t>(fys), static_cast<std::size_t>(fxs)) > 0.5 ? 1.0 : 0.0;
            }
        const auto got = static_cast<double>(mask_area(out));
        if (got >= static_cast<double>(kMinMaskArea) && got >= 0.75 * expected) return out;
    }
    throw DataError("transform_mask: no valid mask after 100 attempts");
}

std::string sample_file_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", index);
    return buf;
}

void save_dataset(const fs::path& dir, const std::vector<PairedSample>& samples) {
    std::error_code ec;
    for (const char* sub : {"images", "masks", "meta"}) {
        fs::create_directories(dir / sub, ec);
        if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto stem = s.id.empty() ? sample_file_stem(i) : s.id;
        write_png(dir / "images" / (stem + ".png"), s.image);
        write_mask_png(dir / "masks" / (stem + ".png"), s.mask);
        if (s.meta) {
            std::ofstream f(dir / "meta" / (stem + ".json"));
            if (!f) throw IoError("cannot write meta for " + stem);
            f << meta_to_json(*s.meta).dump(2) << '\n';
        }
    }
}

PairedSample load_sample(const fs::path& image, const fs::path& mask, const fs::path& meta) {
    PairedSample s;
    s.id = image.stem().string();
    s.image = read_png(image);
    s.mask = read_mask_png(mask);
    if (s.image.height != s.mask.height || s.image.width != s.mask.width)
        throw DataError("dimension mismatch between " + image.string() + " and " + mask.string());
    if (fs::exists(meta)) {
        std::ifstream f(meta);
        if (!f) throw IoError("cannot read " + meta.string());
        json j;
        try {
            j = json::parse(f);
        } catch (const json::exception& e) {
            throw DataError("corrupt meta " + meta.string() + ": " + e.what());
        }
        s.meta = meta_from_json(j);
    }
    return s;
}

std::vector<PairedSample> load_dataset(const fs::path& dir) {
    const auto images = dir / "images";
    if (!fs::is_directory(images)) throw IoError("no images/ directory in " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no images in " + images.string());
    std::vector<PairedSample> out;
    out.reserve(files.size());
    for (const auto& p : files) {
        const auto stem = p.stem().string();
        const auto mask = dir / "masks" / (stem + ".png");
        if (!fs::exists(mask)) throw DataError("missing mask for " + stem);
        out.push_back(load_sample(p, mask, dir / "meta" / (stem + ".json")));
    }
    const auto& first = out.front().image;
    for (const auto& s : out)
        if (s.image.channels != first.channels || s.image.height != first.height || s.image.width != first.width)
            throw DataError("image " + s.id + " has different dimensions from " + out.front().id);
    return out;
}

}  // namespace dualprior
