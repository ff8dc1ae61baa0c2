#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "cli.hpp"
#include "dualprior/checkpoint.hpp"
#include "dualprior/dataset.hpp"
#include "dualprior/error.hpp"
#include "dualprior/eval.hpp"
#include "dualprior/sampler.hpp"
#include "dualprior/schedule.hpp"
#include "dualprior/texture.hpp"
#include "dualprior/trainer.hpp"

namespace py = pybind11;
using namespace dualprior;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Image& img) {
    Array a({img.channels, img.height, img.width});
    std::memcpy(a.mutable_data(), img.data.data(), img.data.size() * sizeof(double));
    return a;
}

/// Accepts [H, W] or [C, H, W].
Image to_image(const Array& a) {
    Image img;
    if (a.ndim() == 2) img = Image(1, a.shape(0), a.shape(1));
    else if (a.ndim() == 3) img = Image(a.shape(0), a.shape(1), a.shape(2));
    else throw ShapeError("expected a [H, W] or [C, H, W] array");
    std::memcpy(img.data.data(), a.data(), img.data.size() * sizeof(double));
    return img;
}

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array a(shape);
    std::memcpy(a.mutable_data(), t.data().data(), t.numel() * sizeof(double));
    return a;
}

std::vector<FeatureVector> to_features(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("feature sets are [N, D] arrays");
    std::vector<FeatureVector> out(a.shape(0), FeatureVector(a.shape(1)));
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) out[i][j] = a.at(i, j);
    return out;
}

json to_json(const py::object& o) {
    if (o.is_none()) return json::object();
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::object from_json(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict sample_dict(const PairedSample& s) {
    py::dict d;
    d["id"] = s.id;
    d["image"] = to_array(s.image);
    d["mask"] = to_array(s.mask);
    d["meta"] = s.meta ? from_json(meta_to_json(*s.meta)) : py::none();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bindings for the dualprior C++ core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    m.def("run_cli", &cli::run_cli, py::arg("args"), "Run a dualprior command; returns the exit code.");

    m.def(
        "generate_dataset",
        [](std::size_t n, std::uint64_t seed, const py::object& config) {
            const auto g = generator_config_from_json(to_json(config));
            py::list out;
            for (const auto& s : generate_dataset(n, g, seed)) out.append(sample_dict(s));
            return out;
        },
        py::arg("n"), py::arg("seed"), py::arg("config") = py::none());
    m.def("generator_defaults", [] { return from_json(generator_config_to_json(GeneratorConfig{})); });
    m.def(
        "load_dataset",
        [](const std::string& dir) {
            py::list out;
            for (const auto& s : load_dataset(dir)) out.append(sample_dict(s));
            return out;
        },
        py::arg("dir"));
    m.def(
        "transform_mask",
        [](const Array& mask, const std::string& kind, double lo, double hi, std::uint64_t seed) {
            return to_array(transform_mask(to_image(mask), {parse_mask_transform_kind(kind), lo, hi, seed}));
        },
        py::arg("mask"), py::arg("kind"), py::arg("magnitude_min"), py::arg("magnitude_max"), py::arg("seed"));

    m.def(
        "forward_diffuse",
        [](const Array& z0, std::size_t t, const Array& eps, std::size_t T) {
            const auto s = make_linear_schedule(T, 1e-4, 0.02);
            return from_tensor(forward_diffuse(to_tensor(z0), t, to_tensor(eps), s));
        },
        py::arg("z0"), py::arg("t"), py::arg("eps"), py::arg("T") = 200);
    m.def(
        "single_step_x0",
        [](const Array& zt, std::size_t t, const Array& eps, std::size_t T) {
            const auto s = make_linear_schedule(T, 1e-4, 0.02);
            return from_tensor(single_step_x0(to_tensor(zt), t, to_tensor(eps), s));
        },
        py::arg("z_t"), py::arg("t"), py::arg("eps_hat"), py::arg("T") = 200);
    m.def("gate_w_a", &gate_w_a, py::arg("k"), py::arg("t"), py::arg("k_tau"), py::arg("t_tau"));

    m.def(
        "frechet_distance", [](const Array& a, const Array& b) { return frechet_distance(to_features(a), to_features(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "kid", [](const Array& a, const Array& b) { return kid(to_features(a), to_features(b)); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "diversity", [](const Array& a) { return diversity(to_features(a)); }, py::arg("features"));
    m.def(
        "dice_iou",
        [](const Array& pred, const Array& truth) {
            const auto r = dice_iou(to_image(pred), to_image(truth));
            return py::make_tuple(r.dice, r.iou);
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "image_features",
        [](const Array& image, const Array& mask) {
            return image_features(to_image(image), to_image(mask), GeneratorConfig{});
        },
        py::arg("image"), py::arg("mask"));
    m.def(
        "texture_fidelity",
        [](const Array& image, const Array& mask) {
            const auto f = texture_fidelity(to_image(image), to_image(mask), GeneratorConfig{});
            py::dict d;
            d["frequency_term"] = f.frequency_term;
            d["contrast_term"] = f.contrast_term;
            d["total"] = f.total;
            return d;
        },
        py::arg("image"), py::arg("mask"));

    m.def(
        "sample",
        [](const std::string& ckpt, const py::list& masks, const std::vector<std::uint64_t>& seeds, std::size_t steps,
           double lambda) {
            auto ck = load_checkpoint(ckpt);
            SampleConfig sc;
            sc.steps = steps;
            sc.lambda = lambda;
            std::vector<Image> ms;
            for (const auto& mk : masks) ms.push_back(to_image(mk.cast<Array>()));
            std::vector<Image> out;
            {
                py::gil_scoped_release release;
                out = sample_images(*ck.model, ms, seeds, sc, ck.schedule);
            }
            py::list res;
            for (const auto& img : out) res.append(to_array(img));
            return res;
        },
        py::arg("checkpoint"), py::arg("masks"), py::arg("seeds"), py::arg("steps") = 50, py::arg("guidance") = 9.0);
}
