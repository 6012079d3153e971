#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "factorkit/config.hpp"
#include "factorkit/evaluation.hpp"
#include "factorkit/losses.hpp"
#include "factorkit/manifest.hpp"
#include "factorkit/training.hpp"

namespace py = pybind11;
using namespace factorkit;

namespace {

Tensor<float> tensor_from(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    Tensor<float> t = Tensor<float>::uninit(shape);
    std::memcpy(t.ptr(), a.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    return t;
}

Tensor<double> dtensor_from(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
    Tensor<double> t = Tensor<double>::uninit(shape);
    std::memcpy(t.ptr(), a.data(), sizeof(double) * static_cast<size_t>(t.numel()));
    return t;
}

py::array_t<float> array_from(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> a(shape);
    std::memcpy(a.mutable_data(), t.ptr(), sizeof(float) * static_cast<size_t>(t.numel()));
    return a;
}

py::dict metrics_dict(const evaluation::MetricsReport& m) {
    py::dict d;
    d["mse"] = m.mse;
    d["c_attr0"] = m.c_attr0;
    d["c_attr1"] = m.c_attr1;
    d["enc_cls_acc"] = m.enc_cls_acc;
    d["aux_probe_acc"] = m.aux_probe_acc;
    d["n_eval"] = m.n_eval;
    return d;
}

// Bundle plus generator state for noise draws from python.
struct Model {
    models::NetworkBundle<float> bundle;
    std::string config_text;
    Rng rng{12345};

    static Model load(const std::string& checkpoint_path) {
        auto ck = training::load_checkpoint_raw(checkpoint_path);
        Model model;
        model.bundle = std::move(ck.bundle);
        model.config_text = ck.config_text;
        return model;
    }

    py::dict encode(const py::array_t<float, py::array::c_style | py::array::forcecast>& images,
                    std::optional<py::array_t<float, py::array::c_style | py::array::forcecast>>
                        noise) {
        const auto x = tensor_from(images);
        std::optional<Tensor<float>> eps;
        if (noise.has_value()) eps = tensor_from(*noise);
        const auto post = models::encode(bundle, x, eps, &rng);
        py::dict d;
        d["mu"] = array_from(post.mu);
        d["log_var"] = array_from(post.log_var);
        d["z_hat"] = array_from(post.z_hat);
        d["y_hat"] = array_from(post.y_hat);
        d["eps"] = array_from(post.eps);
        return d;
    }

    py::array_t<float> decode(
        const py::array_t<float, py::array::c_style | py::array::forcecast>& z,
        const py::array_t<float, py::array::c_style | py::array::forcecast>& y) {
        return array_from(models::decode(bundle, tensor_from(z), tensor_from(y)));
    }

    py::array_t<float> edit(
        const py::array_t<float, py::array::c_style | py::array::forcecast>& images, int target) {
        return array_from(evaluation::edit_attribute(bundle, tensor_from(images), target));
    }

    py::dict evaluate(const std::string& data_path, uint64_t probe_seed) {
        const auto data = synthdata::load_dataset(data_path);
        models::OracleClassifier oracle;
        return metrics_dict(evaluation::evaluate(bundle, data, oracle, probe_seed));
    }
};

}  // namespace

PYBIND11_MODULE(_factorkit, m) {
    m.doc() = "Conditional VAE-GAN with adversarial information factorization";
    m.attr("__version__") = cli::kVersion;

    m.def(
        "generate_dataset",
        [](int64_t n, uint64_t seed, int size, int channels, const std::string& out) {
            const auto data =
                synthdata::generate_dataset(n, seed, synthdata::SpecRanges{}, size, channels);
            if (!out.empty()) synthdata::save_dataset(data, out);
            py::dict d;
            d["images"] = array_from(data.images);
            py::array_t<uint8_t> labels(static_cast<py::ssize_t>(data.labels.size()));
            std::memcpy(labels.mutable_data(), data.labels.data(), data.labels.size());
            d["labels"] = labels;
            d["n_train"] = data.manifest.n_train;
            d["n_val"] = data.manifest.n_val;
            d["n_test"] = data.manifest.n_test;
            d["seed"] = data.manifest.seed;
            return d;
        },
        py::arg("n"), py::arg("seed"), py::arg("size") = 32, py::arg("channels") = 3,
        py::arg("out") = "");

    m.def(
        "pixel_rule_labels",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& images) {
            const auto labels = synthdata::pixel_rule_labels(tensor_from(images));
            py::array_t<uint8_t> out(static_cast<py::ssize_t>(labels.size()));
            std::memcpy(out.mutable_data(), labels.data(), labels.size());
            return out;
        },
        py::arg("images"));

    m.def(
        "bce",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& target,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& prediction) {
            return losses::bce(dtensor_from(target), dtensor_from(prediction));
        },
        py::arg("target"), py::arg("prediction"));

    m.def(
        "kl_divergence",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mu,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& log_var) {
            return losses::kl_divergence(dtensor_from(mu), dtensor_from(log_var));
        },
        py::arg("mu"), py::arg("log_var"));

    m.def(
        "gan_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& c_real,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& c_rec,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& c_prior) {
            return losses::gan_loss(dtensor_from(c_real), dtensor_from(c_rec),
                                    dtensor_from(c_prior));
        },
        py::arg("c_real"), py::arg("c_rec"), py::arg("c_prior"));

    m.def(
        "train",
        [](const std::string& config_text, const std::string& data_path,
           const std::string& out_dir) {
            const auto cfg = config::parse_config(config_text);
            const auto data = synthdata::load_dataset(data_path);
            const auto result = training::train(data, cfg, out_dir);
            py::dict d;
            d["final_val_rec"] = result.final_val.rec;
            d["final_val_mse"] = result.final_val_mse;
            d["checkpoints"] = result.checkpoint_paths;
            return d;
        },
        py::arg("config_text"), py::arg("data_path"), py::arg("out_dir"));

    py::class_<Model>(m, "Model")
        .def_static("load", &Model::load, py::arg("checkpoint_path"))
        .def("encode", &Model::encode, py::arg("images"), py::arg("noise") = std::nullopt)
        .def("decode", &Model::decode, py::arg("z"), py::arg("y"))
        .def("edit", &Model::edit, py::arg("images"), py::arg("target"))
        .def("evaluate", &Model::evaluate, py::arg("data_path"), py::arg("probe_seed") = 7)
        .def_property_readonly("config_text", [](const Model& m_) { return m_.config_text; });
}
