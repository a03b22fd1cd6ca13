#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <numeric>
#include <sstream>

#include "salgen/config.hpp"
#include "salgen/data.hpp"
#include "salgen/evaluate.hpp"
#include "salgen/losses.hpp"
#include "salgen/metrics.hpp"
#include "salgen/trainer.hpp"

namespace py = pybind11;
using namespace salgen;

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  auto src = t.data();
  std::copy(src.begin(), src.end(), out.mutable_data());
  return out;
}

// 2-D maps are accepted as [1,H,W].
Tensor as_map(const Array& a) {
  Tensor t = to_tensor(a);
  if (t.ndim() == 2) return Tensor::from({1, t.dim(0), t.dim(1)}, t.to_vector());
  return t;
}

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["id"] = s.id;
  d["image"] = to_array(s.image);
  d["gt"] = to_array(s.gt);
  if (s.has_depth()) d["depth"] = to_array(s.depth);
  if (s.has_scribble()) {
    d["scribble_target"] = to_array(s.scribble_target);
    d["scribble_mask"] = to_array(s.scribble_mask);
  }
  return d;
}

class PyModel {
 public:
  explicit PyModel(const std::string& path) : model_(load_model(path)) {}

  std::string config() const { return to_json(model_->config).dump(); }

  // Predictive mean and entropy for a dataset slice, keyed like `salgen eval`.
  py::tuple predict(const std::string& manifest, std::vector<std::size_t> indices, int samples,
                    std::uint64_t seed) const {
    Dataset ds = load_dataset(manifest);
    if (indices.empty()) {
      indices.resize(ds.size());
      std::iota(indices.begin(), indices.end(), 0);
    }
    Batch b = make_batch(ds, indices);
    std::vector<std::uint64_t> keys(indices.begin(), indices.end());
    Uncertainty u = salgen::predict(*model_, b, keys, samples, seed);
    return py::make_tuple(to_array(u.mean), to_array(u.entropy));
  }

 private:
  std::unique_ptr<Model> model_;
};

}  // namespace

PYBIND11_MODULE(_salgen, m) {
  m.doc() = "Bindings for the salgen saliency library";
  m.attr("__version__") = SALGEN_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("mae", [](const Array& p, const Array& g) { return mae(as_map(p), as_map(g)); });
  m.def("f_measure", [](const Array& p, const Array& g) { return f_measure_mean(as_map(p), as_map(g)); });
  m.def("e_measure", [](const Array& p, const Array& g) { return e_measure_mean(as_map(p), as_map(g)); });
  m.def("s_measure", [](const Array& p, const Array& g) { return s_measure(as_map(p), as_map(g)); },
        py::arg("pred"), py::arg("gt"));

  m.def("structure_loss", [](const Array& logits, const Array& y) {
    NoGradGuard ng;
    return structure_loss(to_tensor(logits), to_tensor(y)).item();
  });
  m.def("edge_weight", [](const Array& y) {
    NoGradGuard ng;
    return to_array(edge_weight(to_tensor(y)));
  });

  m.def("chi2_distance", &chi2_distance);
  m.def("global_contrast", [](const Array& image, const Array& gt) {
    return global_contrast(to_tensor(image), as_map(gt));
  });

  m.def(
      "synth",
      [](std::uint64_t seed, int count, int size, double contrast, bool depth, bool scribble) {
        SynthSpec s;
        s.seed = seed;
        s.count = count;
        s.size = size;
        s.contrast = contrast;
        s.with_depth = depth;
        s.with_scribble = scribble;
        py::list out;
        for (const auto& smp : synth_generate(s).samples) out.append(sample_dict(smp));
        return out;
      },
      py::arg("seed") = 0, py::arg("count") = 8, py::arg("size") = 64, py::arg("contrast") = 1.0,
      py::arg("depth") = false, py::arg("scribble") = false);
  m.def(
      "write_synth",
      [](const std::string& dir, std::uint64_t seed, int count, int size, bool depth, bool scribble) {
        SynthSpec s;
        s.seed = seed;
        s.count = count;
        s.size = size;
        s.with_depth = depth;
        s.with_scribble = scribble;
        save_dataset(synth_generate(s), dir);
        return dir + "/manifest.json";
      },
      py::arg("dir"), py::arg("seed") = 0, py::arg("count") = 8, py::arg("size") = 64, py::arg("depth") = false,
      py::arg("scribble") = false);

  m.def("default_config", [] { return to_json(TrainConfig{}).dump(); });
  m.def("validate_config", [](const std::string& text) {
    return to_json(config_from_json(nlohmann::json::parse(text))).dump();
  });
  m.def("config_hash", [](const std::string& text) { return config_hash(nlohmann::json::parse(text)); });

  m.def(
      "train",
      [](const std::string& config, const std::string& manifest, const std::string& checkpoint) {
        TrainConfig cfg = config_from_json(nlohmann::json::parse(config));
        Dataset ds = load_dataset(manifest);
        std::ostringstream log;
        {
          py::gil_scoped_release release;
          Trainer t(cfg, ds);
          t.run(&log, checkpoint);
        }
        return log.str();
      },
      py::arg("config"), py::arg("manifest"), py::arg("checkpoint"));

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& manifest, int samples, std::uint64_t seed) {
        auto model = load_model(checkpoint);
        Dataset ds = load_dataset(manifest);
        int n = samples > 0 ? samples : (model->config.generative() ? model->config.eval_samples : 1);
        return evaluate_dataset(model_predictor(*model, n, seed), ds).to_json().dump();
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("samples") = 0, py::arg("seed") = 0);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("config_json", &PyModel::config)
      .def("predict", &PyModel::predict, py::arg("manifest"), py::arg("indices") = std::vector<std::size_t>{},
           py::arg("samples") = 1, py::arg("seed") = 0);
}
