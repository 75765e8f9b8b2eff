#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kws/evaluation.hpp"
#include "kws/network.hpp"
#include "kws/streaming.hpp"
#include "kws/training.hpp"
#include "kws/verify.hpp"

namespace py = pybind11;
using namespace kws;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array (features x frames)");
  const auto r = a.unchecked<2>();
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  for (py::ssize_t i = 0; i < r.shape(0); ++i)
    for (py::ssize_t j = 0; j < r.shape(1); ++j) m(i, j) = r(i, j);
  return m;
}

py::array_t<float> to_array(const Matrix& m) {
  py::array_t<float> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

AudioBuffer to_audio(const FloatArray& samples, std::uint32_t rate) {
  if (samples.ndim() != 1) throw ShapeError("expected 1-d audio samples");
  AudioBuffer a;
  a.sample_rate = rate;
  a.samples.assign(samples.data(), samples.data() + samples.size());
  return a;
}

py::dict accounting(const ModelConfig& c) {
  const auto p = count_params(c);
  const auto m = count_macs(c);
  const auto rf = receptive_field(c);
  py::dict d;
  d["params"] = p.total();
  d["params_norm"] = p.norm;
  d["macs"] = m.total();
  d["receptive_field_ms"] = py::make_tuple(rf.past_ms, rf.future_ms);
  d["delay_ms"] = output_delay(c);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Streaming keyword spotting with SVDF and stacked 1D CNN layers";

  // Translators run newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  py::enum_<Arch>(m, "Arch").value("svdf", Arch::svdf).value("s1dcnn", Arch::s1dcnn);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("paper", &ModelConfig::paper, py::arg("lookahead") = 0, py::arg("arch") = Arch::s1dcnn)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("context", &ModelConfig::context)
      .def_readwrite("depth", &ModelConfig::depth)
      .def_readwrite("filters", &ModelConfig::filters)
      .def_readwrite("memory", &ModelConfig::memory)
      .def_readwrite("lookahead", &ModelConfig::lookahead)
      .def_readwrite("classes", &ModelConfig::classes)
      .def_readwrite("arch", &ModelConfig::arch)
      .def("input_dim", &ModelConfig::input_dim)
      .def("validate", &ModelConfig::validate);

  m.def("accounting", &accounting, "Parameter, MAC and receptive-field figures of a config");

  py::class_<Model>(m, "Model")
      .def_readonly("config", &Model::config)
      .def("__eq__", [](const Model& a, const Model& b) { return a == b; });

  m.def("build", [](const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    return build(c, rng);
  }, py::arg("config"), py::arg("seed") = 0);
  m.def("load", [](const std::filesystem::path& p) { return load(p); });
  m.def("save", [](const Model& model, const std::filesystem::path& p) { save(model, p); });
  m.def("reduce_svdf_model", &reduce_svdf_model);

  m.def("forward", [](const Model& model, const FloatArray& feats) {
    return to_array(forward(model, to_matrix(feats)));
  }, "Posteriors (classes x frames) of context-stacked features");

  m.def("extract_features", [](const FloatArray& samples, std::uint32_t rate) {
    return to_array(extract_features(to_audio(samples, rate)));
  }, py::arg("samples"), py::arg("sample_rate") = kSampleRate);

  m.def("stream_scores", [](const Model& model, const FloatArray& mfcc) {
    std::vector<float> out;
    for (const auto& s : stream_scores(model, to_matrix(mfcc))) out.push_back(s.smoothed);
    return out;
  }, "Smoothed scores of an MFCC sequence through the streaming path");

  m.def("batch_smoothed_scores", [](const Model& model, const FloatArray& mfcc) {
    return batch_smoothed_scores(model, to_matrix(mfcc));
  });

  m.def("verify_equivalence", [](std::size_t seeds, std::uint64_t seed, bool control) {
    const auto r = verify_equivalence(seeds, seed, control);
    return py::make_tuple(r.seeds, r.max_deviation);
  }, py::arg("seeds") = 100, py::arg("seed") = 0, py::arg("bias_control") = false);

  m.def("frr_at_fa", [](const std::vector<std::tuple<float, float, float>>& pts, double target) {
    std::vector<DetPoint> det;
    for (const auto& [t, f, a] : pts) det.push_back(DetPoint{t, f, a});
    return frr_at_fa(det, target);
  }, py::arg("det"), py::arg("target_fa_per_hour") = 1.0);
}
