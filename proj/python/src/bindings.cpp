#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

#include "lktcn/checkpoint.hpp"
#include "lktcn/errors.hpp"
#include "lktcn/gradcheck.hpp"
#include "lktcn/model.hpp"
#include "lktcn/ops.hpp"

namespace py = pybind11;
using namespace lktcn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ModelConfig config_from(const py::dict& d) {
  ModelConfig c;
  for (const auto& [k, v] : d) {
    const auto key = py::str(k).cast<std::string>();
    std::string value = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
    if (!c.set(key, value)) throw py::key_error("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

py::dict config_to(const ModelConfig& c) {
  py::dict d;
  for (const auto& [k, v] : c.to_kv()) d[py::str(k)] = v;
  return d;
}

/// Double-precision model handle for inspection from Python.
class Model {
 public:
  Model(const py::dict& config, std::uint64_t seed) : config_(config_from(config)) {
    Rng rng(seed, 0);
    params_ = init_params<double>(config_, rng);
  }
  Model(ModelConfig config, ModelParams<double> params) : config_(std::move(config)), params_(std::move(params)) {}

  static Model load(const std::string& path) {
    const Checkpoint ck = load_checkpoint(path);
    return Model(ck.config, params_from_checkpoint<double>(ck));
  }

  void save(const std::string& path) const { save_checkpoint(path, make_checkpoint(config_, params_)); }

  Array forward(const Array& x, bool train, std::uint64_t seed) {
    Rng rng(seed, 2);
    return to_array(lktcn::forward(to_tensor(x), params_, config_, train ? Mode::Train : Mode::Eval, rng));
  }

  Array forward_merged(const Array& x) const {
    return to_array(lktcn::forward(to_tensor(x), merge_reparam(params_, config_), config_));
  }

  void zero_blocks() { lktcn::zero_blocks(params_); }
  py::dict config() const { return config_to(config_); }
  std::size_t parameters() const { return param_count(config_); }

  py::dict state() const {
    py::dict d;
    for (const auto& [n, t] : params_.named_parameters()) d[py::str(n)] = to_array(t);
    for (const auto& [n, t] : params_.named_buffers()) d[py::str(n)] = to_array(t);
    return d;
  }

 private:
  ModelConfig config_;
  ModelParams<double> params_;
};

}  // namespace

PYBIND11_MODULE(_lktcn, m) {
  m.doc() = "Numeric core of the lktcn forecaster (double precision).";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "conv1d",
      [](const Array& x, const Array& w, const Array& b, std::size_t stride, std::size_t pad_left,
         std::size_t pad_right, std::size_t groups, bool repeat_last) {
        if (repeat_last && pad_left != 0) throw std::invalid_argument("repeat_last pads on the right only");
        const Padding pad = repeat_last ? Padding::repeat_last(pad_right) : Padding::zeros(pad_left, pad_right);
        return to_array(ops::conv1d_grouped(to_tensor(x), to_tensor(w), to_tensor(b), stride, pad, groups));
      },
      py::arg("x"), py::arg("weight"), py::arg("bias"), py::arg("stride") = 1, py::arg("pad_left") = 0,
      py::arg("pad_right") = 0, py::arg("groups") = 1, py::arg("repeat_last") = false,
      "Grouped 1-D convolution of x [B, Cin, N] with weight [Cout, Cin/groups, k].");

  m.def("gelu", [](const Array& x) { return to_array(ops::gelu(to_tensor(x))); }, py::arg("x"));

  m.def(
      "param_count", [](const py::dict& config) { return param_count(config_from(config)); },
      py::arg("config") = py::dict());

  m.def(
      "default_config", [] { return config_to(ModelConfig{}); }, "Every model key with its default value.");

  m.def(
      "gradcheck",
      [](unsigned seed) {
        const GradCheckReport r = run_gradient_suite(seed);
        py::list cases;
        for (const auto& e : r.entries) cases.append(py::make_tuple(e.op, e.case_name, e.max_rel_error, e.threshold));
        return py::make_tuple(r.passed(), cases, r.uncovered_ops);
      },
      py::arg("seed") = 0, "Returns (passed, [(op, case, max_rel_error, threshold)], uncovered_ops).");

  py::class_<Model>(m, "Model")
      .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config") = py::dict(), py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("path"))
      .def("save", &Model::save, py::arg("path"))
      .def("forward", &Model::forward, py::arg("x"), py::arg("train") = false, py::arg("seed") = 0,
           "Forecast [B, M, T] from x [B, M, L]. Train mode updates batch-norm running statistics.")
      .def("forward_merged", &Model::forward_merged, py::arg("x"),
           "Eval forecast with the re-parameterized single-kernel blocks.")
      .def("zero_blocks", &Model::zero_blocks)
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("param_count", &Model::parameters)
      .def("state", &Model::state, "Parameters and buffers by name.");
}
