#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tinyde/cim.hpp"
#include "tinyde/cost.hpp"
#include "tinyde/data.hpp"
#include "tinyde/ensemble.hpp"
#include "tinyde/errors.hpp"
#include "tinyde/training.hpp"
#include "tinyde/uncertainty.hpp"

namespace py = pybind11;
using namespace tinyde;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Dataset make_dataset(const Array& x, const Array& y, Task task) {
  Dataset d;
  d.task = task;
  d.features = to_tensor(x);
  Tensor t = to_tensor(y);
  d.targets = t.rank() == 1 ? t.reshape({t.size(), 1}) : t;
  d.validate();
  return d;
}

TrainConfig make_train_config(std::size_t epochs, std::size_t batch_size, double lr, const std::string& optimizer,
                              std::uint64_t seed, bool bootstrap, Task task) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.optimizer.learning_rate = lr;
  c.optimizer.kind = parse_optimizer(optimizer);
  c.seed = seed;
  c.bootstrap = bootstrap;
  c.loss = task == Task::classification ? LossKind::cross_entropy : LossKind::mse;
  return c;
}

py::list log_to_list(const TrainLog& log) {
  py::list out;
  for (const auto& e : log.epochs) out.append(py::make_tuple(e.epoch, e.train_loss, e.eval_metric));
  return out;
}

py::dict census_to_dict(const CostCensus& c) {
  py::dict d;
  d["method"] = to_string(c.method);
  d["members"] = c.members;
  d["learnable_params"] = c.learnable_params;
  d["total_params"] = c.total_params;
  d["learnable_norm_params"] = c.learnable_norm_params;
  d["macs"] = c.macs;
  d["forward_passes"] = c.forward_passes;
  d["relative_memory"] = py::make_tuple(c.relative_memory.num, c.relative_memory.den);
  d["relative_latency"] = py::make_tuple(c.relative_latency.num, c.relative_latency.den);
  return d;
}

LayerSpec spec_from(const py::object& spec) {
  if (py::isinstance<py::str>(spec)) {
    const auto s = spec.cast<std::string>();
    if (!s.empty() && s.front() == '{') return layer_spec_from_json(nlohmann::json::parse(s));
    return load_layer_spec(s);
  }
  return load_layer_spec(spec.cast<std::filesystem::path>());
}

StageQuant stage(std::optional<unsigned> bits, double lo, double hi) {
  StageQuant q;
  q.bits = bits;
  q.lo = lo;
  q.hi = hi;
  return q;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shared-weight ensembles whose members differ only in normalization parameters";
  m.attr("__version__") = TINYDE_VERSION;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<ValueError>(m, "ValueError", base.ptr());
  py::register_exception<ModeError>(m, "ModeError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  py::enum_<Task>(m, "Task").value("regression", Task::regression).value("classification", Task::classification);
  py::enum_<InferenceMode>(m, "InferenceMode")
      .value("sequential", InferenceMode::sequential)
      .value("parallel", InferenceMode::parallel);
  py::enum_<NormKind>(m, "NormKind").value("batch", NormKind::batch).value("layer", NormKind::layer);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](std::size_t inputs, std::vector<std::size_t> hidden, std::size_t outputs, std::size_t members,
                       NormKind norm_kind, Task task) {
             ModelConfig c;
             c.inputs = inputs;
             c.hidden = std::move(hidden);
             c.outputs = outputs;
             c.members = members;
             c.norm_kind = norm_kind;
             c.task = task;
             c.validate();
             return c;
           }),
           py::arg("inputs"), py::arg("hidden"), py::arg("outputs"), py::arg("members") = 1,
           py::arg("norm_kind") = NormKind::batch, py::arg("task") = Task::regression)
      .def_readwrite("inputs", &ModelConfig::inputs)
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("outputs", &ModelConfig::outputs)
      .def_readwrite("members", &ModelConfig::members)
      .def_readwrite("norm_kind", &ModelConfig::norm_kind)
      .def_readwrite("task", &ModelConfig::task)
      .def_readwrite("norm_eps", &ModelConfig::norm_eps)
      .def_readwrite("norm_momentum", &ModelConfig::norm_momentum);

  py::class_<TinyDEModel>(m, "TinyDEModel")
      .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &TinyDEModel::config)
      .def_property_readonly("members", &TinyDEModel::members)
      .def_property_readonly("mode", &TinyDEModel::mode)
      .def_property_readonly("counters", &TinyDEModel::counters)
      .def("active_member", &TinyDEModel::active_member)
      .def("advance_counters", &TinyDEModel::advance_counters)
      .def("reset_counters", &TinyDEModel::reset_counters)
      .def("select_member", &TinyDEModel::select_member)
      .def(
          "forward_member",
          [](TinyDEModel& model, const Array& x, bool train) {
            return to_array(model.forward_member(to_tensor(x), train ? Mode::train : Mode::eval));
          },
          py::arg("x"), py::arg("train") = false)
      .def(
          "forward_all_sequential",
          [](TinyDEModel& model, const Array& x, bool train) {
            return to_array(model.forward_all_sequential(to_tensor(x), train ? Mode::train : Mode::eval));
          },
          py::arg("x"), py::arg("train") = false)
      .def(
          "forward_parallel",
          [](TinyDEModel& model, const Array& x, bool train) {
            const Tensor t = to_tensor(x);
            return to_array(train ? model.forward_parallel(t, Mode::train)
                                  : std::as_const(model).forward_parallel(t));
          },
          py::arg("x"), py::arg("train") = false)
      .def("freeze_shared", &TinyDEModel::freeze_shared)
      .def("shared_frozen", &TinyDEModel::shared_frozen)
      .def("reinit_norm_member", &TinyDEModel::reinit_norm_member)
      .def("to_parallel", &TinyDEModel::to_parallel)
      .def("to_sequential", &TinyDEModel::to_sequential)
      .def("shared_parameter_count", &TinyDEModel::shared_parameter_count)
      .def("params",
           [](const TinyDEModel& model) {
             py::dict d;
             for (const auto& [name, value] : model.export_params()) d[py::str(name)] = to_array(value);
             return d;
           })
      .def(
          "save",
          [](const TinyDEModel& model, const std::filesystem::path& path, const std::string& format) {
            if (format != "binary" && format != "json") throw ValueError("format must be 'binary' or 'json'");
            save_checkpoint(model, path, format == "json" ? CheckpointFormat::json : CheckpointFormat::binary);
          },
          py::arg("path"), py::arg("format") = "binary")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("__eq__", [](const TinyDEModel& a, const TinyDEModel& b) { return a == b; });

  m.def(
      "predict",
      [](TinyDEModel& model, const Array& x) {
        const Prediction p = predict(model, to_tensor(x));
        return py::make_tuple(to_array(p.mean), to_array(p.samples));
      },
      py::arg("model"), py::arg("x"), "Eval-mode ensemble prediction; returns (mean [B,K], samples [M,B,K]).");

  m.def(
      "train_two_phase",
      [](TinyDEModel& model, const Array& x, const Array& y, std::size_t epochs, std::size_t batch_size, double lr,
         const std::string& optimizer, std::uint64_t seed, bool bootstrap, bool retrain_member0) {
        const Dataset data = make_dataset(x, y, model.task());
        const TrainConfig cfg = make_train_config(epochs, batch_size, lr, optimizer, seed, bootstrap, model.task());
        py::list logs;
        for (const auto& log : train_two_phase(model, data, cfg, retrain_member0)) logs.append(log_to_list(log));
        return logs;
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epochs") = 40, py::arg("batch_size") = 32,
      py::arg("lr") = 1e-3, py::arg("optimizer") = "adam", py::arg("seed") = 0, py::arg("bootstrap") = false,
      py::arg("retrain_member0") = false);

  m.def(
      "train_single_shot",
      [](TinyDEModel& model, const Array& x, const Array& y, std::size_t epochs, std::size_t batch_size, double lr,
         const std::string& optimizer, std::uint64_t seed) {
        const Dataset data = make_dataset(x, y, model.task());
        return log_to_list(
            train_single_shot(model, data, make_train_config(epochs, batch_size, lr, optimizer, seed, false, model.task())));
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epochs") = 40, py::arg("batch_size") = 32,
      py::arg("lr") = 1e-3, py::arg("optimizer") = "adam", py::arg("seed") = 0);

  m.def("predictive_entropy", [](const Array& p) { return to_array(predictive_entropy(to_tensor(p))); });
  m.def("max_disagreement", [](const Array& p) {
    const Disagreement d = max_disagreement(to_tensor(p));
    return py::make_tuple(to_array(d.per_class), to_array(d.per_sample));
  });
  m.def("ensemble_variance", [](const Array& s) {
    const EnsembleVariance v = ensemble_variance(to_tensor(s));
    return py::make_tuple(to_array(v.variance), v.degenerate);
  });
  m.def(
      "regression_nll",
      [](const Array& samples, const Array& targets, double target_std, double min_var) {
        const RegressionNll r = regression_nll(to_tensor(samples), to_tensor(targets), target_std, min_var);
        return py::make_tuple(to_array(r.per_sample), r.mean);
      },
      py::arg("samples"), py::arg("targets"), py::arg("target_std") = 1.0, py::arg("min_var") = kDefaultMinVariance);

  m.def(
      "census",
      [](const py::object& spec, const std::string& method, std::size_t members) {
        return census_to_dict(census(spec_from(spec), parse_cost_method(method), members));
      },
      py::arg("spec"), py::arg("method"), py::arg("members"),
      "Cost census for a layer spec given as a JSON string or a file path.");
  m.def("cost_methods", [] {
    std::vector<std::string> names;
    for (CostMethod c : all_cost_methods()) names.push_back(to_string(c));
    return names;
  });

  m.def(
      "quantize",
      [](const Array& x, std::optional<unsigned> bits, double lo, double hi) {
        return to_array(quantize(to_tensor(x), stage(bits, lo, hi)));
      },
      py::arg("x"), py::arg("bits"), py::arg("lo") = -1.0, py::arg("hi") = 1.0);
  m.def("binary_control", &binary_control, py::arg("c"), py::arg("q"));
  m.def("parse_control", &parse_control, py::arg("bits"));
  m.def(
      "run_sequential_inference",
      [](const TinyDEModel& model, const Array& x, std::optional<unsigned> bits, std::optional<Array> calibration) {
        const Tensor t = to_tensor(x);
        const QuantSpec spec = bits ? calibrate(model, calibration ? to_tensor(*calibration) : t, bits, bits)
                                    : QuantSpec::ideal(model.linear_count());
        return to_array(run_sequential_inference(model, t, spec));
      },
      py::arg("model"), py::arg("x"), py::arg("bits") = py::none(), py::arg("calibration") = py::none(),
      "Simulated compute-in-memory inference; bits=None uses ideal converters.");
}
