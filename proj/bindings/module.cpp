// Python bindings over the main operations: preprocessing, graph algebra,
// metrics, shift tooling and the forecasting pipeline. Tensors cross the
// boundary as numpy arrays.

#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include "stprompt/gradbattery.hpp"
#include "stprompt/metrics.hpp"
#include "stprompt/pipeline.hpp"
#include "stprompt/shiftlab.hpp"

namespace py = pybind11;
using namespace stprompt;

namespace {

StTensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw ShapeError("expected a (R, T, F) array");
  StTensor x(std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), x.data.begin());
  return x;
}

py::array_t<double> tensor_to_numpy(const StTensor& x) {
  py::array_t<double> out({x.R, x.T, x.F});
  std::copy(x.data.begin(), x.data.end(), out.mutable_data());
  return out;
}

ad::Tensor ad_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  ad::Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[std::size_t(i)] = std::size_t(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return ad::Tensor(std::move(shape), std::move(data));
}

py::array_t<double> ad_to_numpy(const ad::Tensor& t) {
  py::array_t<double> out(t.shape());
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Mat mat_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  Mat m(std::size_t(a.shape(0)), std::size_t(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.v.begin());
  return m;
}

py::array_t<double> mat_to_numpy(const Mat& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.v.begin(), m.v.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "spatio-temporal forecasting with prompt-based adaptation";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<ContractError>(m, "ContractError");
  py::register_exception<ShapeError>(m, "ShapeErrorCpp");
  py::register_exception<NumericError>(m, "NumericError");

  // --- data -----------------------------------------------------------------
  py::class_<StTensor>(m, "StTensor")
      .def(py::init(&tensor_from_numpy), py::arg("array"))
      .def_property_readonly("R", [](const StTensor& x) { return x.R; })
      .def_property_readonly("T", [](const StTensor& x) { return x.T; })
      .def_property_readonly("F", [](const StTensor& x) { return x.F; })
      .def_readonly("normalized", &StTensor::normalized)
      .def_readonly("mu", &StTensor::mu)
      .def_readonly("sigma", &StTensor::sigma)
      .def("numpy", &tensor_to_numpy)
      .def("save", [](const StTensor& x, const std::string& path) { save_tensor(x, path); })
      .def_static("load", &load_tensor);

  py::class_<Range>(m, "Range")
      .def(py::init([](std::size_t b, std::size_t e) { return Range{b, e}; }))
      .def_readonly("begin", &Range::begin)
      .def_readonly("end", &Range::end)
      .def("__len__", &Range::len);

  py::class_<SplitPlan>(m, "SplitPlan")
      .def_readonly("pre", &SplitPlan::pre)
      .def_readonly("tun", &SplitPlan::tun)
      .def_readonly("val", &SplitPlan::val)
      .def_readonly("tst", &SplitPlan::tst);

  m.def("normalize", [](const StTensor& x) { return normalize(x); });
  m.def("denormalize", &denormalize);
  m.def("normalize_with", &normalize_with);
  m.def("split_chronological", &split_chronological, py::arg("T"), py::arg("f_train") = 0.6,
        py::arg("f_val") = 0.2, py::arg("f_tst") = 0.2, py::arg("tun_tail") = 288);
  m.def("window_count", &window_count);
  m.def(
      "augment",
      [](const StTensor& x, double mask_rate, double warp_pct, std::size_t warp_window,
         std::uint64_t seed) { return augment(x, mask_rate, warp_pct, warp_window, seed); },
      py::arg("x"), py::arg("mask_rate") = 0.2, py::arg("warp_pct") = 0.15,
      py::arg("warp_window") = 24, py::arg("seed") = 0);

  // --- graph ------------------------------------------------------------------
  py::class_<SensorGraph>(m, "SensorGraph")
      .def_property_readonly("n", &SensorGraph::n)
      .def("adjacency", [](const SensorGraph& g) { return mat_to_numpy(g.adjacency()); })
      .def("in_degree", &SensorGraph::in_degree)
      .def("out_degree", &SensorGraph::out_degree);

  m.def("kernel_adjacency",
        [](std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges,
           double sigma2) {
          std::vector<Edge> es;
          for (const auto& [s, d, w] : edges) es.push_back({s, d, w});
          return kernel_adjacency(n, es, sigma2);
        },
        py::arg("n"), py::arg("edges"), py::arg("sigma2") = 25.0);
  m.def("random_walk_matrix", [](const SensorGraph& g) {
    return mat_to_numpy(random_walk(g).matrix());
  });
  m.def("poly_filter",
        [](const SensorGraph& g, const std::vector<double>& alphas, py::array_t<double> x) {
          DiffusionOperator op = random_walk(g);
          return mat_to_numpy(poly_filter(op, alphas, mat_from_numpy(x)));
        });
  m.def("sym_normalize",
        [](py::array_t<double> a) { return mat_to_numpy(sym_normalize(mat_from_numpy(a))); });
  m.def("topk_sparsify", [](py::array_t<double> a, std::size_t k) {
    return mat_to_numpy(topk_sparsify(mat_from_numpy(a), k));
  });

  // --- metrics ----------------------------------------------------------------
  m.def("mae", &mae);
  m.def("rmse", &rmse);
  m.def("mape", &mape, py::arg("y"), py::arg("yhat"), py::arg("eps") = 1.0);
  m.def("horizon_weighted_mae", &horizon_weighted_mae, py::arg("per_horizon"),
        py::arg("decay") = 0.95);

  // --- shift lab ----------------------------------------------------------------
  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("n_nodes", &SyntheticSpec::n_nodes)
      .def_readwrite("n_steps", &SyntheticSpec::n_steps)
      .def_readwrite("n_features", &SyntheticSpec::n_features)
      .def_readwrite("period", &SyntheticSpec::period)
      .def_readwrite("noise_std", &SyntheticSpec::noise_std)
      .def_readwrite("coupling", &SyntheticSpec::coupling)
      .def_readwrite("seed", &SyntheticSpec::seed);

  m.def("gen_synthetic", [](const SyntheticSpec& spec) {
    Synthetic syn = gen_synthetic(spec);
    return py::make_tuple(std::move(syn.x), std::move(syn.graph));
  });

  py::class_<ShiftSpec> shift(m, "ShiftSpec");
  py::enum_<ShiftSpec::Kind>(shift, "Kind")
      .value("phase_lag", ShiftSpec::Kind::phase_lag)
      .value("amplitude_scale", ShiftSpec::Kind::amplitude_scale)
      .value("mixed", ShiftSpec::Kind::mixed);
  shift.def(py::init<>())
      .def_readwrite("kind", &ShiftSpec::kind)
      .def_readwrite("lag", &ShiftSpec::lag)
      .def_readwrite("scale", &ShiftSpec::scale)
      .def("set_range", [](ShiftSpec& s, std::size_t b, std::size_t e) { s.applied = {b, e}; });

  m.def("apply_shift", &apply_shift);
  m.def("wasserstein1_1d", &wasserstein1_1d);

  // --- models and pipeline -------------------------------------------------------
  py::class_<BackboneConfig>(m, "BackboneConfig")
      .def(py::init<>())
      .def_readwrite("n_nodes", &BackboneConfig::n_nodes)
      .def_readwrite("n_features", &BackboneConfig::n_features)
      .def_readwrite("d_embed", &BackboneConfig::d_embed)
      .def_readwrite("d_hidden", &BackboneConfig::d_hidden)
      .def_readwrite("d_skip", &BackboneConfig::d_skip)
      .def_readwrite("layers", &BackboneConfig::layers)
      .def_readwrite("mixhop_depth", &BackboneConfig::mixhop_depth)
      .def_readwrite("horizon", &BackboneConfig::horizon)
      .def_readwrite("history", &BackboneConfig::history)
      .def_readwrite("topk", &BackboneConfig::topk);

  py::class_<BackboneModel>(m, "BackboneModel")
      .def(py::init<BackboneConfig, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def("forward",
           [](BackboneModel& model, py::array_t<double> x) {
             return ad_to_numpy(model.forward(ad_from_numpy(x)));
           })
      .def("adjacency", [](BackboneModel& model) { return ad_to_numpy(model.adjacency()); })
      .def("param_count",
           [](const BackboneModel& model, bool trainable_only) {
             return model.params().count_params(trainable_only);
           },
           py::arg("trainable_only") = false)
      .def("digest", [](const BackboneModel& m2) { return m2.params().digest(); })
      .def("freeze", &BackboneModel::freeze)
      .def_property_readonly("frozen", &BackboneModel::frozen)
      .def("save", [](const BackboneModel& m2, const std::string& p) { m2.params().save(p); });

  py::class_<PromptConfig>(m, "PromptConfig")
      .def(py::init<>())
      .def_readwrite("d_hidden", &PromptConfig::d_hidden)
      .def_readwrite("kernel", &PromptConfig::kernel)
      .def_readwrite("dropout_rate", &PromptConfig::dropout_rate)
      .def_readwrite("zero_init_output", &PromptConfig::zero_init_output)
      .def_readwrite("window", &PromptConfig::window)
      .def_readwrite("n_features", &PromptConfig::n_features);

  py::class_<PromptNet>(m, "PromptNet")
      .def(py::init<PromptConfig, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def("forward",
           [](PromptNet& net, py::array_t<double> x, bool train_mode, std::uint64_t seed) {
             return ad_to_numpy(net.forward(ad_from_numpy(x), train_mode, seed));
           },
           py::arg("x"), py::arg("train_mode") = false, py::arg("seed") = 0)
      .def("edit_magnitude",
           [](PromptNet& net, py::array_t<double> x) {
             return net.edit_magnitude(ad_from_numpy(x));
           })
      .def("param_count",
           [](const PromptNet& net, bool trainable_only) {
             return net.params().count_params(trainable_only);
           },
           py::arg("trainable_only") = false)
      .def("describe", &PromptNet::describe)
      .def("save", [](const PromptNet& net, const std::string& p) { net.params().save(p); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("min_delta", &TrainConfig::min_delta)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("curriculum", &TrainConfig::curriculum);

  py::class_<PhaseResult>(m, "PhaseResult")
      .def_readonly("wall_seconds", &PhaseResult::wall_seconds)
      .def_readonly("steps", &PhaseResult::steps)
      .def_readonly("best_epoch", &PhaseResult::best_epoch)
      .def_readonly("best_val_mae", &PhaseResult::best_val_mae)
      .def_readonly("diverged", &PhaseResult::diverged)
      .def_readonly("batch_digest", &PhaseResult::batch_digest);

  m.def("pretrain",
        [](BackboneModel& model, const StTensor& x, const SplitPlan& splits,
           const TrainConfig& cfg) { return pretrain(model, x, splits, cfg); });
  m.def("freeze", [](BackboneModel& model) { return freeze(model); });
  m.def("prompt_tune",
        [](PromptNet& prompt, BackboneModel& model, const StTensor& x, const Range& tun,
           const TrainConfig& cfg, const StTensor* targets) {
          DataView data{&x, targets};
          return prompt_tune(prompt, model, data, tun, cfg);
        },
        py::arg("prompt"), py::arg("model"), py::arg("x"), py::arg("tun"), py::arg("cfg"),
        py::arg("targets") = nullptr, py::keep_alive<0, 3>(), py::keep_alive<0, 6>());
  m.def("evaluate_model",
        [](BackboneModel& model, PromptNet* prompt, const StTensor& x, const Range& range,
           const StTensor* targets) {
          DataView data{&x, targets};
          EvalResult ev = evaluate_model(model, prompt, data, range);
          return py::dict(py::arg("mae") = ev.mae, py::arg("rmse") = ev.rmse,
                          py::arg("mape") = ev.mape, py::arg("weighted_mae") = ev.weighted_mae);
        },
        py::arg("model"), py::arg("prompt"), py::arg("x"), py::arg("range"),
        py::arg("targets") = nullptr);
  m.def("predict",
        [](BackboneModel& model, PromptNet* prompt, py::array_t<double> window) {
          return ad_to_numpy(predict(model, prompt, ad_from_numpy(window)));
        },
        py::arg("model"), py::arg("prompt"), py::arg("window"));

  m.def("gradient_battery", [](double tol) {
    py::list out;
    for (const auto& r : ad::run_gradient_battery(tol)) {
      out.append(py::dict(py::arg("name") = r.name, py::arg("max_rel_err") = r.max_rel_err,
                          py::arg("pass") = r.pass));
    }
    return out;
  }, py::arg("tol") = 1e-4);
}
