#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kpc/accounting.hpp"
#include "kpc/errors.hpp"
#include "kpc/gradcheck.hpp"
#include "kpc/losses.hpp"
#include "kpc/okpd.hpp"
#include "kpc/run_config.hpp"
#include "kpc/toybench.hpp"

namespace py = pybind11;
using namespace kpc;

namespace {

RunConfig make_config(const py::dict& overrides) {
  RunConfig cfg;
  for (auto item : overrides) {
    const auto key = py::str(item.first).cast<std::string>();
    py::object v = py::reinterpret_borrow<py::object>(item.second);
    std::string text;
    if (py::isinstance<py::bool_>(v)) text = v.cast<bool>() ? "true" : "false";
    else text = py::str(v).cast<std::string>();
    cfg.set(key, text);
  }
  return cfg;
}

py::dict report_dict(const ParamReport& r) {
  py::dict d;
  py::list rows;
  for (const auto& row : r.rows) rows.append(py::make_tuple(row.layer, row.params, row.macs));
  d["title"] = r.title;
  d["rows"] = rows;
  d["total_params"] = r.total_params;
  d["total_macs"] = r.total_macs;
  d["baseline_params"] = r.baseline_params ? py::cast(*r.baseline_params) : py::none();
  d["reduction_ratio"] = r.reduction_ratio() ? py::cast(*r.reduction_ratio()) : py::none();
  return d;
}

py::dict metrics_dict(const EvalMetrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["box_error"] = m.box_error;
  d["key_part_recall"] = m.key_part_recall ? py::cast(*m.key_part_recall) : py::none();
  d["chance_level"] = m.chance_level;
  d["chance_level_tolerant"] = m.chance_level_tolerant;
  d["fg_peak"] = m.fg_peak;
  d["bg_peak"] = m.bg_peak;
  return d;
}

}  // namespace

PYBIND11_MODULE(_kpcondense, m) {
  m.doc() = "Key-part condensed detection heads";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("preset_names", &preset_names);
  m.def("preset_report", [](const std::string& name) { return report_dict(preset_report(name)); }, py::arg("name"));

  m.def(
      "count_params_condensed",
      [](std::size_t channels, std::size_t num_parts, std::size_t sub_len, std::size_t hidden, std::size_t num_classes,
         double channel_keep) {
        HeadConfig h;
        OkpdConfig o;
        h.channels = o.channels = channels;
        h.num_parts = o.num_parts = num_parts;
        h.sub_len = sub_len;
        h.hidden = hidden;
        h.num_classes = num_classes;
        h.channel_keep = channel_keep;
        return report_dict(count_params_condensed(h, o));
      },
      py::arg("channels") = 256, py::arg("num_parts") = 16, py::arg("sub_len") = 5, py::arg("hidden") = 1024,
      py::arg("num_classes") = 20, py::arg("channel_keep") = 0.25);

  m.def(
      "sweep",
      [](const std::vector<std::size_t>& ks, const std::vector<std::size_t>& ls) {
        const auto base = preset_report("baseline-fpn-voc").total_params;
        py::list out;
        for (const auto& r : sweep(HeadConfig{}, OkpdConfig{}, base, ks, ls))
          out.append(py::make_tuple(r.num_parts, r.sub_len, r.params, r.ratio));
        return out;
      },
      py::arg("ks"), py::arg("ls"), "(K, L, params, ratio) rows against the two-FC FPN head on VOC");

  m.def(
      "tmr_squash",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> raw, double alpha, double epsilon) {
        if (raw.ndim() != 3) throw ContractError("tmr_squash: expected a K x H x W array");
        Shape s{std::size_t(raw.shape(0)), std::size_t(raw.shape(1)), std::size_t(raw.shape(2))};
        Tensor t(s, std::vector<double>(raw.data(), raw.data() + raw.size()));
        Tensor out = tmr_squash(t, alpha, epsilon);
        py::array_t<double> res({raw.shape(0), raw.shape(1), raw.shape(2)});
        std::copy(out.data().begin(), out.data().end(), res.mutable_data());
        return res;
      },
      py::arg("raw"), py::arg("alpha") = 0.5, py::arg("epsilon") = 0.1);

  m.def("smooth_l1", &smooth_l1, py::arg("a"), py::arg("b"));

  m.def(
      "gradcheck",
      [](std::size_t trials, std::uint64_t seed) {
        GradCheckOptions opts;
        opts.trials = trials;
        opts.seed = seed;
        py::list out;
        for (const auto& r : run_gradcheck_suite(opts)) {
          py::dict d;
          d["op"] = r.op;
          d["max_rel_error"] = r.max_rel_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("trials") = 3, py::arg("seed") = 1);

  m.def("default_config", [] { return RunConfig{}.dump(); }, "Default configuration as JSON text");

  m.def(
      "toy_generate",
      [](const std::string& train_path, const std::string& test_path, const py::dict& overrides) {
        const auto [tr, te] = generate_dataset(make_config(overrides).dataset_spec());
        write_dataset(train_path, tr);
        write_dataset(test_path, te);
        return py::make_tuple(tr.examples.size(), te.examples.size());
      },
      py::arg("train_path"), py::arg("test_path"), py::arg("overrides") = py::dict());

  m.def(
      "toy_run",
      [](const py::dict& overrides, const std::string& params_out) {
        const RunConfig cfg = make_config(overrides);
        EvalMetrics metrics;
        py::list log;
        {
          py::gil_scoped_release release;
          const auto [tr, te] = generate_dataset(cfg.dataset_spec());
          ToyModel model(cfg.model_config());
          std::vector<EpochLog> rows = train(model, tr, cfg.train_config());
          metrics = evaluate(model, te);
          if (!params_out.empty()) save_params(params_out, model, {"config " + cfg.dump_compact()});
          py::gil_scoped_acquire acquire;
          for (const auto& r : rows) log.append(py::make_tuple(r.epoch, r.det_loss, r.l_d, r.l_u, r.acc));
        }
        py::dict d = metrics_dict(metrics);
        d["log"] = log;
        return d;
      },
      py::arg("overrides") = py::dict(), py::arg("params_out") = "",
      "Generate the toy data, train, evaluate on the test split");
}
