#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "l2e/errors.hpp"
#include "l2e/harness.hpp"

namespace py = pybind11;
using namespace l2e;

namespace {

py::dict record_dict(const RunRecord& r) {
  py::dict d;
  d["run_id"] = r.run_id;
  d["method"] = r.method;
  d["function"] = r.function;
  d["seed"] = r.seed;
  d["config_hash"] = r.config_hash;
  d["final_best"] = r.final_best;
  d["final_error"] = r.final_error;
  d["evaluations"] = r.evaluations;
  d["budget"] = r.budget;
  d["history"] = r.history;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Learned evolutionary optimizer core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());

  m.def("families", [] {
    std::vector<std::string> out;
    for (Family f : all_families()) out.emplace_back(family_name(f));
    return out;
  });

  m.def(
      "evaluate_function",
      [](const std::string& family, std::size_t dim, std::uint64_t seed, const std::vector<std::vector<double>>& xs) {
        FunctionDescriptor d;
        d.family = parse_family(family);
        d.dim = dim;
        d.seed = seed;
        const auto f = ObjectiveFunction::make(d);
        std::vector<double> out;
        for (const auto& x : xs) {
          if (x.size() != dim) throw DimensionError("point has the wrong dimension");
          out.push_back(f.value(x));
        }
        return out;
      },
      py::arg("family"), py::arg("dim"), py::arg("seed"), py::arg("points"));

  m.def("default_config", [] { return format_config(ExperimentConfig{}); });
  m.def("normalize_config", [](const std::string& text) { return format_config(parse_config(text)); });
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); });

  m.def(
      "meta_train",
      [](const std::string& text, const std::filesystem::path& dir) {
        const ExperimentConfig cfg = parse_config(text);
        TrainResult res;
        {
          py::gil_scoped_release release;
          res = train(cfg.meta);
        }
        const auto ckpt = save_training(dir, cfg, res);
        py::dict d;
        d["checkpoint"] = ckpt.string();
        d["meta_loss"] = res.record.meta_loss;
        d["validation"] = res.record.validation;
        d["best_iteration"] = res.record.best_iteration;
        d["spectral_max"] = res.record.spectral_max;
        return d;
      },
      py::arg("config"), py::arg("out_dir"));

  m.def(
      "evaluate",
      [](const std::string& text, const std::optional<std::filesystem::path>& checkpoint, bool with_baselines) {
        const ExperimentConfig cfg = parse_config(text);
        const ParamStore params = checkpoint ? load_trained(*checkpoint, cfg) : init_params(cfg.meta);
        std::vector<RunRecord> records;
        {
          py::gil_scoped_release release;
          records = run_eval(params, cfg, with_baselines);
        }
        py::list out;
        for (const auto& r : records) out.append(record_dict(r));
        return out;
      },
      py::arg("config"), py::arg("checkpoint") = py::none(), py::arg("with_baselines") = true);

  m.def(
      "verify_theory",
      [](const std::string& text) { return theory_report_json(theory_suite(parse_config(text))); },
      py::arg("config"));

  m.def(
      "ecdf",
      [](const std::filesystem::path& records_dir, const std::vector<double>& targets) {
        const EcdfCurve c = compute_ecdf(load_runs(records_dir), targets.empty() ? log_targets() : targets);
        py::dict d;
        d["evaluations"] = c.evaluations;
        d["values"] = c.values;
        d["budget"] = c.budget;
        d["targets"] = c.targets;
        return d;
      },
      py::arg("records_dir"), py::arg("targets") = std::vector<double>{});

  m.def("sign_test", [](const std::vector<double>& a, const std::vector<double>& b) {
    const SignTest t = sign_test(a, b);
    return py::make_tuple(t.wins, t.losses, t.ties, t.p_value);
  });
}
