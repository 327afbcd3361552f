#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cimdse/experiment.hpp"
#include "cimdse/orchestrator.hpp"
#include "cimdse/result_io.hpp"

namespace py = pybind11;
using namespace cimdse;

// Structured values cross the boundary as JSON text; the Python package
// decodes them.
namespace {

std::vector<Constraint> constraints_from(const json& j) {
  std::vector<Constraint> out;
  for (const auto& c : j) out.push_back(constraint_from_json(c));
  return out;
}

SurrogateConfig surrogate_from(const std::string& text) {
  const auto j = json::parse(text);
  return j.empty() ? SurrogateConfig{} : surrogate_config_from_json(j);
}

std::string simulate_point(const std::string& point, const std::string& model, const std::string& dataset,
                           const std::string& surrogate) {
  py::gil_scoped_release release;
  return to_json(simulate(point_from_json(json::parse(point)), make_workload(model, dataset), surrogate_from(surrogate)))
      .dump();
}

std::string optimize(const std::string& space_file, const std::string& model, const std::string& request) {
  const auto req = json::parse(request);
  const auto space = load_design_space(space_file);
  const auto objective = objective_from_json(req.value("objective", json::object()));
  const auto cons = constraints_from(req.value("constraints", json::array()));
  const auto opt = optimizer_config_from_json(req.value("optimizer", json::object()));
  const auto surrogate = req.contains("surrogate") ? surrogate_config_from_json(req.at("surrogate")) : SurrogateConfig{};
  py::gil_scoped_release release;
  SurrogateEvaluator ev(make_workload(model), surrogate);
  if (!req.contains("pruning")) {
    const auto r = run(space, objective, cons, opt, ev);
    return json{{"result", to_json(r)}, {"convergence_csv", convergence_csv(r, objective)}}.dump();
  }
  const auto base_space = load_design_space(req.at("base_space").get<std::string>());
  SurrogateEvaluator bev(make_workload(req.at("base_model").get<std::string>()), surrogate);
  const auto base = build_base_dataset(base_space, bev, req.at("base_model").get<std::string>());
  const auto r = pruned_run(space, base, objective, cons, opt, pruning_config_from_json(req.at("pruning")), ev);
  return json{{"result", to_json(r.result)},
              {"audit", to_json(r.audit)},
              {"convergence_csv", convergence_csv(r.result, objective)}}
      .dump();
}

std::string classify_text(const std::string& text, const std::string& schema_file) {
  const auto schema = load_request_schema(schema_file);
  DeterministicBackend b;
  const auto c = classify(text, b, schema);
  return json{{"category", to_string(c.category)}, {"rationale", c.rationale}, {"clarification", c.clarification}}.dump();
}

std::string parse_text(const std::string& text, const std::string& schema_file) {
  const auto schema = load_request_schema(schema_file);
  DeterministicBackend b;
  const auto c = classify(text, b, schema);
  if (c.category == RequestCategory::unknown) return json{{"category", to_string(c.category)}, {"clarification", c.clarification}}.dump();
  return to_json(parse_params(text, c.category, schema, b)).dump();
}

std::string adjust_parsed(const std::string& parsed, const std::string& adjustment, const std::string& schema_file) {
  const auto schema = load_request_schema(schema_file);
  return to_json(adjust(parsed_request_from_json(json::parse(parsed)), adjustment_from_json(json::parse(adjustment)), schema))
      .dump();
}

std::string plan(const std::string& parsed, const std::string& schema_file) {
  const auto schema = load_request_schema(schema_file);
  return to_json(make_plan(parsed_request_from_json(json::parse(parsed)), schema)).dump();
}

std::string execute(const std::string& plan_text, const std::string& schema_dir) {
  const auto p = execution_plan_from_json(json::parse(plan_text));
  ExecutionOptions opts;
  opts.schema_dir = schema_dir;
  ExecutionOutcome out;
  {
    py::gil_scoped_release release;
    out = execute_plan(p, opts);
  }
  json tbs = json::array();
  for (const auto& t : out.testbenches) {
    tbs.push_back({{"config", t.config},
                   {"status", to_string(t.status)},
                   {"record", t.record ? to_json(*t.record) : json(nullptr)},
                   {"error", t.error}});
  }
  return json{{"ok", out.ok},
              {"testbenches", tbs},
              {"optimization", out.optimization ? to_json(*out.optimization) : json(nullptr)},
              {"audit", out.audit},
              {"logs", out.logs}}
      .dump();
}

std::string experiment(const std::string& config_file, std::size_t seeds) {
  auto cfg = load_experiment_config(config_file);
  if (seeds) cfg.seeds = seeds;
  py::gil_scoped_release release;
  const auto r = run_experiment(cfg);
  return json{{"name", r.name},
              {"optimum", r.optimum},
              {"feasible_points", r.feasible_points},
              {"runs_csv", runs_csv(r)},
              {"summary_csv", summary_csv(r)},
              {"runtime_table", runtime_table(r)},
              {"notes", r.notes}}
      .dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "CIM design-space exploration core";
  py::register_exception<Error>(m, "CimdseError", PyExc_RuntimeError);

  m.def("count_valid", [](const std::string& f) { return count_valid(load_design_space(f)); }, py::arg("space_file"));
  m.def("enumerate_space", [](const std::string& f) {
    json out = json::array();
    for (const auto& p : enumerate(load_design_space(f))) out.push_back(to_json(p));
    return out.dump();
  }, py::arg("space_file"));
  m.def("workloads", &builtin_workload_names);
  m.def("simulate", &simulate_point, py::arg("point"), py::arg("model"), py::arg("dataset") = "ImageNet",
        py::arg("surrogate") = "{}");
  m.def("optimize", &optimize, py::arg("space_file"), py::arg("model"), py::arg("request"));
  m.def("classify", &classify_text, py::arg("text"), py::arg("schema_file"));
  m.def("parse", &parse_text, py::arg("text"), py::arg("schema_file"));
  m.def("adjust", &adjust_parsed, py::arg("parsed"), py::arg("adjustment"), py::arg("schema_file"));
  m.def("make_plan", &plan, py::arg("parsed"), py::arg("schema_file"));
  m.def("execute_plan", &execute, py::arg("plan"), py::arg("schema_dir"));
  m.def("run_experiment", &experiment, py::arg("config_file"), py::arg("seeds") = 0);
  m.def("table3_average_runtime", [](std::vector<double> samples, double batch, double t_batch) {
    return table3_average_runtime(samples, batch, t_batch);
  }, py::arg("samples"), py::arg("batch_size"), py::arg("t_batch"));
  m.def("restore_probability", &restore_probability, py::arg("wins"), py::arg("samples"), py::arg("gamma"));
  m.def("fit_power_law", [](std::vector<double> x, std::vector<double> y) {
    const auto f = fit_power_law(x, y);
    return py::make_tuple(f.a0, f.a1);
  }, py::arg("x"), py::arg("y"));
}
