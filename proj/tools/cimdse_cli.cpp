#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cimdse/experiment.hpp"
#include "cimdse/orchestrator.hpp"
#include "cimdse/result_io.hpp"

using namespace cimdse;
namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::io, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  out << text;
}

std::shared_ptr<InterpreterBackend> make_backend() {
  const std::string endpoint = env_or("CIMDSE_LLM_ENDPOINT", "");
  if (endpoint.empty()) return std::make_shared<DeterministicBackend>();
  HttpLlmBackend::Options o;
  o.endpoint = endpoint;
  return std::make_shared<HttpLlmBackend>(o);
}

// Workload named by the space file unless given explicitly.
std::string workload_for(const fs::path& space_file, const std::string& given) {
  if (!given.empty()) return given;
  const auto j = read_json_file(space_file);
  if (!j.contains("workload")) throw Error(ErrorKind::config, space_file.string() + " names no workload; pass --model");
  return j.at("workload").get<std::string>();
}

Constraint parse_constraint(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw Error(ErrorKind::config, "constraint '" + kv + "' is not key=value");
  Constraint c;
  c.metric = metric_from_string(kv.substr(0, eq));
  try {
    c.threshold = std::stod(kv.substr(eq + 1));
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, "constraint '" + kv + "' has no numeric threshold");
  }
  return c;
}

int cmd_run(const fs::path& schema_file, const fs::path& request_file, std::optional<std::uint64_t> seed,
            const fs::path& data_dir) {
  const auto schema = load_request_schema(schema_file);
  auto backend = make_backend();
  const std::string text = read_text(request_file);
  const auto cls = classify(text, *backend, schema);
  if (cls.category == RequestCategory::unknown) {
    std::cout << json{{"category", "unknown"}, {"clarification", cls.clarification}}.dump(2) << '\n';
    return 2;
  }
  auto parsed = parse_params(text, cls.category, schema, *backend);
  finalize(parsed, schema);
  if (!parsed.ready()) {
    std::cout << json{{"parsed", to_json(parsed)}}.dump(2) << '\n';
    std::cerr << "request is incomplete: " << parsed.missing.size() << " missing, " << parsed.invalid.size()
              << " invalid\n";
    return 2;
  }
  auto plan = make_plan(parsed, schema);
  if (seed && plan.optimization) {
    plan.optimization->optimizer.seed = *seed;
    plan = execution_plan_from_json(to_json(plan, false));
  }
  ExecutionOptions opts;
  opts.schema_dir = schema_file.parent_path();
  opts.parallelism = std::max(1u, std::thread::hardware_concurrency());
  BaseDatasetCache cache(data_dir.empty() ? fs::path() : data_dir / "base");
  opts.base_cache = &cache;
  const auto outcome = execute_plan(plan, opts, [](std::size_t tb, TestbenchStatus st) {
    std::cerr << "testbench " << tb + 1 << ": " << to_string(st) << '\n';
  });
  Job job;
  job.id = "cli";
  job.plan = plan;
  job.state = outcome.ok ? JobState::done : JobState::failed;
  job.testbenches = outcome.testbenches;
  job.optimization = outcome.optimization;
  job.audit = outcome.audit;
  job.logs = outcome.logs;
  std::cout << json{{"plan", to_json(plan)}, {"results", job_results_json(job)}}.dump(2) << '\n';
  return outcome.ok ? 0 : 1;
}

struct OptimizeArgs {
  fs::path space;
  std::string model;
  std::string objective = "fom";
  std::string direction;
  std::vector<std::string> constraints;
  std::string algorithm = "sa";
  std::size_t iterations = 80;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  bool prune = false;
  fs::path base_dataset;
  double rho = 0.2;
  double tau = 0.85;
  std::string tau_mode = "cumulative";
  std::size_t deprune_interval = 2;
  std::size_t deprune_stop = 8;
  std::size_t recovery = 20;
  fs::path out;
};

int cmd_optimize(const OptimizeArgs& a) {
  const auto space = load_design_space(a.space);
  const auto workload = make_workload(workload_for(a.space, a.model));
  Objective obj;
  obj.metric = metric_from_string(a.objective);
  obj.direction = (obj.metric == Metric::area || obj.metric == Metric::power || obj.metric == Metric::latency)
                      ? Direction::minimize
                      : Direction::maximize;
  if (a.direction == "maximize") obj.direction = Direction::maximize;
  if (a.direction == "minimize") obj.direction = Direction::minimize;
  std::vector<Constraint> cons;
  for (const auto& c : a.constraints) cons.push_back(parse_constraint(c));

  OptimizerConfig oc;
  oc.algorithm = algorithm_from_string(a.algorithm);
  oc.iterations = a.iterations;
  oc.batch_size = a.batch;
  oc.seed = a.seed;

  const std::size_t par = std::max(1u, std::thread::hardware_concurrency());
  SurrogateEvaluator ev(workload, SurrogateConfig{}, par);
  OptResult result;
  json audit = nullptr;
  if (a.prune) {
    if (a.base_dataset.empty()) throw Error(ErrorKind::config, "--prune needs --base-dataset");
    const auto base = load_base_dataset(a.base_dataset);
    PruningConfig pc;
    pc.rho = a.rho;
    pc.tau = a.tau;
    pc.tau_mode = tau_mode_from_string(a.tau_mode);
    pc.deprune_interval = a.deprune_interval;
    pc.deprune_stop_iter = a.deprune_stop;
    pc.recovery_iter = a.recovery;
    auto p = pruned_run(space, base, obj, cons, oc, pc, ev);
    result = std::move(p.result);
    audit = to_json(p.audit);
  } else {
    result = run(space, obj, cons, oc, ev);
  }

  json summary{{"status", to_string(result.status)},
               {"objective", to_json(obj)},
               {"unique_evaluations", result.trace.total()},
               {"estimated_runtime_min", result.estimated_runtime_min},
               {"runtime_clamped", result.runtime_clamped},
               {"first_best_iteration", result.first_best_iteration},
               {"notes", result.notes}};
  if (result.best) summary["best"] = to_json(*result.best);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_json_file(a.out / "result.json", to_json(result));
    write_text(a.out / "convergence.csv", convergence_csv(result, obj));
    if (!audit.is_null()) write_json_file(a.out / "audit.json", audit);
  }
  if (!audit.is_null()) summary["audit"] = audit;
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_enumerate(const fs::path& space_file, bool list) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto space = load_design_space(space_file);
  const auto points = enumerate(space);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (list) {
    for (const auto& p : points) std::cout << p.key() << '\n';
    return 0;
  }
  std::cout << json{{"space", space.name()},
                    {"cartesian", space.cartesian_size()},
                    {"valid", points.size()},
                    {"seconds", secs}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_basegen(const fs::path& space_file, const std::string& model, const fs::path& out) {
  const auto space = load_design_space(space_file);
  const auto name = workload_for(space_file, model);
  SurrogateEvaluator ev(make_workload(name), SurrogateConfig{}, std::max(1u, std::thread::hardware_concurrency()));
  const auto data = build_base_dataset(space, ev, name, space_file.filename().string());
  save_base_dataset(data, out);
  std::cout << "wrote " << data.records.size() << " records to " << out.string() << '\n';
  return 0;
}

int cmd_experiment(const fs::path& config, const fs::path& out, std::size_t seeds, std::size_t threads) {
  auto cfg = load_experiment_config(config);
  if (seeds) cfg.seeds = seeds;
  if (threads) cfg.threads = threads;
  const auto r = run_experiment(cfg);
  for (const auto& n : r.notes) std::cerr << n << '\n';
  if (!out.empty()) {
    write_text(out / (r.name + "_runs.csv"), runs_csv(r));
    write_text(out / (r.name + "_summary.csv"), summary_csv(r));
    write_text(out / (r.name + "_runtime.txt"), runtime_table(r));
  }
  std::cout << summary_csv(r);
  if (cfg.pruning) std::cout << '\n' << runtime_table(r);
  return 0;
}

int cmd_serve(const std::string& host, int port, const fs::path& data_dir, std::size_t workers) {
  OrchestratorConfig cfg;
  cfg.data_dir = data_dir;
  cfg.workers = workers;
  cfg.execution.parallelism = std::max(1u, std::thread::hardware_concurrency());
  Orchestrator orch(cfg, make_backend());
  HttpApi api(orch);
  std::cerr << "listening on " << host << ':' << port << " (backend " << orch.backend().name() << ", data "
            << data_dir.string() << ")\n";
  return api.listen(host, port) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compute-in-memory design space exploration"};
  app.require_subcommand(1);
  const fs::path default_schemas = fs::path(CIMDSE_DATA_DIR) / "schemas";

  fs::path run_schema = default_schemas / "request_schema.json", run_request;
  std::optional<std::uint64_t> run_seed;
  fs::path data_dir = env_or("CIMDSE_DATA", "");
  auto* run = app.add_subcommand("run", "interpret a request and execute its plan");
  run->add_option("--schema", run_schema, "request schema")->check(CLI::ExistingFile);
  run->add_option("--request-file", run_request, "request text")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", run_seed, "optimizer seed override");
  run->add_option("--data-dir", data_dir, "cache directory for base datasets");

  OptimizeArgs oa;
  auto* opt = app.add_subcommand("optimize", "search a design space");
  opt->add_option("--space", oa.space)->required()->check(CLI::ExistingFile);
  opt->add_option("--model", oa.model, "workload (default: named by the space)");
  opt->add_option("--objective", oa.objective);
  opt->add_option("--direction", oa.direction)->check(CLI::IsMember({"maximize", "minimize"}));
  opt->add_option("--constraint", oa.constraints, "metric=threshold, e.g. area=2500");
  opt->add_option("--algorithm", oa.algorithm)->check(CLI::IsMember({"rs", "sa", "ga", "tpe"}));
  opt->add_option("--iterations", oa.iterations);
  opt->add_option("--batch", oa.batch);
  opt->add_option("--seed", oa.seed);
  opt->add_flag("--prune", oa.prune);
  opt->add_option("--base-dataset", oa.base_dataset, "directory written by basegen");
  opt->add_option("--rho", oa.rho);
  opt->add_option("--tau", oa.tau);
  opt->add_option("--tau-mode", oa.tau_mode)->check(CLI::IsMember({"cumulative", "per_bin"}));
  opt->add_option("--deprune-interval", oa.deprune_interval);
  opt->add_option("--deprune-stop", oa.deprune_stop);
  opt->add_option("--recovery", oa.recovery);
  opt->add_option("--out", oa.out, "write result.json, convergence.csv and audit.json here");

  fs::path enum_space;
  bool enum_list = false;
  auto* en = app.add_subcommand("enumerate", "count (or list) the valid points of a space");
  en->add_option("--space", enum_space)->required()->check(CLI::ExistingFile);
  en->add_flag("--list", enum_list);

  fs::path bg_space, bg_out;
  std::string bg_model;
  auto* bg = app.add_subcommand("basegen", "build a base dataset by exhaustive evaluation");
  bg->add_option("--space", bg_space)->required()->check(CLI::ExistingFile);
  bg->add_option("--model", bg_model);
  bg->add_option("--out", bg_out)->required();

  fs::path ex_config, ex_out;
  std::size_t ex_seeds = 0, ex_threads = 0;
  auto* ex = app.add_subcommand("experiment", "paired-seed optimization suite");
  ex->add_option("--config", ex_config)->required()->check(CLI::ExistingFile);
  ex->add_option("--out", ex_out, "directory for CSV output");
  ex->add_option("--seeds", ex_seeds, "override the seed count");
  ex->add_option("--threads", ex_threads);

  std::string sv_host = "127.0.0.1";
  int sv_port = 8080;
  std::size_t sv_workers = 0;
  auto* sv = app.add_subcommand("serve", "HTTP API");
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port);
  sv->add_option("--data-dir", data_dir);
  sv->add_option("--workers", sv_workers);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_schema, run_request, run_seed, data_dir);
    if (*opt) return cmd_optimize(oa);
    if (*en) return cmd_enumerate(enum_space, enum_list);
    if (*bg) return cmd_basegen(bg_space, bg_model, bg_out);
    if (*ex) return cmd_experiment(ex_config, ex_out, ex_seeds, ex_threads);
    if (*sv) return cmd_serve(sv_host, sv_port, data_dir.empty() ? fs::path("cimdse-data") : data_dir, sv_workers);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return 1;
  }
  return 0;
}
