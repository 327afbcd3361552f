#include "cimdse/orchestrator.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "cimdse/result_io.hpp"

namespace cimdse {

namespace {

std::int64_t to_int(const std::string& name, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, "'" + name + "' is not an integer: '" + v + "'");
  }
}

std::string get(const ParamMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw Error(ErrorKind::config, "plan lacks '" + name + "'");
  return it->second;
}

// Fields that live at the top level of a design-space schema file.
struct SpaceInfo {
  DesignSpace space;
  std::string workload;
  std::string dataset = "ImageNet";
  double technode_nm = 22;
  std::int64_t input_bits = 8;
  std::int64_t weight_bits = 8;
};

SpaceInfo load_space_info(const std::filesystem::path& file) {
  const json j = read_json_file(file);
  SpaceInfo s;
  s.space = design_space_from_json(j);
  s.workload = j.value("workload", std::string());
  s.dataset = j.value("dataset", s.dataset);
  s.technode_nm = j.value("technode_nm", s.technode_nm);
  s.input_bits = j.value("input_bits", s.input_bits);
  s.weight_bits = j.value("weight_bits", s.weight_bits);
  return s;
}

std::string new_id(const char* prefix) {
  static std::mutex mu;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mu);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%012llx", prefix, static_cast<unsigned long long>(rng() & 0xffffffffffffULL));
  return buf;
}

void append_line(const std::filesystem::path& file, const std::string& line) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error(ErrorKind::io, "cannot append to " + file.string());
  out << line << '\n';
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : sep) + s;
  return out;
}

std::string format_params(const ParamMap& m) {
  std::vector<std::string> parts;
  for (const auto& [k, v] : m) parts.push_back(k + "=" + v);
  return join(parts, ", ");
}

}  // namespace

const char* to_string(TestbenchStatus s) noexcept {
  switch (s) {
    case TestbenchStatus::pending: return "pending";
    case TestbenchStatus::running: return "running";
    case TestbenchStatus::done: return "done";
    case TestbenchStatus::failed: return "failed";
    case TestbenchStatus::skipped: return "skipped";
  }
  return "pending";
}

TestbenchStatus testbench_status_from_string(const std::string& s) {
  for (auto v : {TestbenchStatus::pending, TestbenchStatus::running, TestbenchStatus::done, TestbenchStatus::failed,
                 TestbenchStatus::skipped}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorKind::config, "unknown testbench status '" + s + "'");
}

const char* to_string(SessionState s) noexcept {
  switch (s) {
    case SessionState::awaiting_request: return "awaiting_request";
    case SessionState::awaiting_adjustment: return "awaiting_adjustment";
    case SessionState::awaiting_confirmation: return "awaiting_confirmation";
    case SessionState::running: return "running";
    case SessionState::done: return "done";
    case SessionState::failed: return "failed";
  }
  return "awaiting_request";
}

SessionState session_state_from_string(const std::string& s) {
  for (auto v : {SessionState::awaiting_request, SessionState::awaiting_adjustment, SessionState::awaiting_confirmation,
                 SessionState::running, SessionState::done, SessionState::failed}) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorKind::config, "unknown session state '" + s + "'");
}

const char* to_string(JobState s) noexcept {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "queued";
}

// ---- execution ----------------------------------------------------------------

DesignPoint testbench_point(const ParamMap& r) {
  DesignPoint p;
  p.set("memCellType", get(r, "memCellType"));
  p.set("typeADC", get(r, "typeADC"));
  for (const auto* name : {"rowACIM", "colACIM", "levelADC", "muxColADC", "rowDCIM", "colDCIM", "weightDup"}) {
    p.set(name, to_int(name, get(r, name)));
  }
  return p;
}

SurrogateConfig testbench_config(const ParamMap& r, const SurrogateConfig& base) {
  auto cfg = base.at_node(static_cast<double>(to_int("technode", get(r, "technode"))));
  cfg.input_bits = to_int("inputBits", get(r, "inputBits"));
  cfg.weight_bits = to_int("weightBits", get(r, "weightBits"));
  cfg.validate();
  return cfg;
}

std::shared_ptr<const BaseDataset> BaseDatasetCache::get(const std::string& model, const std::filesystem::path& space_file,
                                                         const SurrogateConfig& cfg, std::size_t parallelism) {
  std::lock_guard lock(mu_);
  if (auto it = cache_.find(model); it != cache_.end()) return it->second;
  std::shared_ptr<const BaseDataset> data;
  const auto dir = dir_.empty() ? std::filesystem::path() : dir_ / model;
  if (!dir.empty() && std::filesystem::exists(dir / "manifest.json")) {
    data = std::make_shared<const BaseDataset>(load_base_dataset(dir));
  } else {
    const auto info = load_space_info(space_file);
    auto node_cfg = cfg.at_node(info.technode_nm);
    node_cfg.input_bits = info.input_bits;
    node_cfg.weight_bits = info.weight_bits;
    SurrogateEvaluator eval(make_workload(info.workload.empty() ? model : info.workload, info.dataset), node_cfg,
                            parallelism);
    data = std::make_shared<const BaseDataset>(
        build_base_dataset(info.space, eval, model, space_file.filename().string()));
    if (!dir.empty()) save_base_dataset(*data, dir);
  }
  cache_[model] = data;
  return data;
}

ExecutionOutcome execute_plan(const ExecutionPlan& plan, const ExecutionOptions& opts, const ProgressFn& progress) {
  ExecutionOutcome out;
  auto notify = [&](std::size_t i, TestbenchStatus s) {
    out.testbenches[i].status = s;
    if (progress) progress(i, s);
  };
  for (const auto& note : plan.notes) out.logs.push_back("note: " + note);

  if (!plan.optimization) {
    for (const auto& tb : plan.testbenches) out.testbenches.push_back({tb, TestbenchStatus::pending, std::nullopt, {}});
    for (std::size_t i = 0; i < plan.testbenches.size(); ++i) {
      if (!out.ok) {
        notify(i, TestbenchStatus::skipped);
        continue;
      }
      notify(i, TestbenchStatus::running);
      try {
        const auto& tb = plan.testbenches[i];
        const auto workload = make_workload(get(tb, "model"), get(tb, "dataset"));
        const auto cfg = testbench_config(tb, opts.surrogate);
        const auto point = testbench_point(tb);
        out.testbenches[i].record = opts.simulate ? opts.simulate(point, workload, cfg) : simulate(point, workload, cfg);
        out.logs.push_back("testbench " + std::to_string(i + 1) + ": simulated " + workload.name);
        notify(i, TestbenchStatus::done);
      } catch (const std::exception& e) {
        out.ok = false;
        out.testbenches[i].error = e.what();
        out.logs.push_back("testbench " + std::to_string(i + 1) + " failed: " + e.what());
        notify(i, TestbenchStatus::failed);
      }
    }
    return out;
  }

  const auto& o = *plan.optimization;
  out.testbenches.push_back({plan.testbenches.front(), TestbenchStatus::pending, std::nullopt, {}});
  notify(0, TestbenchStatus::running);
  try {
    const auto info = load_space_info(opts.schema_dir / o.space_file);
    DesignSpace space = info.space;
    for (const auto& [name, value] : o.pinned) {
      if (!space.has(name)) {
        out.logs.push_back("pinned " + name + "=" + value + " is not a parameter of " + o.space_file + "; ignored");
        continue;
      }
      const auto& def = space.param(name);
      Value v = std::holds_alternative<std::string>(def.values.front()) ? Value(value) : Value(to_int(name, value));
      if (!def.admits(v)) throw Error(ErrorKind::config, "pinned " + name + "=" + value + " is not admissible");
      space = space.with_values(name, {v});
    }
    if (count_valid(space) == 0) throw Error(ErrorKind::config, "pinned values leave no valid design point");

    auto cfg = opts.surrogate.at_node(o.technode_nm);
    cfg.input_bits = info.input_bits;
    cfg.weight_bits = info.weight_bits;
    const auto workload = make_workload(o.model, o.dataset);
    std::unique_ptr<Evaluator> eval;
    if (opts.simulate) {
      eval = std::make_unique<FunctionEvaluator>(
          [&, cfg, workload](const DesignPoint& p) { return opts.simulate(p, workload, cfg); });
    } else {
      eval = std::make_unique<SurrogateEvaluator>(workload, cfg, opts.parallelism);
    }

    if (o.pruning) {
      BaseDatasetCache local;
      auto* cache = opts.base_cache ? opts.base_cache : &local;
      auto base = cache->get(o.base_model, opts.schema_dir / o.base_space_file, opts.surrogate, opts.parallelism);
      auto pr = pruned_run(space, *base, o.objective, o.constraints, o.optimizer, *o.pruning, *eval, opts.runtime);
      out.optimization = std::move(pr.result);
      out.audit = to_json(pr.audit);
    } else {
      out.optimization = run(space, o.objective, o.constraints, o.optimizer, *eval, opts.runtime);
    }
    for (const auto& n : out.optimization->notes) out.logs.push_back(n);
    out.logs.push_back("optimization finished: " + std::string(to_string(out.optimization->status)) + ", " +
                       std::to_string(out.optimization->history.size()) + " unique evaluations");
    if (out.optimization->best) out.testbenches[0].record = out.optimization->best->record;
    notify(0, TestbenchStatus::done);
  } catch (const std::exception& e) {
    out.ok = false;
    out.testbenches[0].error = e.what();
    out.logs.push_back(std::string("optimization failed: ") + e.what());
    notify(0, TestbenchStatus::failed);
  }
  return out;
}

// ---- JSON -----------------------------------------------------------------------

json to_json(const Turn& t) { return json{{"role", t.role}, {"kind", t.kind}, {"text", t.text}, {"data", t.data}}; }

Turn turn_from_json(const json& j) {
  Turn t;
  try {
    t.role = j.at("role").get<std::string>();
    t.kind = j.value("kind", "message");
    t.text = j.value("text", "");
    t.data = j.value("data", json(nullptr));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, std::string("malformed turn: ") + e.what());
  }
  return t;
}

json to_json(const Session& s) {
  json log = json::array();
  for (const auto& t : s.log) log.push_back(to_json(t));
  return json{{"id", s.id},
              {"state", to_string(s.state)},
              {"log", log},
              {"parsed", s.parsed ? to_json(*s.parsed) : json(nullptr)},
              {"job_id", s.job_id ? json(*s.job_id) : json(nullptr)}};
}

namespace {

json outcome_json(const TestbenchOutcome& t, std::size_t index) {
  return json{{"testbench", index},
              {"config", t.config},
              {"status", to_string(t.status)},
              {"record", t.record ? to_json(*t.record) : json(nullptr)},
              {"error", t.error}};
}

}  // namespace

json to_json(const Job& j) {
  json tbs = json::array();
  for (std::size_t i = 0; i < j.testbenches.size(); ++i) tbs.push_back(outcome_json(j.testbenches[i], i + 1));
  return json{{"id", j.id},
              {"session_id", j.session_id},
              {"plan", to_json(j.plan)},
              {"plan_hash", j.plan.hash},
              {"state", to_string(j.state)},
              {"testbenches", tbs},
              {"optimization", j.optimization ? to_json(*j.optimization) : json(nullptr)},
              {"audit", j.audit},
              {"logs", j.logs}};
}

Job job_from_json(const json& j) {
  Job job;
  try {
    job.id = j.at("id").get<std::string>();
    job.session_id = j.at("session_id").get<std::string>();
    job.plan = execution_plan_from_json(j.at("plan"));
    const auto state = j.at("state").get<std::string>();
    bool known = false;
    for (auto s : {JobState::queued, JobState::running, JobState::done, JobState::failed}) {
      if (state == to_string(s)) job.state = s, known = true;
    }
    if (!known) throw Error(ErrorKind::io, "unknown job state '" + state + "'");
    for (const auto& t : j.at("testbenches")) {
      TestbenchOutcome o;
      o.config = t.at("config").get<ParamMap>();
      o.status = testbench_status_from_string(t.at("status").get<std::string>());
      if (!t.at("record").is_null()) o.record = record_from_json(t.at("record"));
      o.error = t.value("error", "");
      job.testbenches.push_back(std::move(o));
    }
    if (!j.at("optimization").is_null()) job.optimization = opt_result_from_json(j.at("optimization"));
    job.audit = j.value("audit", json(nullptr));
    job.logs = j.at("logs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, std::string("malformed job: ") + e.what());
  }
  return job;
}

json job_status_json(const Job& j) {
  json statuses = json::array();
  for (const auto& t : j.testbenches) statuses.push_back(to_string(t.status));
  return json{{"id", j.id},
              {"session_id", j.session_id},
              {"plan_hash", j.plan.hash},
              {"category", to_string(j.plan.category)},
              {"state", to_string(j.state)},
              {"statuses", statuses}};
}

json job_results_json(const Job& j) {
  json out = job_status_json(j);
  if (j.state == JobState::queued || j.state == JobState::running) return out;
  json tbs = json::array();
  for (std::size_t i = 0; i < j.testbenches.size(); ++i) tbs.push_back(outcome_json(j.testbenches[i], i + 1));
  out["testbenches"] = tbs;
  out["logs"] = j.logs;
  out["notes"] = j.plan.notes;
  if (j.optimization) {
    const auto& r = *j.optimization;
    const auto& o = *j.plan.optimization;
    json conv = json::array();
    for (const auto& c : r.convergence) {
      conv.push_back({{"iteration", c.iteration}, {"evaluations", c.evaluations}, {"best", c.best ? json(*c.best) : json(nullptr)}});
    }
    out["optimization"] = json{{"status", to_string(r.status)},
                               {"objective", to_json(o.objective)},
                               {"best", r.best ? to_json(*r.best) : json(nullptr)},
                               {"first_best_iteration", r.first_best_iteration},
                               {"estimated_runtime_min", r.estimated_runtime_min},
                               {"runtime_clamped", r.runtime_clamped},
                               {"unique_evaluations", r.history.size()},
                               {"convergence", conv},
                               {"convergence_csv", "/jobs/" + j.id + "/convergence.csv"},
                               {"notes", r.notes},
                               {"pruning", j.audit}};
  }
  return out;
}

// ---- orchestrator ---------------------------------------------------------------

Orchestrator::Orchestrator(OrchestratorConfig cfg, std::shared_ptr<InterpreterBackend> backend)
    : cfg_(std::move(cfg)),
      backend_(std::move(backend)),
      schema_(load_request_schema(cfg_.request_schema)),
      base_cache_(cfg_.data_dir.empty() ? std::filesystem::path() : cfg_.data_dir / "base") {
  if (!backend_) throw Error(ErrorKind::config, "orchestrator needs an interpreter backend");
  if (cfg_.execution.base_cache == nullptr) cfg_.execution.base_cache = &base_cache_;
  if (!cfg_.data_dir.empty()) load();
  std::size_t n = cfg_.workers ? cfg_.workers : std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker(); });
}

Orchestrator::~Orchestrator() {
  {
    std::lock_guard lock(jobs_mu_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

std::shared_ptr<Orchestrator::SessionSlot> Orchestrator::slot(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorKind::not_found, "no session '" + id + "'");
  return it->second;
}

void Orchestrator::persist_event(const std::string& session_id, const json& event) {
  if (cfg_.data_dir.empty()) return;
  std::lock_guard lock(persist_mu_);
  append_line(cfg_.data_dir / "sessions" / (session_id + ".jsonl"), event.dump());
}

void Orchestrator::persist_job(const Job& job) {
  if (cfg_.data_dir.empty()) return;
  std::lock_guard lock(persist_mu_);
  const auto dir = cfg_.data_dir / "jobs" / job.id;
  std::filesystem::create_directories(dir);
  write_json_file(dir / "job.json", to_json(job));
  if (job.optimization) {
    std::ofstream(dir / "convergence.csv") << cimdse::convergence_csv(*job.optimization, job.plan.optimization->objective);
  }
}

void Orchestrator::record(SessionSlot& s, const Turn& t) {
  s.session.log.push_back(t);
  persist_event(s.session.id, json{{"event", "turn"}, {"turn", to_json(t)}});
}

void Orchestrator::set_state(SessionSlot& s, SessionState st) {
  s.session.state = st;
  persist_event(s.session.id, json{{"event", "state"}, {"state", to_string(st)}});
}

void Orchestrator::set_parsed(SessionSlot& s, const ParsedRequest& p) {
  s.session.parsed = p;
  persist_event(s.session.id, json{{"event", "parsed"}, {"parsed", to_json(p)}});
}

Turn Orchestrator::system_turn(SessionSlot& s, std::string kind, std::string text, json data) {
  Turn t{"system", std::move(kind), std::move(text), std::move(data)};
  record(s, t);
  return t;
}

Turn Orchestrator::report(const ParsedRequest& p, const std::string& lead) {
  std::ostringstream out;
  out << lead << " Category: " << to_string(p.category) << ".";
  if (p.testbenches.size() > 1 || !p.testbenches.front().empty()) {
    for (std::size_t i = 0; i < p.testbenches.size(); ++i) {
      out << " Testbench " << i + 1 << ": " << (p.testbenches[i].empty() ? "(no specialized parameters)" : format_params(p.testbenches[i])) << ".";
    }
  }
  out << " Common: " << (p.common.empty() ? "(none)" : format_params(p.common)) << ".";
  if (!p.missing.empty()) {
    std::vector<std::string> m;
    for (const auto& x : p.missing) m.push_back(x.name + (x.location == kCommon ? "" : " (" + location_string(x.location) + ")"));
    out << " Missing: " << join(m, ", ") << ". Provide values or reply \"use default values\".";
  }
  if (!p.invalid.empty()) {
    std::vector<std::string> m;
    for (const auto& x : p.invalid) m.push_back(x.name + "=" + x.value + " (" + location_string(x.location) + "): " + x.reason);
    out << " Invalid: " << join(m, "; ") << ".";
  }
  json data{{"parsed", to_json(p)}};
  if (p.ready()) {
    try {
      const auto plan = make_plan(p, schema_);
      data["plan"] = to_json(plan);
      out << " Ready to run; confirm to execute plan " << plan.hash << ".";
    } catch (const Error& e) {
      out << " " << e.what();
    }
  }
  return Turn{"system", "report", out.str(), data};
}

Session Orchestrator::create_session() {
  auto s = std::make_shared<SessionSlot>();
  s->session.id = new_id("s-");
  {
    std::lock_guard lock(sessions_mu_);
    sessions_[s->session.id] = s;
  }
  persist_event(s->session.id, json{{"event", "created"}, {"id", s->session.id}});
  return s->session;
}

Turn Orchestrator::submit(const std::string& session_id, const std::string& text) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  const auto state = s->session.state;
  if (state != SessionState::awaiting_request && state != SessionState::awaiting_adjustment) {
    throw Error(ErrorKind::state, std::string("cannot submit a message while ") + to_string(state));
  }
  record(*s, Turn{"user", "message", text, nullptr});
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    return system_turn(*s, "error", "validation error: the message is empty",
                       json{{"kind", to_string(ErrorKind::validation)}});
  }

  if (state == SessionState::awaiting_adjustment && s->session.parsed) {
    if (auto adj = parse_adjustment_text(text, *s->session.parsed, schema_)) {
      try {
        const auto next = cimdse::adjust(*s->session.parsed, *adj, schema_);
        set_parsed(*s, next);
        set_state(*s, next.ready() ? SessionState::awaiting_confirmation : SessionState::awaiting_adjustment);
        auto t = report(next, "Adjustment applied.");
        t.data["adjustment"] = to_json(*adj);
        record(*s, t);
        return t;
      } catch (const Error& e) {
        return system_turn(*s, "error", e.what(), json{{"kind", to_string(e.kind())}});
      }
    }
  }

  try {
    const auto c = classify(text, *backend_, schema_);
    if (c.category == RequestCategory::unknown) {
      return system_turn(*s, "clarification", c.clarification.empty() ? c.rationale : c.clarification,
                         json{{"category", to_string(c.category)}, {"rationale", c.rationale}});
    }
    const auto parsed = parse_params(text, c.category, schema_, *backend_);
    set_parsed(*s, parsed);
    set_state(*s, parsed.ready() ? SessionState::awaiting_confirmation : SessionState::awaiting_adjustment);
    auto t = report(parsed, "Request parsed (" + c.rationale + ").");
    t.data["rationale"] = c.rationale;
    record(*s, t);
    return t;
  } catch (const Error& e) {
    return system_turn(*s, "error", e.what(), json{{"kind", to_string(e.kind())}});
  }
}

Turn Orchestrator::adjust(const std::string& session_id, const AdjustmentRequest& adj) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  const auto state = s->session.state;
  if ((state != SessionState::awaiting_adjustment && state != SessionState::awaiting_confirmation) || !s->session.parsed) {
    throw Error(ErrorKind::state, std::string("cannot adjust while ") + to_string(state));
  }
  record(*s, Turn{"user", "adjustment", "", to_json(adj)});
  const auto next = cimdse::adjust(*s->session.parsed, adj, schema_);
  set_parsed(*s, next);
  set_state(*s, next.ready() ? SessionState::awaiting_confirmation : SessionState::awaiting_adjustment);
  auto t = report(next, "Adjustment applied.");
  record(*s, t);
  return t;
}

Job Orchestrator::confirm(const std::string& session_id) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  if (s->session.state != SessionState::awaiting_confirmation || !s->session.parsed) {
    throw Error(ErrorKind::state, std::string("cannot confirm while ") + to_string(s->session.state));
  }
  Job job;
  job.id = new_id("j-");
  job.session_id = session_id;
  job.plan = make_plan(*s->session.parsed, schema_);
  for (const auto& tb : job.plan.testbenches) {
    job.testbenches.push_back({tb, TestbenchStatus::pending, std::nullopt, {}});
    if (job.plan.optimization) break;
  }
  s->session.job_id = job.id;
  record(*s, Turn{"user", "confirm", "", json{{"plan_hash", job.plan.hash}}});
  set_state(*s, SessionState::running);
  system_turn(*s, "job", "Job " + job.id + " queued.", json{{"job_id", job.id}, {"plan_hash", job.plan.hash}});
  persist_job(job);
  {
    std::lock_guard jl(jobs_mu_);
    jobs_[job.id] = job;
    queue_.push_back(job.id);
  }
  jobs_cv_.notify_all();
  return job;
}

Session Orchestrator::session(const std::string& id) const {
  auto s = slot(id);
  std::lock_guard lock(s->mu);
  return s->session;
}

std::vector<std::string> Orchestrator::session_ids() const {
  std::lock_guard lock(sessions_mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

Job Orchestrator::job(const std::string& id) const {
  std::lock_guard lock(jobs_mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorKind::not_found, "no job '" + id + "'");
  return it->second;
}

std::size_t Orchestrator::job_count() const {
  std::lock_guard lock(jobs_mu_);
  return jobs_.size();
}

std::string Orchestrator::convergence_csv(const std::string& job_id) const {
  const auto j = job(job_id);
  if (!j.optimization || (j.state != JobState::done && j.state != JobState::failed)) {
    throw Error(ErrorKind::not_found, "job '" + job_id + "' has no convergence data");
  }
  return cimdse::convergence_csv(*j.optimization, j.plan.optimization->objective);
}

bool Orchestrator::wait(const std::string& job_id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(jobs_mu_);
  return jobs_cv_.wait_for(lock, timeout, [&] {
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw Error(ErrorKind::not_found, "no job '" + job_id + "'");
    return it->second.state == JobState::done || it->second.state == JobState::failed;
  });
}

void Orchestrator::worker() {
  while (true) {
    std::string id;
    {
      std::unique_lock lock(jobs_mu_);
      jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
    }
    run_job(id);
  }
}

void Orchestrator::run_job(const std::string& job_id) {
  ExecutionPlan plan;
  std::string session_id;
  {
    std::lock_guard lock(jobs_mu_);
    auto& j = jobs_.at(job_id);
    j.state = JobState::running;
    plan = j.plan;
    session_id = j.session_id;
  }
  jobs_cv_.notify_all();
  auto progress = [&](std::size_t i, TestbenchStatus st) {
    std::lock_guard lock(jobs_mu_);
    auto& j = jobs_.at(job_id);
    if (i < j.testbenches.size()) j.testbenches[i].status = st;
  };
  ExecutionOutcome outcome;
  try {
    outcome = execute_plan(plan, cfg_.execution, progress);
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.logs.push_back(std::string("execution aborted: ") + e.what());
  }
  Job snapshot;
  {
    std::lock_guard lock(jobs_mu_);
    auto& j = jobs_.at(job_id);
    if (!outcome.testbenches.empty()) j.testbenches = std::move(outcome.testbenches);
    j.optimization = std::move(outcome.optimization);
    j.audit = std::move(outcome.audit);
    j.logs = std::move(outcome.logs);
    j.state = outcome.ok ? JobState::done : JobState::failed;
    snapshot = j;
  }
  try {
    persist_job(snapshot);
  } catch (const std::exception& e) {
    std::lock_guard lock(jobs_mu_);
    jobs_.at(job_id).logs.push_back(std::string("persistence failed: ") + e.what());
  }
  if (auto s = [&]() -> std::shared_ptr<SessionSlot> {
        std::lock_guard lock(sessions_mu_);
        auto it = sessions_.find(session_id);
        return it == sessions_.end() ? nullptr : it->second;
      }()) {
    std::lock_guard lock(s->mu);
    const bool ok = snapshot.state == JobState::done;
    set_state(*s, ok ? SessionState::done : SessionState::failed);
    std::string text = "Job " + job_id + (ok ? " finished." : " failed.");
    if (snapshot.optimization && snapshot.optimization->best) {
      text += " Best point: " + snapshot.optimization->best->point.key() + ".";
    }
    system_turn(*s, "job", text, job_status_json(snapshot));
  }
  jobs_cv_.notify_all();
}

void Orchestrator::load() {
  namespace fs = std::filesystem;
  const auto sdir = cfg_.data_dir / "sessions";
  if (fs::exists(sdir)) {
    for (const auto& entry : fs::directory_iterator(sdir)) {
      if (entry.path().extension() != ".jsonl") continue;
      auto s = std::make_shared<SessionSlot>();
      s->session.id = entry.path().stem().string();
      std::ifstream in(entry.path());
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json ev;
        try {
          ev = json::parse(line);
        } catch (const json::exception&) {
          continue;  // torn final line
        }
        const auto kind = ev.value("event", "");
        if (kind == "turn") s->session.log.push_back(turn_from_json(ev.at("turn")));
        else if (kind == "state") s->session.state = session_state_from_string(ev.at("state").get<std::string>());
        else if (kind == "parsed") s->session.parsed = parsed_request_from_json(ev.at("parsed"));
      }
      for (const auto& t : s->session.log) {
        if (t.kind == "job" && t.data.is_object() && t.data.contains("job_id")) s->session.job_id = t.data.at("job_id").get<std::string>();
      }
      sessions_[s->session.id] = s;
    }
  }
  const auto jdir = cfg_.data_dir / "jobs";
  if (fs::exists(jdir)) {
    for (const auto& entry : fs::directory_iterator(jdir)) {
      const auto file = entry.path() / "job.json";
      if (!fs::exists(file)) continue;
      auto job = job_from_json(read_json_file(file));
      if (job.state == JobState::queued || job.state == JobState::running) {
        job.state = JobState::failed;
        job.logs.push_back("interrupted by a server restart");
        for (auto& t : job.testbenches) {
          if (t.status != TestbenchStatus::done) t.status = TestbenchStatus::skipped;
        }
        persist_job(job);
        if (auto it = sessions_.find(job.session_id); it != sessions_.end()) {
          it->second->session.state = SessionState::failed;
          persist_event(job.session_id, json{{"event", "state"}, {"state", to_string(SessionState::failed)}});
        }
      }
      jobs_[job.id] = std::move(job);
    }
  }
}

}  // namespace cimdse
