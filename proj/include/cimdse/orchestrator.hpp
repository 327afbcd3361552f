#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cimdse/json_io.hpp"
#include "cimdse/pruning.hpp"
#include "cimdse/request_engine.hpp"
#include "cimdse/runtime_model.hpp"
#include "cimdse/surrogate.hpp"

namespace cimdse {

// ---- plan execution ---------------------------------------------------------

enum class TestbenchStatus { pending, running, done, failed, skipped };
const char* to_string(TestbenchStatus s) noexcept;
TestbenchStatus testbench_status_from_string(const std::string& s);

using SimulateFn = std::function<PpaRecord(const DesignPoint&, const Workload&, const SurrogateConfig&)>;

// Base datasets keyed by model, built on first use by exhaustive surrogate
// evaluation of the model's design space. Optionally mirrored on disk.
class BaseDatasetCache {
 public:
  explicit BaseDatasetCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}
  std::shared_ptr<const BaseDataset> get(const std::string& model, const std::filesystem::path& space_file,
                                         const SurrogateConfig& cfg, std::size_t parallelism);

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const BaseDataset>> cache_;
};

struct ExecutionOptions {
  std::filesystem::path schema_dir = std::filesystem::path(CIMDSE_DATA_DIR) / "schemas";
  SurrogateConfig surrogate;
  RuntimeCostModel runtime = default_runtime_model();
  std::size_t parallelism = 1;  // evaluations per batch in flight
  SimulateFn simulate;          // empty = surrogate
  BaseDatasetCache* base_cache = nullptr;
};

struct TestbenchOutcome {
  ParamMap config;
  TestbenchStatus status = TestbenchStatus::pending;
  std::optional<PpaRecord> record;
  std::string error;
};

struct ExecutionOutcome {
  bool ok = true;
  std::vector<TestbenchOutcome> testbenches;
  std::optional<OptResult> optimization;
  json audit;  // PruningAudit, null when unpruned
  std::vector<std::string> logs;
};

// Simulation plans run testbenches in order; after the first failure the
// rest are skipped. Optimization plans run one (pruned) search.
using ProgressFn = std::function<void(std::size_t testbench, TestbenchStatus status)>;
ExecutionOutcome execute_plan(const ExecutionPlan& plan, const ExecutionOptions& opts, const ProgressFn& progress = {});

// Design point for a resolved simulation testbench.
DesignPoint testbench_point(const ParamMap& resolved);
// Surrogate coefficients at the testbench's node and precisions.
SurrogateConfig testbench_config(const ParamMap& resolved, const SurrogateConfig& base);

// ---- sessions and jobs ------------------------------------------------------

enum class SessionState { awaiting_request, awaiting_adjustment, awaiting_confirmation, running, done, failed };
const char* to_string(SessionState s) noexcept;
SessionState session_state_from_string(const std::string& s);

struct Turn {
  std::string role;  // user, system
  std::string kind;  // message, report, clarification, error, adjustment, job
  std::string text;
  json data;
  friend bool operator==(const Turn&, const Turn&) = default;
};

json to_json(const Turn& t);
Turn turn_from_json(const json& j);

struct Session {
  std::string id;
  SessionState state = SessionState::awaiting_request;
  std::vector<Turn> log;
  std::optional<ParsedRequest> parsed;
  std::optional<std::string> job_id;
};

json to_json(const Session& s);

enum class JobState { queued, running, done, failed };
const char* to_string(JobState s) noexcept;

struct Job {
  std::string id;
  std::string session_id;
  ExecutionPlan plan;
  JobState state = JobState::queued;
  std::vector<TestbenchOutcome> testbenches;
  std::optional<OptResult> optimization;
  json audit;
  std::vector<std::string> logs;
};

json to_json(const Job& j);
Job job_from_json(const json& j);
// Status view: no results.
json job_status_json(const Job& j);
// Results view: statuses only while running; full per-testbench results or
// the optimization summary once finished.
json job_results_json(const Job& j);

struct OrchestratorConfig {
  std::filesystem::path data_dir;  // empty = no persistence
  std::filesystem::path request_schema = std::filesystem::path(CIMDSE_DATA_DIR) / "schemas" / "request_schema.json";
  std::size_t workers = 0;         // 0 = hardware concurrency
  ExecutionOptions execution;
};

// Session/job manager. Each session is serialized by its own lock; jobs run on
// a bounded worker pool and are observed by polling.
class Orchestrator {
 public:
  Orchestrator(OrchestratorConfig cfg, std::shared_ptr<InterpreterBackend> backend);
  ~Orchestrator();
  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  const ParamSchema& schema() const { return schema_; }
  const InterpreterBackend& backend() const { return *backend_; }

  Session create_session();
  // Classifies and parses a request, or applies a text adjustment when the
  // session is awaiting one. state error outside awaiting_request/adjustment.
  Turn submit(const std::string& session_id, const std::string& text);
  // Structured adjustment; allowed while awaiting adjustment or confirmation.
  Turn adjust(const std::string& session_id, const AdjustmentRequest& adj);
  // state error unless awaiting_confirmation. Returns the queued job.
  Job confirm(const std::string& session_id);

  Session session(const std::string& id) const;
  std::vector<std::string> session_ids() const;
  Job job(const std::string& id) const;
  std::size_t job_count() const;
  // Convergence CSV of a finished optimization job; not_found otherwise.
  std::string convergence_csv(const std::string& job_id) const;

  // Blocks until the job finishes or the timeout expires; true if finished.
  bool wait(const std::string& job_id, std::chrono::milliseconds timeout) const;

 private:
  struct SessionSlot {
    std::mutex mu;
    Session session;
  };

  std::shared_ptr<SessionSlot> slot(const std::string& id) const;
  void record(SessionSlot& s, const Turn& t);
  void set_state(SessionSlot& s, SessionState st);
  void set_parsed(SessionSlot& s, const ParsedRequest& p);
  Turn report(const ParsedRequest& p, const std::string& lead);
  Turn system_turn(SessionSlot& s, std::string kind, std::string text, json data = nullptr);
  void persist_event(const std::string& session_id, const json& event);
  void persist_job(const Job& job);
  void load();
  void worker();
  void run_job(const std::string& job_id);

  OrchestratorConfig cfg_;
  std::shared_ptr<InterpreterBackend> backend_;
  ParamSchema schema_;
  BaseDatasetCache base_cache_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;

  mutable std::mutex jobs_mu_;
  mutable std::condition_variable jobs_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::string> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;

  std::mutex persist_mu_;
};

// ---- HTTP API -----------------------------------------------------------------

// JSON routes:
//   POST /sessions                     {"text"?}            -> session
//   GET  /sessions                                          -> [ids]
//   GET  /sessions/{id}                                     -> session
//   POST /sessions/{id}/messages       {"text"}             -> {turn, session}
//   POST /sessions/{id}/adjustments    {"ops"} | {"text"}   -> {turn, session}
//   POST /sessions/{id}/confirm                             -> {job, session}
//   GET  /jobs/{id}                                         -> status
//   GET  /jobs/{id}/results                                 -> results
//   GET  /jobs/{id}/convergence.csv                         -> text/csv
//   GET  /health
// Errors: {"error": {"kind", "message"}} with 400/404/409/502/500.
class HttpApi {
 public:
  explicit HttpApi(Orchestrator& orch);
  ~HttpApi();
  // Blocking.
  bool listen(const std::string& host, int port);
  // Binds to a free port and serves on a background thread; returns the port.
  int start(const std::string& host = "127.0.0.1");
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

int http_status_for(ErrorKind kind) noexcept;

}  // namespace cimdse
