#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <fstream>
#include <future>
#include <sstream>

#include "cimdse/orchestrator.hpp"
#include "cimdse/result_io.hpp"
#include "support.hpp"

using namespace cimdse;
using namespace std::chrono_literals;

namespace {

const std::string kMulti =
    "I want to simulate VGG8 on CIFAR-10 on CIM architecture using 8b quantization for both input and weight. I only "
    "want to get the PPA estimation under 22nm, 14nm, and 7nm tech node. The memory device is SRAM. The subarray size "
    "is 128x128 and ADC precision 7bit.";
const std::string kGap =
    "Simulate ResNet-50 on ImageNet at 22nm with 8b input and weight precision, a 128x128 subarray and 6b ADC.";
const std::string kOpt =
    "Optimize ResNet-50 on ImageNet at 22nm for maximum throughput under a power limit of 500 mW with random search, "
    "25 iterations, seed 3.";

OrchestratorConfig config(std::filesystem::path dir = {}, SimulateFn sim = {}) {
  OrchestratorConfig c;
  c.data_dir = std::move(dir);
  c.workers = 2;
  c.execution.simulate = std::move(sim);
  return c;
}

std::shared_ptr<InterpreterBackend> deterministic() { return std::make_shared<DeterministicBackend>(); }

// The session's closing turn is recorded just after the job is marked finished.
SessionState settled(const Orchestrator& o, const std::string& sid) {
  for (int i = 0; i < 500 && o.session(sid).state == SessionState::running; ++i) std::this_thread::sleep_for(10ms);
  return o.session(sid).state;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("orchestrator") {

TEST_CASE("state machine gates execution on confirm") {
  Orchestrator o(config(), deterministic());
  const auto s = o.create_session();
  CHECK(o.session(s.id).state == SessionState::awaiting_request);
  CHECK_THROWS_AS(o.confirm(s.id), Error);
  CHECK(o.job_count() == 0);

  const auto empty = o.submit(s.id, "  ");
  CHECK(empty.kind == "error");
  CHECK(empty.data.at("kind") == "validation");
  CHECK(o.session(s.id).state == SessionState::awaiting_request);

  const auto unk = o.submit(s.id, "please help me");
  CHECK(unk.kind == "clarification");
  CHECK(o.session(s.id).state == SessionState::awaiting_request);

  const auto gap = o.submit(s.id, kGap);
  CHECK(gap.kind == "report");
  CHECK(gap.text.find("memCellType") != std::string::npos);
  CHECK(o.session(s.id).state == SessionState::awaiting_adjustment);
  CHECK_THROWS_AS(o.confirm(s.id), Error);
  CHECK(o.job_count() == 0);

  const auto filled = o.submit(s.id, "use default values");
  CHECK(filled.data.contains("plan"));
  CHECK(o.session(s.id).state == SessionState::awaiting_confirmation);
  CHECK(o.job_count() == 0);

  const auto job = o.confirm(s.id);
  CHECK(o.job_count() == 1);
  CHECK_THROWS_AS(o.submit(s.id, kGap), Error);
  CHECK_THROWS_AS(o.confirm(s.id), Error);
  REQUIRE(o.wait(job.id, 30s));
  CHECK(settled(o, s.id) == SessionState::done);
  CHECK_THROWS_AS(o.session("nope"), Error);
  CHECK_THROWS_AS(o.job("nope"), Error);
}

TEST_CASE("results keep testbench order") {
  Orchestrator o(config(), deterministic());
  const auto s = o.create_session();
  o.submit(s.id, kMulti);
  const auto job = o.confirm(s.id);
  REQUIRE(o.wait(job.id, 30s));
  const auto j = o.job(job.id);
  CHECK(j.state == JobState::done);
  REQUIRE(j.testbenches.size() == 3);

  // Oracle: simulate each plan testbench directly.
  const auto w = make_workload("VGG8", "CIFAR-10");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& tb = j.plan.testbenches[i];
    CHECK(j.testbenches[i].config == tb);
    CHECK(j.testbenches[i].status == TestbenchStatus::done);
    REQUIRE(j.testbenches[i].record);
    CHECK(*j.testbenches[i].record == simulate(testbench_point(tb), w, testbench_config(tb, SurrogateConfig{})));
  }
  CHECK(j.testbenches[0].config.at("technode") == "22");
  CHECK(j.testbenches[2].config.at("technode") == "7");
  CHECK(j.testbenches[2].record->area_mm2 < j.testbenches[0].record->area_mm2);
  CHECK_THROWS_AS(o.convergence_csv(job.id), Error);
}

TEST_CASE("a failing testbench skips the rest") {
  std::atomic<int> calls{0};
  SimulateFn sim = [&](const DesignPoint& p, const Workload& w, const SurrogateConfig& c) {
    if (++calls == 2) throw Error(ErrorKind::model_config, "simulator crashed");
    return simulate(p, w, c);
  };
  Orchestrator o(config({}, sim), deterministic());
  const auto s = o.create_session();
  o.submit(s.id, kMulti);
  const auto job = o.confirm(s.id);
  REQUIRE(o.wait(job.id, 30s));
  const auto j = o.job(job.id);
  CHECK(j.state == JobState::failed);
  REQUIRE(j.testbenches.size() == 3);
  CHECK(j.testbenches[0].status == TestbenchStatus::done);
  CHECK(j.testbenches[1].status == TestbenchStatus::failed);
  CHECK(j.testbenches[1].error.find("simulator crashed") != std::string::npos);
  CHECK(j.testbenches[2].status == TestbenchStatus::skipped);
  CHECK(calls == 2);
  CHECK(settled(o, s.id) == SessionState::failed);
}

TEST_CASE("running jobs report statuses only") {
  std::promise<void> gate;
  auto opened = gate.get_future().share();
  SimulateFn sim = [opened](const DesignPoint& p, const Workload& w, const SurrogateConfig& c) {
    opened.wait();
    return simulate(p, w, c);
  };
  Orchestrator o(config({}, sim), deterministic());
  const auto s = o.create_session();
  o.submit(s.id, kMulti);
  const auto job = o.confirm(s.id);
  const auto running = job_results_json(o.job(job.id));
  CHECK(running.at("statuses").size() == 3);
  CHECK_FALSE(running.contains("testbenches"));
  gate.set_value();
  REQUIRE(o.wait(job.id, 30s));
  const auto done = job_results_json(o.job(job.id));
  CHECK(done.at("testbenches").size() == 3);
}

TEST_CASE("optimization job carries the search result") {
  Orchestrator o(config(), deterministic());
  const auto s = o.create_session();
  o.submit(s.id, kOpt);
  REQUIRE(o.session(s.id).state == SessionState::awaiting_confirmation);
  const auto job = o.confirm(s.id);
  REQUIRE(o.wait(job.id, 60s));
  const auto j = o.job(job.id);
  CHECK(j.state == JobState::done);
  REQUIRE(j.optimization);
  const auto& r = *j.optimization;
  CHECK(r.history.size() > 0);

  const auto res = job_results_json(j);
  const auto& opt = res.at("optimization");
  CHECK(opt.at("best") == to_json(*r.best));
  CHECK(opt.at("first_best_iteration") == r.first_best_iteration);
  CHECK(opt.at("estimated_runtime_min") == r.estimated_runtime_min);
  CHECK(o.convergence_csv(job.id) == convergence_csv(r, j.plan.optimization->objective));

  // Same plan, same seed: identical result.
  const auto s2 = o.create_session();
  o.submit(s2.id, kOpt);
  const auto job2 = o.confirm(s2.id);
  REQUIRE(o.wait(job2.id, 60s));
  CHECK(to_json(*o.job(job2.id).optimization) == to_json(r));
}

TEST_CASE("persisted state reloads byte-identically") {
  const auto dir = test::scratch("orchestrator_persist");
  std::string sid, jid;
  json session_before, job_before;
  {
    Orchestrator o(config(dir), deterministic());
    const auto s = o.create_session();
    sid = s.id;
    o.submit(sid, kMulti);
    const auto job = o.confirm(sid);
    jid = job.id;
    REQUIRE(o.wait(jid, 30s));
    settled(o, sid);
    session_before = to_json(o.session(sid));
    job_before = to_json(o.job(jid));
  }
  const auto file_before = slurp(dir / "jobs" / jid / "job.json");
  Orchestrator again(config(dir), deterministic());
  CHECK(to_json(again.session(sid)).dump() == session_before.dump());
  CHECK(to_json(again.job(jid)).dump() == job_before.dump());
  CHECK(slurp(dir / "jobs" / jid / "job.json") == file_before);
  CHECK(to_json(job_from_json(job_before)).dump() == job_before.dump());
}

TEST_CASE("sessions do not interleave") {
  Orchestrator o(config(), deterministic());
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(o.create_session().id);
  std::vector<std::thread> ts;
  for (int i = 0; i < 8; ++i) {
    ts.emplace_back([&, i] { o.submit(ids[i], i % 2 ? kMulti : kGap); });
  }
  for (auto& t : ts) t.join();
  for (int i = 0; i < 8; ++i) {
    const auto s = o.session(ids[i]);
    REQUIRE(s.log.size() == 2);
    CHECK(s.log[0].text == (i % 2 ? kMulti : kGap));
    CHECK(s.state == (i % 2 ? SessionState::awaiting_confirmation : SessionState::awaiting_adjustment));
  }
}

}  // TEST_SUITE

TEST_SUITE("http_api") {

TEST_CASE("end-to-end over HTTP") {
  Orchestrator o(config(), deterministic());
  HttpApi api(o);
  const int port = api.start();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body).at("backend") == "deterministic");

  auto created = cli.Post("/sessions", json{{"text", kGap}}.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto session = json::parse(created->body);
  const std::string id = session.at("id");
  CHECK(session.at("state") == "awaiting_adjustment");

  auto early = cli.Post("/sessions/" + id + "/confirm", "", "application/json");
  REQUIRE(early);
  CHECK(early->status == 409);
  CHECK(json::parse(early->body).at("error").at("kind") == "state");

  const AdjustmentRequest adj{{AdjustOp::set_value(kCommon, "memCellType", "RRAM")}};
  auto adjusted = cli.Post("/sessions/" + id + "/adjustments", to_json(adj).dump(), "application/json");
  REQUIRE(adjusted);
  CHECK(adjusted->status == 200);
  CHECK(json::parse(adjusted->body).at("session").at("state") == "awaiting_confirmation");

  auto confirmed = cli.Post("/sessions/" + id + "/confirm", "", "application/json");
  REQUIRE(confirmed);
  CHECK(confirmed->status == 202);
  const std::string jid = json::parse(confirmed->body).at("job").at("id");
  REQUIRE(o.wait(jid, 30s));

  auto status = cli.Get("/jobs/" + jid);
  REQUIRE(status);
  CHECK(json::parse(status->body).at("state") == "done");
  auto results = cli.Get("/jobs/" + jid + "/results");
  REQUIRE(results);
  const auto r = json::parse(results->body);
  REQUIRE(r.at("testbenches").size() == 1);
  CHECK(r.at("testbenches")[0].at("config").at("memCellType") == "RRAM");

  auto list = cli.Get("/sessions");
  REQUIRE(list);
  CHECK(json::parse(list->body).at("sessions").size() == 1);

  auto missing = cli.Get("/jobs/j-nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto junk = cli.Post("/sessions/" + id + "/messages", "{not json", "application/json");
  REQUIRE(junk);
  CHECK(junk->status == 400);
  auto csv = cli.Get("/jobs/" + jid + "/convergence.csv");
  REQUIRE(csv);
  CHECK(csv->status == 404);
  api.stop();
}

TEST_CASE("error kinds map to status codes") {
  CHECK(http_status_for(ErrorKind::validation) == 400);
  CHECK(http_status_for(ErrorKind::not_found) == 404);
  CHECK(http_status_for(ErrorKind::state) == 409);
  CHECK(http_status_for(ErrorKind::backend) == 502);
}

}  // TEST_SUITE
