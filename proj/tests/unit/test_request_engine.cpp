#include <doctest.h>
#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include "cimdse/request_engine.hpp"
#include "support.hpp"

using namespace cimdse;

namespace {

const ParamSchema& schema() {
  static const ParamSchema s = load_request_schema(test::data("schemas/request_schema.json"));
  return s;
}

struct CorpusItem {
  std::string id, category, text;
};

std::vector<CorpusItem> corpus() {
  std::vector<CorpusItem> out;
  std::ifstream in(test::data("corpus/requests.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back({j.at("id"), j.at("category"), j.at("text")});
  }
  return out;
}

std::string text_of(const std::string& id) {
  for (const auto& c : corpus())
    if (c.id == id) return c.text;
  FAIL("no corpus item " << id);
  return {};
}

ParsedRequest parse_text(const std::string& text) {
  DeterministicBackend b;
  const auto c = classify(text, b, schema());
  return parse_params(text, c.category, schema(), b);
}

// Each parameter sits in at most one scope and indices are 1..n.
void check_partition(const ParsedRequest& p) {
  for (const auto& [name, v] : p.common)
    for (const auto& tb : p.testbenches) CHECK_FALSE(tb.count(name));
  for (const auto& m : p.missing) CHECK(m.location <= p.testbenches.size());
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

}  // namespace

TEST_SUITE("request_engine") {

TEST_CASE("schema loads and aliases resolve") {
  const auto& s = schema();
  CHECK(s.resolve("memCellType") == "memCellType");
  CHECK(s.resolve("MEMCELLTYPE") == "memCellType");
  CHECK_FALSE(s.resolve("flux capacitor"));
  CHECK(s.at("levelADC").check("9") != "");
  CHECK(s.at("levelADC").check("5") == "");
  CHECK(request_schema_from_json(to_json(s)).entries().size() == s.entries().size());

  auto dup = to_json(s);
  dup["entries"].push_back(dup["entries"][0]);
  CHECK(kind_of([&] { request_schema_from_json(dup); }) == ErrorKind::schema);
}

TEST_CASE("classification of the exemplars") {
  DeterministicBackend b;
  CHECK(classify(text_of("sc-01"), b, schema()).category == RequestCategory::single_call);
  CHECK(classify(text_of("mc-01"), b, schema()).category == RequestCategory::multiple_call);
  CHECK(classify(text_of("tad-01"), b, schema()).category == RequestCategory::testbench_auto_design);
  CHECK(classify(text_of("opt-01"), b, schema()).category == RequestCategory::ppa_optimization);

  const auto unk = classify("please help me", b, schema());
  CHECK(unk.category == RequestCategory::unknown);
  CHECK_FALSE(unk.clarification.empty());
  CHECK(kind_of([&] { classify("   ", b, schema()); }) == ErrorKind::validation);
  CHECK(kind_of([&] { parse_params("x", RequestCategory::unknown, schema(), b); }) == ErrorKind::config);
}

TEST_CASE("multiple-call exemplar splits the tech node") {
  const auto p = parse_text(text_of("mc-01"));
  REQUIRE(p.testbenches.size() == 3);
  CHECK(p.testbenches[0].at("technode") == "22");
  CHECK(p.testbenches[1].at("technode") == "14");
  CHECK(p.testbenches[2].at("technode") == "7");
  for (const auto& tb : p.testbenches) CHECK(tb.size() == 1);
  CHECK(p.common.at("memCellType") == "SRAM");
  CHECK(p.common.at("rowACIM") == "128");
  CHECK(p.common.at("colACIM") == "128");
  CHECK(p.common.at("levelADC") == "7");
  CHECK(p.common.at("model") == "VGG8");
  check_partition(p);
  CHECK(p.ready());
}

TEST_CASE("ADC precision list becomes the only specialized parameter") {
  const std::string text =
      "Simulate ResNet-18 on CIFAR-10 on 22nm SRAM with 8b input and weight precision, a 128x128 subarray and "
      "ADC precision 4b, 5b and 6b.";
  const auto p = parse_text(text);
  CHECK(p.category == RequestCategory::multiple_call);

  // Reference splitter over the token stream: every "<n>b" token after the
  // ADC phrase is one testbench value.
  const auto norm = normalize_request_text(text);
  const auto tail = norm.substr(norm.find("adc precision"));
  std::vector<std::string> expect;
  static const std::regex tok(R"((\d+)\s*(?:b|bits?)\b)");
  for (auto it = std::sregex_iterator(tail.begin(), tail.end(), tok); it != std::sregex_iterator(); ++it)
    expect.push_back((*it).str(1));
  REQUIRE(expect == std::vector<std::string>{"4", "5", "6"});

  REQUIRE(p.testbenches.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(p.testbenches[i] == ParamMap{{"levelADC", expect[i]}});
  }
  CHECK_FALSE(p.common.count("levelADC"));
  CHECK(p.common.at("memCellType") == "SRAM");
  check_partition(p);
}

TEST_CASE("missing device is reported at common scope") {
  const auto p = parse_text("Simulate ResNet-50 on ImageNet at 22nm with 8b input and weight precision, a 128x128 "
                            "subarray and 6b ADC.");
  CHECK(p.category == RequestCategory::single_call);
  CHECK(std::find(p.missing.begin(), p.missing.end(), MissingEntry{kCommon, "memCellType"}) != p.missing.end());
  CHECK_FALSE(p.ready());
  CHECK(kind_of([&] { make_plan(p, schema()); }) == ErrorKind::not_ready);
}

TEST_CASE("out-of-schema values are invalid, not dropped") {
  const auto p = parse_text("Simulate VGG8 on CIFAR-10 with 22nm SRAM, 8b input and weight precision, a 128x128 "
                            "subarray and 9b ADC.");
  bool found = false;
  for (const auto& i : p.invalid) found = found || (i.name == "levelADC" && i.value == "9");
  CHECK(found);
}

TEST_CASE("adjust: promotion, demotion, reindex, defaults") {
  auto p = parse_text(text_of("mc-01"));
  REQUIRE(p.testbenches.size() == 3);

  // Same value on every testbench is promoted.
  AdjustmentRequest same;
  for (std::size_t i = 1; i <= 3; ++i) same.ops.push_back(AdjustOp::set_value(i, "levelADC", "6"));
  const auto promoted = adjust(p, same, schema());
  CHECK(promoted.common.at("levelADC") == "6");
  for (const auto& tb : promoted.testbenches) CHECK_FALSE(tb.count("levelADC"));
  check_partition(promoted);

  // A per-testbench value demotes the common one.
  const auto demoted = adjust(p, AdjustmentRequest{{AdjustOp::set_value(2, "memCellType", "RRAM")}}, schema());
  CHECK_FALSE(demoted.common.count("memCellType"));
  CHECK(demoted.testbenches[0].at("memCellType") == "SRAM");
  CHECK(demoted.testbenches[1].at("memCellType") == "RRAM");
  CHECK(demoted.testbenches[2].at("memCellType") == "SRAM");
  check_partition(demoted);

  const auto removed = adjust(p, AdjustmentRequest{{AdjustOp::remove_testbench(2)}}, schema());
  REQUIRE(removed.testbenches.size() == 2);
  CHECK(removed.testbenches[1].at("technode") == "7");
  check_partition(removed);

  const auto bad = AdjustmentRequest{{AdjustOp::set_value(1, "levelADC", "6"), AdjustOp::set_value(5, "levelADC", "6")}};
  try {
    adjust(p, bad, schema());
    FAIL("expected adjustment error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::adjustment);
    CHECK(std::string(e.what()).find("op 1") != std::string::npos);
  }

  auto gap = parse_text("Simulate ResNet-50 on ImageNet at 22nm with 8b input and weight precision, a 128x128 "
                        "subarray and 6b ADC.");
  REQUIRE_FALSE(gap.missing.empty());
  const auto filled = adjust(gap, AdjustmentRequest{{AdjustOp::use_defaults(kCommon)}}, schema());
  CHECK(filled.common.at("memCellType") == *schema().at("memCellType").default_value);
  CHECK(filled.provenance.at({kCommon, "memCellType"}).source == ValueSource::defaults);
  CHECK(filled.ready());
}

TEST_CASE("adjust then inverse restores the request") {
  const auto p = parse_text(text_of("sc-02"));
  REQUIRE(p.ready());
  const auto once = adjust(p, AdjustmentRequest{{AdjustOp::set_value(kCommon, "muxColADC", "16")}}, schema());
  CHECK(once.common.at("muxColADC") == "16");
  auto back = adjust(once, AdjustmentRequest{{AdjustOp::remove_value(kCommon, "muxColADC")}}, schema());
  back.provenance = p.provenance;
  CHECK(back == p);

  const auto mc = parse_text(text_of("mc-01"));
  const auto added = adjust(mc, AdjustmentRequest{{AdjustOp::add_testbench({{"technode", "32"}})}}, schema());
  REQUIRE(added.testbenches.size() == 4);
  auto undone = adjust(added, AdjustmentRequest{{AdjustOp::remove_testbench(4)}}, schema());
  CHECK(undone.testbenches == mc.testbenches);
  CHECK(undone.common == mc.common);
}

TEST_CASE("adjustment text") {
  const auto mc = parse_text(text_of("mc-01"));
  auto a = parse_adjustment_text("use default values", mc, schema());
  REQUIRE(a);
  REQUIRE(a->ops.size() == 1);
  CHECK(a->ops[0].kind == AdjustOp::Kind::use_defaults);
  CHECK(a->ops[0].all_scopes);

  a = parse_adjustment_text("set ADC precision to 6 bit", mc, schema());
  REQUIRE(a);
  REQUIRE(a->ops.size() == 1);
  CHECK(a->ops[0].name == "levelADC");
  CHECK(a->ops[0].value == "6");
  CHECK(a->ops[0].location == kCommon);

  a = parse_adjustment_text("remove testbench 2", mc, schema());
  REQUIRE(a);
  CHECK(a->ops[0].kind == AdjustOp::Kind::remove_testbench);
  CHECK(a->ops[0].index == 2);

  a = parse_adjustment_text("set subarray size to 256x256", mc, schema());
  REQUIRE(a);
  REQUIRE(a->ops.size() == 2);
  CHECK(a->ops[0].value == "256");

  CHECK_FALSE(parse_adjustment_text("what is the weather", mc, schema()));
  CHECK(adjustment_from_json(to_json(*a)).ops.size() == 2);
}

TEST_CASE("plans: hash, round trip, tamper detection") {
  const auto p = parse_text(text_of("mc-01"));
  const auto plan = make_plan(p, schema());
  REQUIRE(plan.testbenches.size() == 3);
  for (const auto& tb : plan.testbenches) CHECK(tb.at("memCellType") == "SRAM");
  CHECK(plan.hash.size() == 16);
  CHECK(make_plan(parse_text(text_of("mc-01")), schema()).hash == plan.hash);
  CHECK(execution_plan_from_json(to_json(plan)) == plan);

  auto j = to_json(plan);
  j["testbenches"][0]["technode"] = "65";
  CHECK_THROWS_AS(execution_plan_from_json(j), Error);

  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("optimization exemplar plan") {
  const auto p = parse_text(text_of("opt-01"));
  CHECK(p.category == RequestCategory::ppa_optimization);
  const auto plan = make_plan(p, schema());
  REQUIRE(plan.optimization);
  const auto& o = *plan.optimization;
  CHECK(o.model == "ResNet-50");
  CHECK(o.optimizer.algorithm == Algorithm::sa);
  CHECK(o.optimizer.iterations == 20);
  CHECK(o.objective.metric == Metric::power);
  CHECK(o.objective.direction == Direction::minimize);
  REQUIRE(o.constraints.size() == 1);
  CHECK(o.constraints[0].metric == Metric::area);
  CHECK(o.constraints[0].threshold == 3600);
  CHECK_FALSE(o.pruning);

  const auto pruned = make_plan(parse_text(text_of("opt-06")), schema());
  REQUIRE(pruned.optimization);
  REQUIRE(pruned.optimization->pruning);
  CHECK(pruned.optimization->base_model == "ViT-B");
}

TEST_CASE("corpus: 40 runnable plans with no invented values") {
  const auto items = corpus();
  REQUIRE(items.size() == 40);
  std::map<std::string, int> per_category;
  for (const auto& c : items) {
    CAPTURE(c.id);
    DeterministicBackend b;
    const auto cls = classify(c.text, b, schema());
    CHECK(to_string(cls.category) == c.category);
    per_category[c.category]++;
    auto p = parse_params(c.text, cls.category, schema(), b);
    check_partition(p);

    const auto norm = normalize_request_text(c.text);
    auto audit = [&](Location loc, const std::string& name) {
      CAPTURE(name);
      const auto it = p.provenance.find({loc, name});
      REQUIRE(it != p.provenance.end());
      CHECK((it->second.source == ValueSource::text || it->second.source == ValueSource::sweep));
      CHECK_FALSE(it->second.evidence.empty());
      CHECK(norm.find(it->second.evidence) != std::string::npos);
    };
    for (const auto& [name, v] : p.common) audit(kCommon, name);
    for (std::size_t i = 0; i < p.testbenches.size(); ++i)
      for (const auto& [name, v] : p.testbenches[i]) audit(i + 1, name);

    if (!p.ready()) p = adjust(p, AdjustmentRequest{{AdjustOp::use_defaults(std::nullopt)}}, schema());
    CHECK(p.ready());
    CHECK_NOTHROW(make_plan(p, schema()));
  }
  for (const auto& [cat, n] : per_category) CHECK(n == 10);
}

TEST_CASE("parsed request JSON round trip") {
  const auto p = parse_text(text_of("tad-02"));
  CHECK(parsed_request_from_json(to_json(p)) == p);
}

TEST_CASE("HTTP backend against a stub server") {
  httplib::Server srv;
  json last_body;
  std::string last_auth;
  std::string mode = "ok";
  srv.Post("/v1/interpret", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = json::parse(req.body);
    last_auth = req.get_header_value("Authorization");
    json reply;
    if (mode == "ok" && last_body.at("task") == "classify") {
      reply = {{"ok", true}, {"result", {{"category", "SingleCall"}, {"rationale", "stub"}}}};
    } else if (mode == "ok") {
      reply = {{"ok", true}, {"result", {{"testbenches", json::array()}, {"common", {{"model", "VGG8"}}}}}};
    } else {
      reply = {{"ok", false}, {"error", "quota"}};
    }
    res.set_content(reply.dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("CIMDSE_TEST_KEY", "k123", 1);
  HttpLlmBackend b({"http://127.0.0.1:" + std::to_string(port) + "/v1/interpret", "CIMDSE_TEST_KEY", 5});
  const auto c = classify("anything", b, schema());
  CHECK(c.category == RequestCategory::single_call);
  CHECK(last_body.at("version") == 1);
  CHECK(last_auth == "Bearer k123");
  const auto p = parse_params("anything", RequestCategory::single_call, schema(), b);
  CHECK(p.common.at("model") == "VGG8");
  CHECK(last_body.at("task") == "parse");
  CHECK_FALSE(p.missing.empty());

  mode = "fail";
  CHECK(kind_of([&] { classify("anything", b, schema()); }) == ErrorKind::backend);
  srv.stop();
  th.join();

  HttpLlmBackend dead({"http://127.0.0.1:" + std::to_string(port) + "/v1/interpret", "", 1});
  CHECK(kind_of([&] { classify("anything", dead, schema()); }) == ErrorKind::backend);
  CHECK(kind_of([] { HttpLlmBackend({"ftp://x", "", 1}); }) == ErrorKind::config);
}

}  // TEST_SUITE
