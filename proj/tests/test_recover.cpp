#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "deferral/errors.hpp"
#include "deferral/io.hpp"
#include "deferral/recover.hpp"
#include "support/temp_dir.hpp"

using namespace deferral;

namespace {

const std::string kToolsDir = std::string(DEFERRAL_TEST_DIR) + "/fixtures/tools/";

ToolSpec stub(const std::string& name, const std::string& script,
              std::vector<std::string> extra_args = {}, int timeout_ms = 5000) {
  ToolSpec spec;
  spec.name = name;
  spec.command = {kToolsDir + script};
  for (auto& a : extra_args) spec.command.push_back(std::move(a));
  spec.timeout_ms = timeout_ms;
  return spec;
}

PredictionRecord gen_record(const std::string& id, const std::string& failure_mode = "") {
  PredictionRecord rec;
  rec.id = id;
  rec.task = Task::generation;
  rec.token_logprobs = {-0.5};
  if (!failure_mode.empty()) rec.meta["failure_mode"] = failure_mode;
  return rec;
}

ToolRequest request_for(const PredictionRecord& rec) {
  ToolRequest req;
  req.id = rec.id;
  req.task = rec.task;
  req.calibrated_score = 0.3;
  return req;
}

}  // namespace

TEST_CASE("route filters by task and failure-mode tags, preserving order") {
  ToolSpec docs = stub("docs_injector", "always_accept.sh");
  docs.tasks = {Task::generation};
  docs.failure_modes = {{"missing_knowledge"}};
  ToolSpec simplifier = stub("simplifier", "always_accept.sh");
  simplifier.tasks = {Task::generation};
  simplifier.failure_modes = {{"capability_gap"}};
  ToolSpec validator = stub("validator", "always_accept.sh");  // untagged, both tasks
  const std::vector<ToolSpec> registry{docs, simplifier, validator};

  const auto tagged = gen_record("a", "missing_knowledge");
  auto tools = route(tagged, registry);
  REQUIRE(tools.size() == 2);
  CHECK(tools[0]->name == "docs_injector");
  CHECK(tools[1]->name == "validator");

  // untagged record: only untagged tools match
  const auto untagged = gen_record("b");
  tools = route(untagged, registry);
  REQUIRE(tools.size() == 1);
  CHECK(tools[0]->name == "validator");

  // classification record vs generation-only tools
  PredictionRecord cls;
  cls.id = "c";
  cls.task = Task::classification;
  cls.logits = {1.0, 0.0};
  tools = route(cls, registry);
  REQUIRE(tools.size() == 1);
  CHECK(tools[0]->name == "validator");
}

TEST_CASE("invoke_tool happy path") {
  const auto rec = gen_record("x");
  const auto result = invoke_tool(stub("ok", "always_accept.sh"), request_for(rec));
  REQUIRE(std::holds_alternative<ToolResponse>(result));
  const auto& resp = std::get<ToolResponse>(result);
  CHECK(resp.verdict == Verdict::accept);
  CHECK(resp.notes == "ok");
}

TEST_CASE("invoke_tool failure modes degrade to named reasons") {
  const auto rec = gen_record("x");
  const auto req = request_for(rec);

  auto reason = [&](const ToolSpec& tool) {
    const auto result = invoke_tool(tool, req);
    REQUIRE(std::holds_alternative<ToolFailure>(result));
    return std::get<ToolFailure>(result).reason;
  };

  CHECK(reason(stub("sleepy", "sleep_then_accept.sh", {"5"}, 200)) == "timeout");
  CHECK(reason(stub("maybe", "invalid_verdict.sh")) == "invalid verdict");
  CHECK(reason(stub("garbage", "garbage_output.sh")) == "malformed response");
  CHECK(reason(stub("fails", "fail_exit.sh")) == "exit status 3");
  CHECK(reason(stub("huge", "oversize_output.sh")) == "oversized response (> 1 MiB)");
  CHECK(reason(stub("missing", "no_such_tool.sh")) == "exit status 127");
}

TEST_CASE("revise responses carry the payload verbatim") {
  const auto rec = gen_record("x");
  const auto result = invoke_tool(stub("fixer", "revise_tool.sh"), request_for(rec));
  REQUIRE(std::holds_alternative<ToolResponse>(result));
  const auto& resp = std::get<ToolResponse>(result);
  CHECK(resp.verdict == Verdict::revise);
  REQUIRE(resp.revised.has_value());
  CHECK((*resp.revised)["patch"] == "s/foo/bar/");
  CHECK(resp.tool_confidence == 0.8);
}

TEST_CASE("recover_batch walks routes first-accept-wins") {
  std::vector<PredictionRecord> records{gen_record("a"), gen_record("b"),
                                        gen_record("c")};
  std::vector<Decision> decisions{{"a", 0.9, Action::accept},
                                  {"b", 0.2, Action::abstain},
                                  {"c", 0.1, Action::abstain}};
  const std::vector<ToolSpec> registry{stub("nope", "always_reject.sh"),
                                       stub("yes", "always_accept.sh")};

  const auto outcomes = recover_batch(decisions, records, registry);
  REQUIRE(outcomes.size() == 3);

  CHECK(outcomes[0].state == OutcomeState::accepted_by_model);
  CHECK(outcomes[0].trail.empty());

  CHECK(outcomes[1].state == OutcomeState::recovered);
  CHECK(outcomes[1].tool == "yes");
  CHECK(outcomes[1].verdict == "accept");
  REQUIRE(outcomes[1].trail.size() == 2);
  CHECK(outcomes[1].trail[0].tool == "nope");
  CHECK(outcomes[1].trail[0].result == "reject");
  CHECK(outcomes[1].trail[1].result == "accept");
}

TEST_CASE("all-reject route ends in definitive abstention") {
  std::vector<PredictionRecord> records{gen_record("a")};
  std::vector<Decision> decisions{{"a", 0.1, Action::abstain}};
  const std::vector<ToolSpec> registry{stub("no1", "always_reject.sh"),
                                       stub("no2", "always_reject.sh")};
  const auto outcomes = recover_batch(decisions, records, registry);
  REQUIRE(outcomes.size() == 1);
  CHECK(outcomes[0].state == OutcomeState::abstained_definitively);
  REQUIRE(outcomes[0].trail.size() == 2);
}

TEST_CASE("empty route is an immediate definitive abstention") {
  std::vector<PredictionRecord> records{gen_record("a")};
  std::vector<Decision> decisions{{"a", 0.1, Action::abstain}};
  const auto outcomes = recover_batch(decisions, records, {});
  CHECK(outcomes[0].state == OutcomeState::abstained_definitively);
  CHECK(outcomes[0].trail.empty());
}

TEST_CASE("accepted records never invoke tools") {
  testutil::TempDir dir;
  const auto counter = dir.file("invocations.txt");
  std::vector<PredictionRecord> records;
  std::vector<Decision> decisions;
  for (int i = 0; i < 10; ++i) {
    const auto id = "r" + std::to_string(i);
    records.push_back(gen_record(id));
    decisions.push_back({id, 0.5, i < 7 ? Action::accept : Action::abstain});
  }
  const std::vector<ToolSpec> registry{
      stub("counter", "counting_accept.sh", {counter})};
  const auto outcomes = recover_batch(decisions, records, registry);

  std::ifstream in(counter);
  std::string line;
  int invocations = 0;
  while (std::getline(in, line)) ++invocations;
  CHECK(invocations == 3);  // exactly the abstained records
  for (int i = 0; i < 7; ++i) {
    CHECK(outcomes[static_cast<std::size_t>(i)].state ==
          OutcomeState::accepted_by_model);
    CHECK(outcomes[static_cast<std::size_t>(i)].trail.empty());
  }
}

TEST_CASE("timeouts degrade to reject and the batch completes") {
  std::vector<PredictionRecord> records{gen_record("a"), gen_record("b")};
  std::vector<Decision> decisions{{"a", 0.1, Action::abstain},
                                  {"b", 0.1, Action::abstain}};
  const std::vector<ToolSpec> registry{
      stub("sleepy", "sleep_then_accept.sh", {"5"}, 150),
      stub("saver", "always_accept.sh")};
  const auto outcomes = recover_batch(decisions, records, registry);
  for (const auto& o : outcomes) {
    CHECK(o.state == OutcomeState::recovered);
    REQUIRE(o.trail.size() == 2);
    CHECK(o.trail[0].result == "failure:timeout");
    CHECK(o.trail[1].result == "accept");
  }
}

TEST_CASE("parallel recovery matches sequential output") {
  std::vector<PredictionRecord> records;
  std::vector<Decision> decisions;
  for (int i = 0; i < 24; ++i) {
    const auto id = "p" + std::to_string(i);
    records.push_back(gen_record(id, i % 3 == 0 ? "missing_knowledge" : ""));
    decisions.push_back({id, 0.4, i % 4 == 0 ? Action::accept : Action::abstain});
  }
  ToolSpec tagged = stub("docs", "always_reject.sh");
  tagged.failure_modes = {{"missing_knowledge"}};
  const std::vector<ToolSpec> registry{tagged, stub("yes", "always_accept.sh")};

  const auto seq = recover_batch(decisions, records, registry, 1);
  const auto par = recover_batch(decisions, records, registry, 8);
  REQUIRE(seq.size() == par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    CHECK(seq[i].record_id == par[i].record_id);
    CHECK(seq[i].state == par[i].state);
    CHECK(seq[i].trail.size() == par[i].trail.size());
    CHECK(seq[i].to_json().dump() == par[i].to_json().dump());
  }
}

TEST_CASE("recover_batch enforces the id join") {
  std::vector<PredictionRecord> records{gen_record("a")};
  std::vector<Decision> decisions{{"zzz", 0.1, Action::abstain}};
  CHECK_THROWS_WITH_AS(recover_batch(decisions, records, {}),
                       doctest::Contains("no matching record"), InputError);

  std::vector<Decision> too_few;
  std::vector<PredictionRecord> two{gen_record("a"), gen_record("b")};
  CHECK_THROWS_AS(recover_batch(too_few, two, {}), InputError);
}

TEST_CASE("registry parsing validates the schema") {
  testutil::TempDir dir;
  const auto path = dir.file("registry.json");

  write_file_atomic(path, R"([{"name":"t","command":["/bin/true"],"timeout_ms":100,
      "applies_to":{"tasks":["generation"],"failure_modes":["capability_gap"]}}])");
  const auto registry = load_registry(path);
  REQUIRE(registry.size() == 1);
  CHECK(registry[0].name == "t");
  CHECK(registry[0].timeout_ms == 100);
  CHECK(registry[0].tasks == std::set<Task>{Task::generation});
  REQUIRE(registry[0].failure_modes.has_value());
  CHECK(registry[0].failure_modes->contains("capability_gap"));

  write_file_atomic(path, R"([{"name":"a","command":["x"]},{"name":"a","command":["y"]}])");
  CHECK_THROWS_WITH_AS(load_registry(path), doctest::Contains("duplicate tool name"),
                       ParseError);

  write_file_atomic(path, R"([{"name":"a","command":[],"timeout_ms":10}])");
  CHECK_THROWS_AS(load_registry(path), ParseError);

  write_file_atomic(path, R"([{"name":"a","command":["x"],"timeout_ms":0}])");
  CHECK_THROWS_AS(load_registry(path), ParseError);

  write_file_atomic(path, R"({"not":"an array"})");
  CHECK_THROWS_AS(load_registry(path), ParseError);
}

TEST_CASE("tool request line carries the protocol fields") {
  auto rec = gen_record("id1", "capability_gap");
  rec.uncertainty_confidence["mean_token_logprob"] = -0.5;
  ToolRequest req;
  req.id = rec.id;
  req.task = rec.task;
  req.calibrated_score = 0.25;
  req.confidence = rec.uncertainty_confidence;
  req.meta = rec.meta;
  const auto line = req.to_line();
  const auto doc = nlohmann::json::parse(line);
  CHECK(doc["protocol_version"] == 1);
  CHECK(doc["id"] == "id1");
  CHECK(doc["task"] == "generation");
  CHECK(doc["calibrated_score"] == 0.25);
  CHECK(doc["uncertainty"]["mean_token_logprob"] == -0.5);
  CHECK(doc["meta"]["failure_mode"] == "capability_gap");
  CHECK(line.find('\n') == std::string::npos);
}
