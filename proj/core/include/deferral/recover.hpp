#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "deferral/abstain.hpp"
#include "deferral/prediction_log.hpp"

namespace deferral {

// External recovery tool: a child process speaking one JSON request line on
// stdin and one JSON response line on stdout. stderr passes through.
struct ToolSpec {
  std::string name;                  // unique within a registry
  std::vector<std::string> command;  // executable path + arguments
  int timeout_ms = 30000;
  std::set<Task> tasks = {Task::classification, Task::generation};
  // When set, only records whose meta.failure_mode is in this set match;
  // untagged tools match any failure mode.
  std::optional<std::set<std::string>> failure_modes;
};

std::vector<ToolSpec> load_registry(const std::string& path);
std::vector<ToolSpec> registry_from_json(const nlohmann::json& doc);

struct ToolRequest {
  int protocol_version = 1;
  std::string id;
  Task task = Task::classification;
  double calibrated_score = 0.0;
  std::map<std::string, double> confidence;  // metric name -> oriented value
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  std::string to_line() const;  // one JSON object, no newline
};

enum class Verdict { accept, reject, revise };

std::string_view to_string(Verdict verdict);

struct ToolResponse {
  Verdict verdict = Verdict::reject;
  std::optional<nlohmann::ordered_json> revised;
  std::optional<double> tool_confidence;
  std::string notes;
};

struct ToolFailure {
  std::string reason;  // "timeout", "exit status N", "malformed response", ...
};

// Failures are semantically reject; they are recorded in the trail and never
// abort a batch.
using ToolResult = std::variant<ToolResponse, ToolFailure>;

// Tools applicable to the record, registry order preserved. A tool that
// declares failure-mode tags matches only records whose meta.failure_mode is
// in its tag set.
std::vector<const ToolSpec*> route(const PredictionRecord& record,
                                   std::span<const ToolSpec> registry);

// Spawns the tool, writes exactly one request line, reads exactly one
// response line within timeout_ms. Timeouts kill the tool's process group.
// Responses over 1 MiB, malformed JSON, unknown verdicts and nonzero exits
// are failures with named reasons.
ToolResult invoke_tool(const ToolSpec& tool, const ToolRequest& request);

enum class OutcomeState { accepted_by_model, recovered, abstained_definitively };

std::string_view to_string(OutcomeState state);

struct TrailEntry {
  std::string tool;
  std::string result;  // "accept" | "reject" | "revise" | "failure:<reason>"
};

struct FinalOutcome {
  std::string record_id;
  OutcomeState state = OutcomeState::abstained_definitively;
  std::string tool;     // recovering tool, when state == recovered
  std::string verdict;  // "accept" | "revise", when state == recovered
  std::optional<nlohmann::ordered_json> revised;  // verbatim tool payload
  std::vector<TrailEntry> trail;

  nlohmann::ordered_json to_json() const;
};

// Accepted records pass through untouched (no tool is ever invoked for them);
// abstained records walk their route in order until a tool accepts or
// revises, else they are definitively abstained. Decisions and records must
// join 1:1 on id. `jobs` bounds cross-record tool concurrency; the walk
// within one record is sequential and output order matches decision order.
std::vector<FinalOutcome> recover_batch(std::span<const Decision> decisions,
                                        std::span<const PredictionRecord> records,
                                        std::span<const ToolSpec> registry,
                                        int jobs = 1);

}  // namespace deferral
