#include "deferral/recover.hpp"

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <mutex>
#include <thread>
#include <unordered_map>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include "deferral/errors.hpp"
#include "deferral/io.hpp"

namespace deferral {

namespace {

constexpr std::size_t kMaxResponseBytes = 1 << 20;  // 1 MiB

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                        deadline - Clock::now())
                        .count();
  return left > 0 ? static_cast<int>(left) : 0;
}

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

// A tool that exits without draining stdin must not kill the host.
void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { std::signal(SIGPIPE, SIG_IGN); });
}

struct ChildProcess {
  pid_t pid = -1;
  int stdin_fd = -1;
  int stdout_fd = -1;

  ~ChildProcess() {
    if (stdin_fd >= 0) close(stdin_fd);
    if (stdout_fd >= 0) close(stdout_fd);
    if (pid > 0) {
      kill(-pid, SIGKILL);
      int status = 0;
      waitpid(pid, &status, 0);
    }
  }

  void close_stdin() {
    if (stdin_fd >= 0) {
      close(stdin_fd);
      stdin_fd = -1;
    }
  }
};

ToolFailure kill_with(ChildProcess& child, std::string reason) {
  kill(-child.pid, SIGKILL);
  int status = 0;
  waitpid(child.pid, &status, 0);
  child.pid = -1;
  return ToolFailure{std::move(reason)};
}

}  // namespace

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::accept: return "accept";
    case Verdict::reject: return "reject";
    case Verdict::revise: return "revise";
  }
  return "?";
}

std::string_view to_string(OutcomeState state) {
  switch (state) {
    case OutcomeState::accepted_by_model: return "accepted_by_model";
    case OutcomeState::recovered: return "recovered";
    case OutcomeState::abstained_definitively: return "abstained_definitively";
  }
  return "?";
}

std::vector<ToolSpec> registry_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ParseError("tool registry must be a JSON array");
  std::vector<ToolSpec> registry;
  std::unordered_map<std::string, bool> names;
  for (const auto& t : doc) {
    if (!t.is_object()) throw ParseError("tool entry is not an object");
    for (const auto& [key, value] : t.items()) {
      (void)value;
      if (key != "name" && key != "command" && key != "timeout_ms" &&
          key != "applies_to")
        throw ParseError("unknown tool field '" + key + "'");
    }
    ToolSpec spec;
    if (!t.contains("name") || !t["name"].is_string() ||
        t["name"].get<std::string>().empty())
      throw ParseError("tool missing nonempty 'name'");
    spec.name = t["name"].get<std::string>();
    if (!names.emplace(spec.name, true).second)
      throw ParseError("duplicate tool name '" + spec.name + "'");

    if (!t.contains("command") || !t["command"].is_array() || t["command"].empty())
      throw ParseError("tool '" + spec.name + "' missing nonempty 'command' array");
    for (const auto& c : t["command"]) {
      if (!c.is_string())
        throw ParseError("tool '" + spec.name + "' command entries must be strings");
      spec.command.push_back(c.get<std::string>());
    }

    if (t.contains("timeout_ms")) {
      if (!t["timeout_ms"].is_number_integer() || t["timeout_ms"].get<long long>() <= 0)
        throw ParseError("tool '" + spec.name + "' timeout_ms must be a positive integer");
      spec.timeout_ms = t["timeout_ms"].get<int>();
    }

    if (t.contains("applies_to")) {
      const auto& a = t["applies_to"];
      if (!a.is_object())
        throw ParseError("tool '" + spec.name + "' applies_to is not an object");
      for (const auto& [key, value] : a.items()) {
        (void)value;
        if (key != "tasks" && key != "failure_modes")
          throw ParseError("unknown applies_to field '" + key + "'");
      }
      if (a.contains("tasks")) {
        if (!a["tasks"].is_array() || a["tasks"].empty())
          throw ParseError("tool '" + spec.name + "' tasks must be a nonempty array");
        spec.tasks.clear();
        for (const auto& name : a["tasks"]) {
          const auto task = name.is_string() ? task_from_string(name.get<std::string>())
                                             : std::nullopt;
          if (!task)
            throw ParseError("tool '" + spec.name + "' has an unknown task filter");
          spec.tasks.insert(*task);
        }
      }
      if (a.contains("failure_modes")) {
        if (!a["failure_modes"].is_array())
          throw ParseError("tool '" + spec.name + "' failure_modes must be an array");
        std::set<std::string> modes;
        for (const auto& m : a["failure_modes"]) {
          if (!m.is_string() || m.get<std::string>().empty())
            throw ParseError("tool '" + spec.name +
                             "' failure_modes entries must be nonempty strings");
          modes.insert(m.get<std::string>());
        }
        spec.failure_modes = std::move(modes);
      }
    }
    registry.push_back(std::move(spec));
  }
  return registry;
}

std::vector<ToolSpec> load_registry(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed registry file '" + path + "': " + e.what());
  }
  return registry_from_json(doc);
}

std::string ToolRequest::to_line() const {
  nlohmann::ordered_json doc;
  doc["protocol_version"] = protocol_version;
  doc["id"] = id;
  doc["task"] = deferral::to_string(task);
  doc["calibrated_score"] = calibrated_score;
  doc["uncertainty"] = confidence;
  doc["meta"] = meta;
  return doc.dump();
}

std::vector<const ToolSpec*> route(const PredictionRecord& record,
                                   std::span<const ToolSpec> registry) {
  std::vector<const ToolSpec*> tools;
  const auto mode = record.failure_mode();
  for (const auto& tool : registry) {
    if (!tool.tasks.contains(record.task)) continue;
    if (tool.failure_modes) {
      if (!mode || !tool.failure_modes->contains(*mode)) continue;
    }
    tools.push_back(&tool);
  }
  return tools;
}

ToolResult invoke_tool(const ToolSpec& tool, const ToolRequest& request) {
  ignore_sigpipe_once();

  int in_pipe[2];   // host -> tool stdin
  int out_pipe[2];  // tool stdout -> host
  if (pipe(in_pipe) != 0) return ToolFailure{"pipe failed"};
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    return ToolFailure{"pipe failed"};
  }

  const pid_t pid = fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    return ToolFailure{"fork failed"};
  }

  if (pid == 0) {
    // Child: own process group so a timeout can kill the whole tree.
    setpgid(0, 0);
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
    std::vector<char*> argv;
    argv.reserve(tool.command.size() + 1);
    for (const auto& arg : tool.command) argv.push_back(const_cast<char*>(arg.c_str()));
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    _exit(127);
  }

  setpgid(pid, pid);  // races with the child's own call; either one wins
  close(in_pipe[0]);
  close(out_pipe[1]);

  ChildProcess child;
  child.pid = pid;
  child.stdin_fd = in_pipe[1];
  child.stdout_fd = out_pipe[0];
  set_nonblocking(child.stdin_fd);
  set_nonblocking(child.stdout_fd);

  const auto deadline =
      Clock::now() + std::chrono::milliseconds(tool.timeout_ms);

  // Write the single request line. A tool that never reads is tolerated as
  // long as it still responds.
  const std::string payload = request.to_line() + "\n";
  std::size_t written = 0;
  bool write_ok = true;
  while (written < payload.size()) {
    pollfd pfd{child.stdin_fd, POLLOUT, 0};
    const int rc = poll(&pfd, 1, remaining_ms(deadline));
    if (rc == 0) return kill_with(child, "timeout");
    if (rc < 0) {
      if (errno == EINTR) continue;
      write_ok = false;
      break;
    }
    const ssize_t n =
        write(child.stdin_fd, payload.data() + written, payload.size() - written);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      write_ok = false;  // e.g. EPIPE: tool closed stdin early
      break;
    }
    written += static_cast<std::size_t>(n);
  }
  (void)write_ok;
  child.close_stdin();

  // Read exactly one response line.
  std::string response;
  bool got_line = false;
  bool eof = false;
  char buf[4096];
  while (!got_line && !eof) {
    pollfd pfd{child.stdout_fd, POLLIN, 0};
    const int rc = poll(&pfd, 1, remaining_ms(deadline));
    if (rc == 0) return kill_with(child, "timeout");
    if (rc < 0) {
      if (errno == EINTR) continue;
      return kill_with(child, "poll failed");
    }
    const ssize_t n = read(child.stdout_fd, buf, sizeof(buf));
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return kill_with(child, "read failed");
    }
    if (n == 0) {
      eof = true;
      break;
    }
    for (ssize_t i = 0; i < n; ++i) {
      if (buf[i] == '\n') {
        got_line = true;
        break;
      }
      response.push_back(buf[i]);
      if (response.size() > kMaxResponseBytes)
        return kill_with(child, "oversized response (> 1 MiB)");
    }
  }
  // Wait for exit within the remaining budget; a nonzero status outranks any
  // other diagnosis (including a missing response).
  int status = 0;
  for (;;) {
    const pid_t done = waitpid(child.pid, &status, WNOHANG);
    if (done == child.pid) {
      child.pid = -1;
      break;
    }
    if (done < 0 && errno != EINTR) return kill_with(child, "wait failed");
    if (remaining_ms(deadline) == 0) return kill_with(child, "timeout");
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  if (WIFSIGNALED(status))
    return ToolFailure{"killed by signal " + std::to_string(WTERMSIG(status))};
  if (WIFEXITED(status) && WEXITSTATUS(status) != 0)
    return ToolFailure{"exit status " + std::to_string(WEXITSTATUS(status))};

  if (!got_line && response.empty()) return ToolFailure{"no response"};
  // EOF after some bytes without a newline: treat the partial line as the
  // response; well-behaved tools terminate it.

  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(response);
  } catch (const nlohmann::json::exception&) {
    return ToolFailure{"malformed response"};
  }
  if (!doc.is_object() || !doc.contains("verdict") || !doc["verdict"].is_string())
    return ToolFailure{"invalid verdict"};
  const std::string verdict = doc["verdict"].get<std::string>();

  ToolResponse out;
  if (verdict == "accept") out.verdict = Verdict::accept;
  else if (verdict == "reject") out.verdict = Verdict::reject;
  else if (verdict == "revise") out.verdict = Verdict::revise;
  else return ToolFailure{"invalid verdict"};

  if (doc.contains("revised")) out.revised = doc["revised"];
  if (doc.contains("tool_confidence") && doc["tool_confidence"].is_number()) {
    const double c = doc["tool_confidence"].get<double>();
    if (c >= 0.0 && c <= 1.0) out.tool_confidence = c;
  }
  if (doc.contains("notes") && doc["notes"].is_string())
    out.notes = doc["notes"].get<std::string>();
  // Unknown response fields are ignored by design.
  return out;
}

nlohmann::ordered_json FinalOutcome::to_json() const {
  nlohmann::ordered_json doc;
  doc["id"] = record_id;
  doc["state"] = deferral::to_string(state);
  if (state == OutcomeState::recovered) {
    doc["tool"] = tool;
    doc["verdict"] = verdict;
    if (revised) doc["revised"] = *revised;
  }
  auto trail_json = nlohmann::ordered_json::array();
  for (const auto& entry : trail)
    trail_json.push_back({{"tool", entry.tool}, {"result", entry.result}});
  doc["trail"] = std::move(trail_json);
  return doc;
}

std::vector<FinalOutcome> recover_batch(std::span<const Decision> decisions,
                                        std::span<const PredictionRecord> records,
                                        std::span<const ToolSpec> registry,
                                        int jobs) {
  std::unordered_map<std::string_view, const PredictionRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  if (by_id.size() != records.size())
    throw InputError("duplicate record ids in recovery input");
  if (decisions.size() != records.size())
    throw InputError("decisions and records do not match 1:1 (" +
                     std::to_string(decisions.size()) + " vs " +
                     std::to_string(records.size()) + ")");
  for (const auto& d : decisions) {
    if (!by_id.contains(d.record_id))
      throw InputError("decision '" + d.record_id + "' has no matching record");
  }

  std::vector<FinalOutcome> outcomes(decisions.size());

  auto process = [&](std::size_t i) {
    const Decision& decision = decisions[i];
    const PredictionRecord& record = *by_id.at(decision.record_id);
    FinalOutcome& outcome = outcomes[i];
    outcome.record_id = decision.record_id;

    if (decision.action == Action::accept) {
      outcome.state = OutcomeState::accepted_by_model;
      return;
    }

    ToolRequest request;
    request.id = record.id;
    request.task = record.task;
    request.calibrated_score = decision.calibrated_probability;
    request.confidence = record.uncertainty_confidence;
    request.meta = record.meta;

    outcome.state = OutcomeState::abstained_definitively;
    for (const ToolSpec* tool : route(record, registry)) {
      const ToolResult result = invoke_tool(*tool, request);
      if (const auto* failure = std::get_if<ToolFailure>(&result)) {
        outcome.trail.push_back({tool->name, "failure:" + failure->reason});
        continue;  // failures are semantically reject
      }
      const auto& response = std::get<ToolResponse>(result);
      outcome.trail.push_back(
          {tool->name, std::string(deferral::to_string(response.verdict))});
      if (response.verdict == Verdict::reject) continue;
      outcome.state = OutcomeState::recovered;
      outcome.tool = tool->name;
      outcome.verdict = deferral::to_string(response.verdict);
      if (response.verdict == Verdict::revise && response.revised)
        outcome.revised = response.revised;
      break;
    }
  };

  const int workers =
      std::max(1, std::min<int>(jobs, static_cast<int>(decisions.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < decisions.size(); ++i) process(i);
    return outcomes;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= decisions.size()) return;
        process(i);
      }
    });
  }
  for (auto& t : pool) t.join();
  return outcomes;
}

}  // namespace deferral
