#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "madroid/record.hpp"

namespace madroid {

struct Scenario;
class DeviceFarm;

enum class Speaker { system, prompt, reply };
const char* speaker_name(Speaker s);

enum class AgentRole { coordinator, operator_agent, observer };
const char* role_name(AgentRole r);

struct ChatEntry {
  Speaker speaker = Speaker::system;
  std::string text;
  std::int64_t timestamp_ms = 0;
};

struct SessionInfo {
  std::string session_id;
  AgentRole role = AgentRole::coordinator;
  std::string user_label;  // operator sessions only
};

struct ChatSession {
  SessionInfo info;
  std::vector<ChatEntry> history;
};

// Answer source behind the chat sessions. Implementations must be safe for
// concurrent calls from different sessions.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const SessionInfo& session, const std::vector<ChatEntry>& history,
                               const std::string& prompt) = 0;
  // Called when the orchestrator restarts a run and begins replaying the
  // given already-validated record prefix. Stateful backends use it to
  // realign internal cursors; the default is a no-op.
  virtual void notify_restart(const ExecutionRecord& prefix) { (void)prefix; }
};

struct FaultSpec {
  std::string user;          // operator the fault targets
  int step = 0;              // global operator-ask ordinal at which to fire
  std::string wrong_action;  // reply text returned instead of the real answer
};

struct BackendConfig {
  enum class Kind { remote, scripted, oracle, fault };
  Kind kind = Kind::oracle;

  // remote
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env = "MADROID_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  int retry_base_ms = 500;

  // scripted: ordered (substring pattern -> response) rules
  std::vector<std::pair<std::string, std::string>> script;

  // fault: wraps `inner` and fires `fault` exactly once
  std::shared_ptr<BackendConfig> inner;
  std::optional<FaultSpec> fault;
};

// Owns every chat session of one run so the full conversation set can be
// persisted as a transcript. Sessions abandoned by a restart stay in the
// transcript.
class ChatGateway {
 public:
  explicit ChatGateway(std::shared_ptr<Backend> backend);

  ChatSession& open_session(AgentRole role, const std::string& system_text,
                            const std::string& user_label = "");
  // Appends the prompt, obtains the model reply, appends it, returns it.
  std::string ask(ChatSession& session, const std::string& prompt);

  const std::deque<ChatSession>& sessions() const { return sessions_; }
  Backend& backend() { return *backend_; }

  // JSON Lines, one object per history entry:
  //   {"session_id","role","seq","speaker","text","timestamp"}
  // preceded by a single header line. A run with no sessions yields the
  // header only.
  void persist_transcript(const std::string& path) const;

 private:
  std::shared_ptr<Backend> backend_;
  std::deque<ChatSession> sessions_;  // deque: stable references on growth
  int next_session_ = 0;
};

struct TranscriptRecord {
  std::string session_id;
  std::string role;
  int seq = 0;
  std::string speaker;
  std::string text;
  std::int64_t timestamp_ms = 0;
};

std::vector<TranscriptRecord> load_transcript(const std::string& path);

// Scripted backend built from ordered (pattern -> response) rules; the first
// rule whose pattern occurs in the prompt wins. Throws NoScriptMatch.
std::shared_ptr<Backend> make_scripted_backend(
    std::vector<std::pair<std::string, std::string>> rules);

// Remote chat-completion backend (endpoint + model required, API key read
// from the configured environment variable at request time).
std::shared_ptr<Backend> make_remote_backend(const BackendConfig& config);

// Ground-truth-driven backend bound to a scenario and the live farm of the
// run (for generated-value substitution).
std::shared_ptr<Backend> make_oracle_backend(const Scenario& scenario, const DeviceFarm& farm);

// Wrapper that returns `spec.wrong_action` for exactly one operator ask and
// delegates everything else to `inner`.
std::shared_ptr<Backend> make_fault_backend(std::shared_ptr<Backend> inner, FaultSpec spec);

// Builds a backend from declarative config. Oracle and fault-over-oracle
// kinds need the scenario and farm; remote/scripted ignore them. Throws
// BadConfig on invalid combinations.
std::shared_ptr<Backend> make_backend(const BackendConfig& config,
                                      const Scenario* scenario = nullptr,
                                      const DeviceFarm* farm = nullptr);

std::int64_t now_ms();

}  // namespace madroid
