#include "madroid/gateway.hpp"

#include <chrono>
#include <fstream>
#include <mutex>

#include <nlohmann/json.hpp>

#include "madroid/errors.hpp"

namespace madroid {
namespace {

using nlohmann::json;

class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::vector<std::pair<std::string, std::string>> rules)
      : rules_(std::move(rules)) {}

  std::string complete(const SessionInfo&, const std::vector<ChatEntry>&,
                       const std::string& prompt) override {
    std::lock_guard lock(mu_);
    for (const auto& [pattern, response] : rules_) {
      if (pattern.empty() || prompt.find(pattern) != std::string::npos) return response;
    }
    throw NoScriptMatch("no scripted rule matches prompt: " +
                        prompt.substr(0, std::min<std::size_t>(prompt.size(), 120)));
  }

 private:
  std::mutex mu_;
  std::vector<std::pair<std::string, std::string>> rules_;
};

class FaultBackend : public Backend {
 public:
  FaultBackend(std::shared_ptr<Backend> inner, FaultSpec spec)
      : inner_(std::move(inner)), spec_(std::move(spec)) {}

  std::string complete(const SessionInfo& session, const std::vector<ChatEntry>& history,
                       const std::string& prompt) override {
    if (session.role == AgentRole::operator_agent) {
      std::lock_guard lock(mu_);
      int ordinal = ask_ordinal_++;
      if (!fired_ && ordinal == spec_.step && session.user_label == spec_.user) {
        fired_ = true;
        return spec_.wrong_action;
      }
    }
    return inner_->complete(session, history, prompt);
  }

  void notify_restart(const ExecutionRecord& prefix) override { inner_->notify_restart(prefix); }

 private:
  std::mutex mu_;
  std::shared_ptr<Backend> inner_;
  FaultSpec spec_;
  int ask_ordinal_ = 0;
  bool fired_ = false;
};

std::string json_escape_line(const json& j) {
  return j.dump();  // dump() never emits raw newlines
}

}  // namespace

const char* speaker_name(Speaker s) {
  switch (s) {
    case Speaker::system: return "system";
    case Speaker::prompt: return "agent-prompt";
    case Speaker::reply: return "model-reply";
  }
  return "unknown";
}

const char* role_name(AgentRole r) {
  switch (r) {
    case AgentRole::coordinator: return "coordinator";
    case AgentRole::operator_agent: return "operator";
    case AgentRole::observer: return "observer";
  }
  return "unknown";
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

ChatGateway::ChatGateway(std::shared_ptr<Backend> backend) : backend_(std::move(backend)) {
  if (!backend_) throw BadConfig("gateway requires a backend");
}

ChatSession& ChatGateway::open_session(AgentRole role, const std::string& system_text,
                                       const std::string& user_label) {
  ChatSession session;
  std::string id = "s" + std::to_string(next_session_++) + "-" + role_name(role);
  if (!user_label.empty()) id += "-" + user_label;
  session.info = SessionInfo{std::move(id), role, user_label};
  session.history.push_back(ChatEntry{Speaker::system, system_text, now_ms()});
  sessions_.push_back(std::move(session));
  return sessions_.back();
}

std::string ChatGateway::ask(ChatSession& session, const std::string& prompt) {
  std::vector<ChatEntry> prior = session.history;
  session.history.push_back(ChatEntry{Speaker::prompt, prompt, now_ms()});
  std::string reply = backend_->complete(session.info, prior, prompt);
  session.history.push_back(ChatEntry{Speaker::reply, reply, now_ms()});
  return reply;
}

void ChatGateway::persist_transcript(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write transcript: " + path);
  json header = {{"transcript_version", 1}, {"created", now_ms()}};
  out << json_escape_line(header) << '\n';
  for (const auto& session : sessions_) {
    std::string role = role_name(session.info.role);
    if (!session.info.user_label.empty()) role += ":" + session.info.user_label;
    int seq = 0;
    for (const auto& entry : session.history) {
      json j = {{"session_id", session.info.session_id},
                {"role", role},
                {"seq", seq++},
                {"speaker", speaker_name(entry.speaker)},
                {"text", entry.text},
                {"timestamp", entry.timestamp_ms}};
      out << json_escape_line(j) << '\n';
    }
  }
  if (!out) throw IoError("failed while writing transcript: " + path);
}

std::vector<TranscriptRecord> load_transcript(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read transcript: " + path);
  std::vector<TranscriptRecord> records;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("corrupt transcript line: " + std::string(e.what()));
    }
    if (!saw_header) {
      saw_header = true;
      if (j.contains("transcript_version")) continue;
      // Tolerate header-less files produced by hand.
    }
    if (j.contains("transcript_version")) continue;
    TranscriptRecord r;
    r.session_id = j.value("session_id", "");
    r.role = j.value("role", "");
    r.seq = j.value("seq", 0);
    r.speaker = j.value("speaker", "");
    r.text = j.value("text", "");
    r.timestamp_ms = j.value("timestamp", std::int64_t{0});
    records.push_back(std::move(r));
  }
  if (!saw_header) throw IoError("transcript missing header: " + path);
  return records;
}

std::shared_ptr<Backend> make_scripted_backend(
    std::vector<std::pair<std::string, std::string>> rules) {
  return std::make_shared<ScriptedBackend>(std::move(rules));
}

std::shared_ptr<Backend> make_fault_backend(std::shared_ptr<Backend> inner, FaultSpec spec) {
  if (!inner) throw BadConfig("fault backend requires an inner backend");
  return std::make_shared<FaultBackend>(std::move(inner), std::move(spec));
}

std::shared_ptr<Backend> make_backend(const BackendConfig& config, const Scenario* scenario,
                                      const DeviceFarm* farm) {
  switch (config.kind) {
    case BackendConfig::Kind::remote:
      return make_remote_backend(config);
    case BackendConfig::Kind::scripted:
      return make_scripted_backend(config.script);
    case BackendConfig::Kind::oracle:
      if (!scenario || !farm) throw BadConfig("oracle backend requires a scenario and a farm");
      return make_oracle_backend(*scenario, *farm);
    case BackendConfig::Kind::fault: {
      if (!config.fault) throw BadConfig("fault backend requires a fault spec");
      BackendConfig inner_cfg;
      if (config.inner) {
        inner_cfg = *config.inner;
      } else {
        inner_cfg.kind = BackendConfig::Kind::oracle;
      }
      return make_fault_backend(make_backend(inner_cfg, scenario, farm), *config.fault);
    }
  }
  throw BadConfig("unknown backend kind");
}

}  // namespace madroid
