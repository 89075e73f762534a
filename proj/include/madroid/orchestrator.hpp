#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madroid/agents.hpp"
#include "madroid/gateway.hpp"
#include "madroid/record.hpp"
#include "madroid/scenario.hpp"

namespace madroid {

struct RunConfig {
  int observer_cadence = 2;       // device actions between periodic reviews
  int max_actions_per_user = 15;  // device-action budget per user
  int max_total_actions = 60;     // device-action budget for the whole run
  int max_restarts = 3;
  int record_token_budget = 6000;  // review-prompt truncation budget
  std::uint64_t seed = 0;
  std::string prompts_dir;  // empty -> compiled-in templates
  std::string out_dir;      // empty -> no artifacts written
};

enum class FailureReason {
  none,
  plan_error,            // coordinator replies unusable or wrong user count
  operator_failure,      // an operator could not produce a usable action
  budget_exhausted,      // action budget hit before completion
  max_restarts,          // error reviews kept flagging steps past the limit
  observer_incomplete,   // final review judged the task unfinished
  success_check_failed,  // final review said complete, environment disagreed
  infra_error,           // backend/parsing/replay infrastructure broke
};
const char* to_string(FailureReason reason);

struct ReviewEvent {
  int device_count = 0;  // device actions executed when the review ran
  ReviewPhase phase = ReviewPhase::periodic;
  VerdictStatus verdict = VerdictStatus::ok;
  int step_index = -1;  // error_at only
};

struct RunResult {
  bool success = false;
  FailureReason failure = FailureReason::none;
  std::string failure_detail;
  ExecutionRecord record;
  int restarts_used = 0;
  std::vector<ReviewEvent> reviews;
  TaskPlan plan;
  std::map<std::string, std::string> bindings;  // generated values of the run
  std::uint64_t seed = 0;
  std::string transcript_path;  // set when artifacts were written
};

// Builds the answer backend for a run. The factory receives the live device
// farm of the run so ground-truth-driven backends can resolve values the
// scenario generates at runtime (join codes).
using BackendFactory =
    std::function<std::shared_ptr<Backend>(const Scenario&, const DeviceFarm&)>;

// Drives one full task attempt: plans the task across the users, steps the
// per-user operators against the simulated devices, audits the record every
// `observer_cadence` device actions, and recovers from flagged errors by
// restarting the devices and replaying the validated prefix. When `out_dir`
// is set, writes transcript.jsonl and result.json under it.
RunResult run_task(const std::string& task, const Scenario& scenario,
                   const BackendFactory& backend_factory, const RunConfig& config);

// Convenience overload for backends that do not need to see the farm.
RunResult run_task(const std::string& task, const Scenario& scenario,
                   std::shared_ptr<Backend> backend, const RunConfig& config);

// Factory bridging declarative backend config into a run.
BackendFactory backend_factory_from_config(BackendConfig config);

nlohmann::json result_to_json(const RunResult& result);
RunResult result_from_json(const nlohmann::json& j);

void write_result(const RunResult& result, const std::string& path);
RunResult load_result(const std::string& path);

}  // namespace madroid
