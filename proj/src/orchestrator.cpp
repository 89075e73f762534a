#include "madroid/orchestrator.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <utility>

#include "madroid/device_farm.hpp"
#include "madroid/errors.hpp"
#include "madroid/labels.hpp"
#include "madroid/prompts.hpp"
#include "madroid/view_hierarchy.hpp"

namespace madroid {
namespace {

const char* phase_name(ReviewPhase phase) {
  return phase == ReviewPhase::periodic ? "periodic" : "final";
}

ReviewPhase phase_from_name(const std::string& name) {
  if (name == "periodic") return ReviewPhase::periodic;
  if (name == "final") return ReviewPhase::final_check;
  throw IoError("unknown review phase: " + name);
}

const char* verdict_name(VerdictStatus status) {
  switch (status) {
    case VerdictStatus::ok:
      return "ok";
    case VerdictStatus::error_at:
      return "error_at";
    case VerdictStatus::complete:
      return "complete";
    case VerdictStatus::incomplete:
      return "incomplete";
  }
  return "ok";
}

VerdictStatus verdict_from_name(const std::string& name) {
  if (name == "ok") return VerdictStatus::ok;
  if (name == "error_at") return VerdictStatus::error_at;
  if (name == "complete") return VerdictStatus::complete;
  if (name == "incomplete") return VerdictStatus::incomplete;
  throw IoError("unknown verdict: " + name);
}

// Mutable state of one attempt, rebuilt by every restart.
struct RunState {
  std::string current_user;
  std::optional<std::string> pending_message;   // handed over by the last switch
  std::optional<std::string> pending_feedback;  // corrective sentence for the next prompt
  int device_count = 0;
  std::map<std::string, int> per_user_count;
  int strikes = 0;  // consecutive unusable actions of the current prompt cycle
};

class TaskRunner {
 public:
  TaskRunner(const std::string& task, const Scenario& scenario,
             const BackendFactory& backend_factory, const RunConfig& config)
      : task_(task),
        scenario_(scenario),
        config_(config),
        templates_(config.prompts_dir.empty() ? PromptTemplates::defaults()
                                              : PromptTemplates::from_dir(config.prompts_dir)),
        farm_(scenario, config.seed),
        gateway_(backend_factory(scenario, farm_)) {}

  RunResult run() {
    result_.seed = config_.seed;
    try {
      plan();
      drive();
    } catch (const PlanParseError& e) {
      fail(FailureReason::plan_error, e.what());
    } catch (const OperatorFailure& e) {
      fail(FailureReason::operator_failure, e.what());
    } catch (const MaxRestartsExceeded& e) {
      fail(FailureReason::max_restarts, e.what());
    } catch (const Error& e) {
      fail(FailureReason::infra_error, e.what());
    } catch (const std::exception& e) {
      fail(FailureReason::infra_error, e.what());
    }
    result_.record = record_;
    result_.restarts_used = restarts_;
    result_.bindings = farm_.bindings();
    persist();
    return result_;
  }

 private:
  void plan() {
    ChatSession& coordinator = gateway_.open_session(
        AgentRole::coordinator, render_template(templates_.coordinator_system, {{"task", task_}}));
    result_.plan = plan_task(task_, gateway_, coordinator, templates_);
    if (result_.plan.user_count != scenario_.user_slots) {
      throw PlanParseError("coordinator planned for " + std::to_string(result_.plan.user_count) +
                           " users but the scenario provides " +
                           std::to_string(scenario_.user_slots));
    }
    observer_ = &gateway_.open_session(
        AgentRole::observer, render_template(templates_.observer_system, {{"task", task_}}));
    open_operator_sessions();
    state_.current_user = result_.plan.first_user;
  }

  void open_operator_sessions() {
    operators_.clear();
    for (const auto& [label, sub_task] : result_.plan.sub_tasks) {
      (void)sub_task;
      operators_[label] = &gateway_.open_session(
          AgentRole::operator_agent, render_template(templates_.operator_system, {{"user", label}}),
          label);
    }
  }

  void drive() {
    while (!done_) {
      if (state_.device_count >= config_.max_total_actions ||
          state_.per_user_count[state_.current_user] >= config_.max_actions_per_user) {
        fail(FailureReason::budget_exhausted,
             "action budget exhausted after " + std::to_string(state_.device_count) +
                 " device actions without completing the task");
        return;
      }

      const std::string raw_screen = farm_.device_screen(state_.current_user);
      const std::string screen_text =
          serialize_prompt(simplify(parse_screen(raw_screen, state_.current_user)));
      const std::string* sub_task = result_.plan.sub_task_of(state_.current_user);
      if (sub_task == nullptr) {
        throw Error("no sub-task planned for " + state_.current_user);
      }

      Action action = next_action(*sub_task, screen_text,
                                  std::exchange(state_.pending_message, std::nullopt),
                                  std::exchange(state_.pending_feedback, std::nullopt), gateway_,
                                  *operators_.at(state_.current_user), templates_);

      switch (action.kind) {
        case ActionKind::switch_user:
          handle_switch(action, raw_screen, screen_text);
          break;
        case ActionKind::end_task:
          handle_end_task(action, raw_screen, screen_text);
          break;
        default:
          handle_device_action(action, raw_screen, screen_text);
          break;
      }
    }
  }

  void handle_switch(Action action, const std::string& raw_screen,
                     const std::string& screen_text) {
    std::optional<int> slot = slot_for_user_label(action.user);
    if (!slot || *slot >= result_.plan.user_count ||
        user_label_for_slot(*slot) == state_.current_user) {
      handle_unusable_action(action);
      return;
    }
    action.user = user_label_for_slot(*slot);  // store the canonical label
    append_step(action, "", raw_screen, screen_text, false, false);
    state_.strikes = 0;
    state_.pending_message =
        action.message.empty() ? std::nullopt : std::optional<std::string>(action.message);
    state_.current_user = action.user;
  }

  void handle_end_task(const Action& action, const std::string& raw_screen,
                       const std::string& screen_text) {
    append_step(action, "", raw_screen, screen_text, false, false);
    state_.strikes = 0;
    Verdict verdict = run_review(ReviewPhase::final_check);
    switch (verdict.status) {
      case VerdictStatus::complete:
        if (farm_.check_success()) {
          result_.success = true;
          done_ = true;
        } else {
          fail(FailureReason::success_check_failed,
               "the reviewer declared the task complete but the environment state does not "
               "satisfy the success condition");
        }
        break;
      case VerdictStatus::incomplete:
        fail(FailureReason::observer_incomplete,
             verdict.reason.empty() ? "the reviewer judged the task incomplete" : verdict.reason);
        break;
      case VerdictStatus::error_at:
        restart_and_replay(verdict.step_index);
        break;
      case VerdictStatus::ok:
        throw Error("final review returned a periodic verdict");
    }
  }

  void handle_device_action(const Action& action, const std::string& raw_screen,
                            const std::string& screen_text) {
    StepOutcome outcome;
    try {
      outcome = farm_.execute(state_.current_user, action);
    } catch (const TargetMissing&) {
      handle_unusable_action(action);
      return;
    }
    append_step(action, outcome.resolved_target, raw_screen, screen_text, outcome.changed,
                outcome.ineffective);
    state_.strikes = 0;
    ++state_.device_count;
    ++state_.per_user_count[state_.current_user];
    if (config_.observer_cadence > 0 && state_.device_count % config_.observer_cadence == 0) {
      Verdict verdict = run_review(ReviewPhase::periodic);
      if (verdict.status == VerdictStatus::error_at) {
        restart_and_replay(verdict.step_index);
      }
    }
  }

  // An action whose target does not exist (or a switch to an unknown/own
  // label) does not reach a device. The reviewer gets an early look at the
  // record: a flagged earlier step triggers the usual restart, an all-clear
  // means the mistake is the fresh action itself, so the operator is
  // re-prompted with corrective feedback. Two unusable actions in a row give
  // up on the operator.
  void handle_unusable_action(const Action& action) {
    ++state_.strikes;
    if (state_.strikes >= 2) {
      throw OperatorFailure("operator for " + state_.current_user +
                            " produced two unusable actions in a row, last: " +
                            render_action(action));
    }
    Verdict verdict = run_review(ReviewPhase::periodic);
    if (verdict.status == VerdictStatus::error_at) {
      restart_and_replay(verdict.step_index);
    } else {
      state_.pending_feedback = feedback_sentence(action);
    }
  }

  Verdict run_review(ReviewPhase phase) {
    Verdict verdict = review(result_.plan, record_, phase, gateway_, *observer_, templates_,
                             config_.record_token_budget);
    result_.reviews.push_back(
        {state_.device_count, phase, verdict.status, verdict.step_index});
    return verdict;
  }

  void append_step(const Action& action, const std::string& resolved_target,
                   const std::string& raw_screen, const std::string& screen_text, bool changed,
                   bool ineffective) {
    RecordedStep step;
    step.step_index = static_cast<int>(record_.steps.size());
    step.user = state_.current_user;
    step.action = action;
    step.resolved_target = resolved_target;
    step.screen_text = screen_text;
    step.screen_digest = digest_hex(raw_screen);
    step.changed = changed;
    step.ineffective = ineffective;
    record_.steps.push_back(std::move(step));
  }

  // Drops the flagged step and everything after it, returns the devices to
  // their spawn state, and re-executes the surviving prefix so the
  // environment matches the record again. The operator that took the flagged
  // action gets fresh sessions and a corrective feedback sentence.
  void restart_and_replay(int error_step) {
    if (restarts_ + 1 > config_.max_restarts) {
      throw MaxRestartsExceeded("review flagged step " + std::to_string(error_step) +
                                " but the restart limit of " +
                                std::to_string(config_.max_restarts) + " is already spent");
    }
    ++restarts_;
    if (error_step < 0 || error_step >= static_cast<int>(record_.steps.size())) {
      throw Error("review flagged a step outside the record");
    }
    const Action flagged_action = record_.steps[static_cast<std::size_t>(error_step)].action;
    const std::string flagged_user = record_.steps[static_cast<std::size_t>(error_step)].user;

    record_.steps.resize(static_cast<std::size_t>(error_step));
    record_.restarts = restarts_;
    farm_.reset();
    gateway_.backend().notify_restart(record_);
    open_operator_sessions();

    RunState fresh;
    fresh.current_user = result_.plan.first_user;
    for (const RecordedStep& step : record_.steps) {
      if (step.user != fresh.current_user) {
        throw Error("replay diverged: step " + std::to_string(step.step_index) + " belongs to " +
                    step.user + " but " + fresh.current_user + " is active");
      }
      if (step.action.kind == ActionKind::switch_user) {
        fresh.pending_message = step.action.message.empty()
                                    ? std::nullopt
                                    : std::optional<std::string>(step.action.message);
        fresh.current_user = step.action.user;
        continue;
      }
      const std::string raw_screen = farm_.device_screen(fresh.current_user);
      if (digest_hex(raw_screen) != step.screen_digest) {
        throw Error("replay diverged: screen digest mismatch at step " +
                    std::to_string(step.step_index));
      }
      try {
        farm_.execute(fresh.current_user, step.action);
      } catch (const TargetMissing& e) {
        throw Error("replay diverged at step " + std::to_string(step.step_index) + ": " +
                    e.what());
      }
      ++fresh.device_count;
      ++fresh.per_user_count[fresh.current_user];
    }
    if (fresh.current_user != flagged_user) {
      throw Error("replay diverged: expected " + flagged_user + " to act after the prefix");
    }
    fresh.pending_feedback = feedback_sentence(flagged_action);
    state_ = std::move(fresh);
  }

  void fail(FailureReason reason, const std::string& detail) {
    result_.success = false;
    result_.failure = reason;
    result_.failure_detail = detail;
    done_ = true;
  }

  void persist() {
    if (config_.out_dir.empty()) return;
    try {
      std::filesystem::create_directories(config_.out_dir);
      const std::string transcript =
          (std::filesystem::path(config_.out_dir) / "transcript.jsonl").string();
      gateway_.persist_transcript(transcript);
      result_.transcript_path = transcript;
      write_result(result_, (std::filesystem::path(config_.out_dir) / "result.json").string());
    } catch (const std::exception& e) {
      if (result_.failure == FailureReason::none) {
        result_.success = false;
        result_.failure = FailureReason::infra_error;
        result_.failure_detail = std::string("failed to write run artifacts: ") + e.what();
      }
    }
  }

  const std::string& task_;
  const Scenario& scenario_;
  const RunConfig& config_;
  PromptTemplates templates_;
  DeviceFarm farm_;
  ChatGateway gateway_;
  ChatSession* observer_ = nullptr;
  std::map<std::string, ChatSession*> operators_;
  RunState state_;
  ExecutionRecord record_;
  int restarts_ = 0;
  bool done_ = false;
  RunResult result_;
};

}  // namespace

const char* to_string(FailureReason reason) {
  switch (reason) {
    case FailureReason::none:
      return "none";
    case FailureReason::plan_error:
      return "plan_error";
    case FailureReason::operator_failure:
      return "operator_failure";
    case FailureReason::budget_exhausted:
      return "budget_exhausted";
    case FailureReason::max_restarts:
      return "max_restarts";
    case FailureReason::observer_incomplete:
      return "observer_incomplete";
    case FailureReason::success_check_failed:
      return "success_check_failed";
    case FailureReason::infra_error:
      return "infra_error";
  }
  return "infra_error";
}

namespace {

FailureReason failure_from_name(const std::string& name) {
  for (FailureReason r :
       {FailureReason::none, FailureReason::plan_error, FailureReason::operator_failure,
        FailureReason::budget_exhausted, FailureReason::max_restarts,
        FailureReason::observer_incomplete, FailureReason::success_check_failed,
        FailureReason::infra_error}) {
    if (name == to_string(r)) return r;
  }
  throw IoError("unknown failure reason: " + name);
}

}  // namespace

RunResult run_task(const std::string& task, const Scenario& scenario,
                   const BackendFactory& backend_factory, const RunConfig& config) {
  TaskRunner runner(task, scenario, backend_factory, config);
  return runner.run();
}

RunResult run_task(const std::string& task, const Scenario& scenario,
                   std::shared_ptr<Backend> backend, const RunConfig& config) {
  return run_task(
      task, scenario,
      [&backend](const Scenario&, const DeviceFarm&) { return backend; }, config);
}

BackendFactory backend_factory_from_config(BackendConfig config) {
  return [config = std::move(config)](const Scenario& scenario, const DeviceFarm& farm) {
    return make_backend(config, &scenario, &farm);
  };
}

nlohmann::json result_to_json(const RunResult& result) {
  nlohmann::json steps = nlohmann::json::array();
  for (const RecordedStep& step : result.record.steps) {
    steps.push_back({
        {"step", step.step_index},
        {"user", step.user},
        {"action", action_to_json(step.action)},
        {"resolved_target", step.resolved_target},
        {"screen_text", step.screen_text},
        {"screen_digest", step.screen_digest},
        {"changed", step.changed},
        {"ineffective", step.ineffective},
    });
  }
  nlohmann::json reviews = nlohmann::json::array();
  for (const ReviewEvent& event : result.reviews) {
    nlohmann::json r = {
        {"device_count", event.device_count},
        {"phase", phase_name(event.phase)},
        {"verdict", verdict_name(event.verdict)},
    };
    if (event.verdict == VerdictStatus::error_at) r["step"] = event.step_index;
    reviews.push_back(std::move(r));
  }
  nlohmann::json sub_tasks = nlohmann::json::array();
  for (const auto& [label, text] : result.plan.sub_tasks) {
    sub_tasks.push_back({{"user", label}, {"text", text}});
  }
  return {
      {"result_version", 1},
      {"success", result.success},
      {"failure", to_string(result.failure)},
      {"failure_detail", result.failure_detail},
      {"restarts", result.restarts_used},
      {"seed", result.seed},
      {"plan",
       {{"task", result.plan.task},
        {"user_count", result.plan.user_count},
        {"first_user", result.plan.first_user},
        {"sub_tasks", std::move(sub_tasks)}}},
      {"bindings", result.bindings},
      {"reviews", std::move(reviews)},
      {"record", std::move(steps)},
      {"transcript", result.transcript_path},
  };
}

RunResult result_from_json(const nlohmann::json& j) {
  RunResult result;
  result.success = j.at("success").get<bool>();
  result.failure = failure_from_name(j.at("failure").get<std::string>());
  result.failure_detail = j.value("failure_detail", std::string());
  result.restarts_used = j.at("restarts").get<int>();
  result.seed = j.at("seed").get<std::uint64_t>();
  result.transcript_path = j.value("transcript", std::string());
  const nlohmann::json& plan = j.at("plan");
  result.plan.task = plan.value("task", std::string());
  result.plan.user_count = plan.at("user_count").get<int>();
  result.plan.first_user = plan.at("first_user").get<std::string>();
  for (const nlohmann::json& s : plan.at("sub_tasks")) {
    result.plan.sub_tasks.emplace_back(s.at("user").get<std::string>(),
                                       s.at("text").get<std::string>());
  }
  if (j.contains("bindings")) {
    for (const auto& [name, value] : j.at("bindings").items()) {
      result.bindings[name] = value.get<std::string>();
    }
  }
  for (const nlohmann::json& r : j.at("reviews")) {
    ReviewEvent event;
    event.device_count = r.at("device_count").get<int>();
    event.phase = phase_from_name(r.at("phase").get<std::string>());
    event.verdict = verdict_from_name(r.at("verdict").get<std::string>());
    event.step_index = r.value("step", -1);
    result.reviews.push_back(event);
  }
  for (const nlohmann::json& s : j.at("record")) {
    RecordedStep step;
    step.step_index = s.at("step").get<int>();
    step.user = s.at("user").get<std::string>();
    step.action = action_from_json(s.at("action"));
    step.resolved_target = s.value("resolved_target", std::string());
    step.screen_text = s.value("screen_text", std::string());
    step.screen_digest = s.value("screen_digest", std::string());
    step.changed = s.value("changed", false);
    step.ineffective = s.value("ineffective", false);
    result.record.steps.push_back(std::move(step));
  }
  result.record.restarts = result.restarts_used;
  return result;
}

void write_result(const RunResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write result file: " + path);
  out << result_to_json(result).dump(2) << "\n";
  if (!out) throw IoError("failed while writing result file: " + path);
}

RunResult load_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read result file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("result file is not valid JSON: " + path + ": " + e.what());
  }
  try {
    return result_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("result file has an unexpected shape: " + path + ": " + e.what());
  }
}

}  // namespace madroid
