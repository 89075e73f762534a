#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "madroid/gateway.hpp"
#include "madroid/prompts.hpp"
#include "madroid/record.hpp"

namespace madroid {

struct TaskPlan {
  std::string task;
  int user_count = 0;
  std::vector<std::pair<std::string, std::string>> sub_tasks;  // (label, text) per user
  std::string first_user;

  const std::string* sub_task_of(const std::string& label) const;
};

enum class VerdictStatus { ok, error_at, complete, incomplete };

struct Verdict {
  VerdictStatus status = VerdictStatus::ok;
  int step_index = -1;    // error_at only
  std::string reason;
};

enum class ReviewPhase { periodic, final_check };

// Runs the three-prompt planning dialogue on a coordinator session: user
// count, bracket-delimited segmentation, first sub-task. Each step re-asks
// once on a malformed reply, then throws PlanParseError.
TaskPlan plan_task(const std::string& task, ChatGateway& gateway, ChatSession& session,
                   const PromptTemplates& templates);

// Asks an operator session for one action given the current serialized
// screen, an optional inbox message handed over by a user switch, and an
// optional corrective feedback sentence. Retries once on an unparsable
// reply, then throws OperatorFailure.
Action next_action(const std::string& sub_task, const std::string& serialized_screen,
                   const std::optional<std::string>& inbox_message,
                   const std::optional<std::string>& feedback, ChatGateway& gateway,
                   ChatSession& session, const PromptTemplates& templates);

// Asks the observer session to audit the (budget-truncated) record.
// Accepted verdicts depend on the phase: periodic -> ok | error_at,
// final -> complete | incomplete | error_at. A reply that fails to parse is
// re-asked once; a second failure falls back to ok (periodic) or
// incomplete (final), with the fallback noted in the verdict reason.
Verdict review(const TaskPlan& plan, const ExecutionRecord& record, ReviewPhase phase,
               ChatGateway& gateway, ChatSession& session, const PromptTemplates& templates,
               int token_budget);

// Longest suffix of whole steps whose rendered cost fits the budget; the
// most recent step is always kept. Cost of a step is ceil(len/4) tokens of
// its rendered text. Returns the index of the first kept step.
std::size_t truncate_record(const ExecutionRecord& record, int token_budget);

// The exact corrective sentence delivered to a restarted operator.
std::string feedback_sentence(const Action& previous_action);

// Rendering helpers shared by review() and the ground-truth reviewer.
std::string render_plan_summary(const TaskPlan& plan);
std::string render_record_step(const RecordedStep& step);
std::string render_record(const ExecutionRecord& record, std::size_t begin_index);

// Parses one "step N | user | action" line; returns nothing for non-step
// lines (screen detail rows).
std::optional<std::pair<int, std::pair<std::string, Action>>> parse_record_line(
    const std::string& line);

// Keyword-first verdict parsing; throws ReviewParseError on unusable replies
// (including verdict keywords from the wrong phase and out-of-range steps).
Verdict parse_observer_reply(const std::string& reply, ReviewPhase phase,
                             const ExecutionRecord& record);

int step_cost_tokens(const RecordedStep& step);

}  // namespace madroid
