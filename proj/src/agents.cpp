#include "madroid/agents.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "madroid/errors.hpp"
#include "madroid/labels.hpp"
#include "madroid/view_hierarchy.hpp"

namespace madroid {
namespace {

std::optional<long> first_integer(const std::string& text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      std::size_t end = i;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
      return std::stol(text.substr(i, end - i));
    }
  }
  return std::nullopt;
}

// All top-level bracket operands of a reply, honoring "\]" escapes.
std::vector<std::string> bracket_operands(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '[') {
      ++i;
      continue;
    }
    std::string content;
    std::size_t j = i + 1;
    bool closed = false;
    while (j < text.size()) {
      char c = text[j];
      if (c == '\\' && j + 1 < text.size()) {
        content.push_back(text[j + 1]);
        j += 2;
        continue;
      }
      if (c == ']') {
        closed = true;
        ++j;
        break;
      }
      content.push_back(c);
      ++j;
    }
    if (!closed) break;
    out.push_back(std::move(content));
    i = j;
  }
  return out;
}

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : to_lower(text)) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool is_word_boundary(const std::string& s, std::size_t pos, std::size_t len) {
  auto alnum = [&](std::size_t i) {
    return std::isalnum(static_cast<unsigned char>(s[i])) != 0;
  };
  if (pos > 0 && alnum(pos - 1)) return false;
  std::size_t end = pos + len;
  if (end < s.size() && alnum(end)) return false;
  return true;
}

std::size_t find_keyword(const std::string& low, const std::string& keyword) {
  std::size_t pos = low.find(keyword);
  while (pos != std::string::npos && !is_word_boundary(low, pos, keyword.size())) {
    pos = low.find(keyword, pos + 1);
  }
  return pos;
}

std::string indent_block(const std::string& text, int spaces) {
  std::string pad(static_cast<std::size_t>(spaces), ' ');
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t eol = text.find('\n', i);
    if (eol == std::string::npos) eol = text.size();
    out += pad;
    out.append(text, i, eol - i);
    out.push_back('\n');
    i = eol + 1;
  }
  return out;
}

std::string retry_suffix(const std::string& why) {
  return "\nYour previous reply could not be used: " + why + " Please answer again in the "
         "requested format.\n";
}

}  // namespace

const std::string* TaskPlan::sub_task_of(const std::string& label) const {
  std::string low = to_lower(label);
  for (const auto& [user, text] : sub_tasks) {
    if (to_lower(user) == low) return &text;
  }
  return nullptr;
}

TaskPlan plan_task(const std::string& task, ChatGateway& gateway, ChatSession& session,
                   const PromptTemplates& templates) {
  if (task.empty()) throw PlanParseError("empty task description");
  TaskPlan plan;
  plan.task = task;

  // 1. How many users does the task need?
  const std::string count_prompt = render_template(templates.count_prompt, {});
  std::string reply = gateway.ask(session, count_prompt);
  std::optional<long> count = first_integer(reply);
  if (!count || *count < 2 || *count > 26) {
    reply = gateway.ask(session, count_prompt + retry_suffix("it must contain the number of "
                                                             "users, at least 2."));
    count = first_integer(reply);
    if (!count || *count < 2 || *count > 26) {
      throw PlanParseError("coordinator did not provide a usable user count: " + reply);
    }
  }
  plan.user_count = static_cast<int>(*count);

  // 2. Segmentation into one bracketed sub-task per user.
  const std::string segment_prompt = render_template(templates.segment_prompt, {});
  reply = gateway.ask(session, segment_prompt);
  std::vector<std::string> parts = bracket_operands(reply);
  if (static_cast<int>(parts.size()) != plan.user_count) {
    reply = gateway.ask(session,
                        segment_prompt + retry_suffix("exactly " + std::to_string(plan.user_count) +
                                                      " bracketed sub-tasks are required."));
    parts = bracket_operands(reply);
    if (static_cast<int>(parts.size()) != plan.user_count) {
      throw PlanParseError("coordinator did not provide " + std::to_string(plan.user_count) +
                           " bracketed sub-tasks: " + reply);
    }
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    plan.sub_tasks.emplace_back(user_label_for_slot(static_cast<int>(i)), parts[i]);
  }

  // 3. Which sub-task goes first?
  const std::string first_prompt = render_template(templates.first_prompt, {});
  reply = gateway.ask(session, first_prompt);
  auto match_first = [&](const std::string& text) -> std::optional<std::string> {
    const std::string low = to_lower(text);
    // Explicit label, e.g. "user_B".
    std::size_t best_pos = std::string::npos;
    std::string best_label;
    for (const auto& [label, _] : plan.sub_tasks) {
      std::size_t pos = low.find(to_lower(label));
      if (pos != std::string::npos && pos < best_pos) {
        best_pos = pos;
        best_label = label;
      }
    }
    if (!best_label.empty()) return best_label;
    // Ordinal reference, e.g. "sub-task 1".
    if (auto n = first_integer(text)) {
      if (*n >= 1 && *n <= static_cast<long>(plan.sub_tasks.size())) {
        return plan.sub_tasks[static_cast<std::size_t>(*n - 1)].first;
      }
    }
    // Highest word overlap with a sub-task text.
    std::vector<std::string> reply_words = word_tokens(text);
    std::set<std::string> reply_set(reply_words.begin(), reply_words.end());
    int best_score = 0;
    std::string overlap_label;
    for (const auto& [label, sub] : plan.sub_tasks) {
      int score = 0;
      for (const std::string& w : word_tokens(sub)) {
        if (reply_set.count(w)) ++score;
      }
      if (score > best_score) {
        best_score = score;
        overlap_label = label;
      }
    }
    if (best_score > 0) return overlap_label;
    return std::nullopt;
  };
  std::optional<std::string> first = match_first(reply);
  if (!first) {
    reply = gateway.ask(session, first_prompt + retry_suffix("it must name one of the sub-tasks "
                                                             "or its user label."));
    first = match_first(reply);
    if (!first) {
      throw PlanParseError("coordinator reply matches no sub-task: " + reply);
    }
  }
  plan.first_user = *first;
  return plan;
}

Action next_action(const std::string& sub_task, const std::string& serialized_screen,
                   const std::optional<std::string>& inbox_message,
                   const std::optional<std::string>& feedback, ChatGateway& gateway,
                   ChatSession& session, const PromptTemplates& templates) {
  std::map<std::string, std::string> vars = {
      {"sub_task", sub_task},
      {"action_space", action_space_prompt()},
      {"screen", serialized_screen},
      {"inbox", inbox_message ? "\nYou received a message from another user: " + *inbox_message +
                                    "\n"
                              : ""},
      {"feedback", feedback ? "\n" + *feedback + "\n" : ""},
  };
  const std::string prompt = render_template(templates.operator_prompt, vars);
  std::string reply = gateway.ask(session, prompt);
  try {
    return parse_action(reply);
  } catch (const UnparsableReply&) {
  }
  reply = gateway.ask(session, prompt + retry_suffix("it did not contain a bracketed action."));
  try {
    return parse_action(reply);
  } catch (const UnparsableReply&) {
    throw OperatorFailure("operator for " + session.info.user_label +
                          " produced no parsable action: " + reply);
  }
}

int step_cost_tokens(const RecordedStep& step) {
  const std::string rendered = render_record_step(step);
  return static_cast<int>((rendered.size() + 3) / 4);
}

std::size_t truncate_record(const ExecutionRecord& record, int token_budget) {
  if (record.steps.empty()) return 0;
  long total = 0;
  std::size_t begin = record.steps.size();
  for (std::size_t i = record.steps.size(); i-- > 0;) {
    long cost = step_cost_tokens(record.steps[i]);
    if (begin == record.steps.size() || total + cost <= token_budget) {
      total += cost;
      begin = i;
    } else {
      break;
    }
  }
  return begin;
}

std::string feedback_sentence(const Action& previous_action) {
  return "Please note that a previous action, " + render_action(previous_action) +
         ", was incorrect and led to the task failing. Please consider choosing a different "
         "action.";
}

std::string render_plan_summary(const TaskPlan& plan) {
  std::ostringstream out;
  out << "The task requires " << plan.user_count << " users.\n";
  for (const auto& [label, sub] : plan.sub_tasks) {
    out << "  " << label << ": " << sub << "\n";
  }
  out << "The first sub-task is carried out by " << plan.first_user << ".\n";
  return out.str();
}

std::string render_record_step(const RecordedStep& step) {
  std::string out = "step " + std::to_string(step.step_index) + " | " + step.user + " | " +
                    render_action(step.action) + "\n";
  if (!step.screen_text.empty()) {
    out += "  screen seen before the action:\n";
    out += indent_block(step.screen_text, 4);
  }
  return out;
}

std::string render_record(const ExecutionRecord& record, std::size_t begin_index) {
  if (record.steps.empty()) return "(no actions executed yet)\n";
  std::string out;
  if (begin_index > 0) {
    out += "(" + std::to_string(begin_index) + " earlier steps omitted)\n";
  }
  for (std::size_t i = begin_index; i < record.steps.size(); ++i) {
    out += render_record_step(record.steps[i]);
  }
  return out;
}

std::optional<std::pair<int, std::pair<std::string, Action>>> parse_record_line(
    const std::string& line) {
  if (line.rfind("step ", 0) != 0) return std::nullopt;
  std::size_t bar1 = line.find(" | ");
  if (bar1 == std::string::npos) return std::nullopt;
  std::size_t bar2 = line.find(" | ", bar1 + 3);
  if (bar2 == std::string::npos) return std::nullopt;
  auto index = first_integer(line.substr(5, bar1 - 5));
  if (!index) return std::nullopt;
  std::string user = line.substr(bar1 + 3, bar2 - bar1 - 3);
  try {
    Action action = parse_action(line.substr(bar2 + 3));
    return std::make_pair(static_cast<int>(*index), std::make_pair(std::move(user), action));
  } catch (const UnparsableReply&) {
    return std::nullopt;
  }
}

Verdict parse_observer_reply(const std::string& reply, ReviewPhase phase,
                             const ExecutionRecord& record) {
  const std::string low = to_lower(reply);
  struct Hit {
    std::size_t pos;
    VerdictStatus status;
  };
  std::vector<Hit> hits;
  if (std::size_t p = find_keyword(low, "ok"); p != std::string::npos) {
    hits.push_back({p, VerdictStatus::ok});
  }
  if (std::size_t p = find_keyword(low, "incomplete"); p != std::string::npos) {
    hits.push_back({p, VerdictStatus::incomplete});
  }
  if (std::size_t p = find_keyword(low, "complete"); p != std::string::npos) {
    hits.push_back({p, VerdictStatus::complete});
  }
  if (std::size_t p = low.find("error at step"); p != std::string::npos) {
    hits.push_back({p, VerdictStatus::error_at});
  }
  if (hits.empty()) throw ReviewParseError("observer reply has no verdict keyword: " + reply);
  // Keyword-first: the earliest keyword wins. "incomplete" embeds
  // "complete" two characters later, so ties resolve themselves.
  const Hit best = *std::min_element(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    return a.pos < b.pos;
  });

  Verdict verdict;
  verdict.status = best.status;
  if (best.status == VerdictStatus::error_at) {
    std::string tail = reply.substr(best.pos + std::string("error at step").size());
    auto index = first_integer(tail);
    if (!index) throw ReviewParseError("error verdict without a step number: " + reply);
    if (*index < 0 || *index >= static_cast<long>(record.steps.size())) {
      throw ReviewParseError("error verdict cites a step that does not exist: " + reply);
    }
    verdict.step_index = static_cast<int>(*index);
    std::size_t colon = tail.find(':');
    if (colon != std::string::npos) {
      std::size_t b = tail.find_first_not_of(" \t", colon + 1);
      if (b != std::string::npos) {
        std::size_t e = tail.find('\n', b);
        verdict.reason = tail.substr(b, e == std::string::npos ? std::string::npos : e - b);
      }
    }
  } else if (best.status == VerdictStatus::incomplete) {
    std::size_t colon = reply.find(':', best.pos);
    if (colon != std::string::npos) {
      std::size_t b = reply.find_first_not_of(" \t", colon + 1);
      if (b != std::string::npos) verdict.reason = reply.substr(b);
    }
  }

  const bool phase_ok = phase == ReviewPhase::periodic
                            ? (verdict.status == VerdictStatus::ok ||
                               verdict.status == VerdictStatus::error_at)
                            : (verdict.status == VerdictStatus::complete ||
                               verdict.status == VerdictStatus::incomplete ||
                               verdict.status == VerdictStatus::error_at);
  if (!phase_ok) {
    throw ReviewParseError("observer verdict does not fit the review phase: " + reply);
  }
  return verdict;
}

Verdict review(const TaskPlan& plan, const ExecutionRecord& record, ReviewPhase phase,
               ChatGateway& gateway, ChatSession& session, const PromptTemplates& templates,
               int token_budget) {
  std::size_t begin = truncate_record(record, token_budget);
  std::map<std::string, std::string> vars = {
      {"plan", render_plan_summary(plan)},
      {"record", render_record(record, begin)},
  };
  const std::string& tpl = phase == ReviewPhase::periodic ? templates.observer_periodic_prompt
                                                          : templates.observer_final_prompt;
  const std::string prompt = render_template(tpl, vars);
  std::string reply = gateway.ask(session, prompt);
  try {
    return parse_observer_reply(reply, phase, record);
  } catch (const ReviewParseError&) {
  }
  reply = gateway.ask(session, prompt + retry_suffix("it was not a valid verdict for this "
                                                     "review."));
  try {
    return parse_observer_reply(reply, phase, record);
  } catch (const ReviewParseError&) {
    Verdict fallback;
    if (phase == ReviewPhase::periodic) {
      fallback.status = VerdictStatus::ok;
      fallback.reason = "fallback: observer reply unusable, treating the record as correct";
    } else {
      fallback.status = VerdictStatus::incomplete;
      fallback.reason = "fallback: observer reply unusable, treating the task as incomplete";
    }
    return fallback;
  }
}

}  // namespace madroid
