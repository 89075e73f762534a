#include "madroid/action.hpp"

#include <cctype>
#include <optional>

#include "madroid/errors.hpp"

namespace madroid {
namespace {

struct BracketToken {
  std::string content;   // unescaped operand text
  std::size_t end = 0;   // index one past the closing ']'
};

// Reads one bracket token starting at the '[' at position `start`. Backslash
// escapes the next character; an unescaped ']' closes the token. Returns
// nothing when the bracket never closes.
std::optional<BracketToken> read_bracket(std::string_view s, std::size_t start) {
  BracketToken tok;
  std::size_t i = start + 1;
  while (i < s.size()) {
    char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      tok.content.push_back(s[i + 1]);
      i += 2;
      continue;
    }
    if (c == ']') {
      tok.end = i + 1;
      return tok;
    }
    tok.content.push_back(c);
    ++i;
  }
  return std::nullopt;
}

// Lowercases a keyword token and normalizes separators so that e.g.
// "End Task", "end-task" and "END_TASK" all compare equal.
std::string normalize_keyword(std::string_view raw) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i) {
    char c = raw[i];
    if (c == ' ' || c == '-' || c == '\t') {
      out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

std::optional<ActionKind> keyword_kind(const std::string& kw) {
  if (kw == "tap") return ActionKind::tap;
  if (kw == "input") return ActionKind::input;
  if (kw == "back") return ActionKind::back;
  if (kw == "switch" || kw == "switch_user" || kw == "switchuser") return ActionKind::switch_user;
  if (kw == "end_task" || kw == "endtask") return ActionKind::end_task;
  return std::nullopt;
}

// Reads the next operand bracket, allowing only whitespace between the
// previous token and the '['.
std::optional<BracketToken> next_operand(std::string_view s, std::size_t from) {
  std::size_t i = from;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  if (i >= s.size() || s[i] != '[') return std::nullopt;
  return read_bracket(s, i);
}

std::optional<Action> complete_action(std::string_view s, ActionKind kind, std::size_t after_keyword) {
  switch (kind) {
    case ActionKind::back:
      return Action::back();
    case ActionKind::end_task:
      return Action::end_task();
    case ActionKind::tap: {
      auto op = next_operand(s, after_keyword);
      if (!op || op->content.empty()) return std::nullopt;
      return Action::tap(op->content);
    }
    case ActionKind::input: {
      auto target = next_operand(s, after_keyword);
      if (!target || target->content.empty()) return std::nullopt;
      auto value = next_operand(s, target->end);
      if (!value) return std::nullopt;
      return Action::input(target->content, value->content);
    }
    case ActionKind::switch_user: {
      auto user = next_operand(s, after_keyword);
      if (!user || user->content.empty()) return std::nullopt;
      Action a = Action::switch_user(user->content);
      if (auto msg = next_operand(s, user->end)) a.message = msg->content;
      return a;
    }
  }
  return std::nullopt;
}

std::string escape_operand(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\\' || c == ']') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

const char* to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::tap: return "tap";
    case ActionKind::input: return "input";
    case ActionKind::back: return "back";
    case ActionKind::switch_user: return "switch_user";
    case ActionKind::end_task: return "end_task";
  }
  return "unknown";
}

bool is_device_action(ActionKind kind) {
  return kind == ActionKind::tap || kind == ActionKind::input || kind == ActionKind::back;
}

Action Action::tap(std::string target) {
  Action a;
  a.kind = ActionKind::tap;
  a.target = std::move(target);
  return a;
}

Action Action::input(std::string target, std::string value) {
  Action a;
  a.kind = ActionKind::input;
  a.target = std::move(target);
  a.value = std::move(value);
  return a;
}

Action Action::back() {
  Action a;
  a.kind = ActionKind::back;
  return a;
}

Action Action::switch_user(std::string user, std::string message) {
  Action a;
  a.kind = ActionKind::switch_user;
  a.user = std::move(user);
  a.message = std::move(message);
  return a;
}

Action Action::end_task() {
  Action a;
  a.kind = ActionKind::end_task;
  return a;
}

Action parse_action(std::string_view reply) {
  std::size_t i = reply.find('[');
  while (i != std::string_view::npos) {
    if (auto tok = read_bracket(reply, i)) {
      if (auto kind = keyword_kind(normalize_keyword(tok->content))) {
        if (auto action = complete_action(reply, *kind, tok->end)) return *action;
      }
    }
    i = reply.find('[', i + 1);
  }
  throw UnparsableReply("no well-formed bracketed action in reply");
}

std::string render_action(const Action& action) {
  switch (action.kind) {
    case ActionKind::tap:
      return "[tap] [" + escape_operand(action.target) + "]";
    case ActionKind::input:
      return "[input] [" + escape_operand(action.target) + "] [" + escape_operand(action.value) + "]";
    case ActionKind::back:
      return "[back]";
    case ActionKind::switch_user:
      return "[switch] [" + escape_operand(action.user) + "] [" + escape_operand(action.message) + "]";
    case ActionKind::end_task:
      return "[end_task]";
  }
  return "[back]";
}

const std::string& action_space_prompt() {
  static const std::string kBlock =
      "Action space (reply with exactly one action in bracket form):\n"
      "  tap: [tap] [element] - click on the element on the GUI screen.\n"
      "  input: [input] [element] [value] - enter the value into the GUI element field.\n"
      "  back: [back] - return to the preceding GUI screen.\n"
      "  switch_user: [switch] [user] [message] - switch to a different user with a message.\n"
      "  end_task: [end_task] - finish the task.\n";
  return kBlock;
}

}  // namespace madroid
