#pragma once

#include <string>
#include <string_view>

namespace madroid {

enum class ActionKind { tap, input, back, switch_user, end_task };

const char* to_string(ActionKind kind);
bool is_device_action(ActionKind kind);

// One primitive agent action. Unused fields stay empty for the given kind:
//   tap         -> target
//   input       -> target, value
//   back        -> (none)
//   switch_user -> user, message (message may be empty)
//   end_task    -> (none)
struct Action {
  ActionKind kind = ActionKind::back;
  std::string target;
  std::string value;
  std::string user;
  std::string message;

  bool operator==(const Action&) const = default;

  static Action tap(std::string target);
  static Action input(std::string target, std::string value);
  static Action back();
  static Action switch_user(std::string user, std::string message = "");
  static Action end_task();
};

// Extracts the first well-formed bracketed action from a free-form model
// reply. Keyword tokens match case-insensitively, surrounding prose is
// ignored, and a literal ']' inside an operand is written "\]" (backslash
// escapes the next character). Throws UnparsableReply when no action can be
// extracted; never crashes on arbitrary bytes.
Action parse_action(std::string_view reply);

// Canonical bracket form, e.g. "[input] [code field] [4821]". Operands are
// escaped so that parse_action(render_action(a)) == a.
std::string render_action(const Action& action);

// Fixed text block listing the five primitives with their one-line
// descriptions; embedded verbatim into every Operator prompt.
const std::string& action_space_prompt();

}  // namespace madroid
