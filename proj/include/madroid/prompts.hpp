#pragma once

#include <map>
#include <string>

namespace madroid {
namespace prompts {

// Stable phrases each prompt template must contain. The ground-truth backend
// classifies incoming prompts by these markers, so keep them in sync with
// the template texts.
inline constexpr const char* kCountMarker = "exact number of users";
inline constexpr const char* kSegmentMarker = "encapsulate each sub-task within brackets";
inline constexpr const char* kFirstMarker = "determine the first sub-task";
inline constexpr const char* kOperatorMarker = "infer a single viable action";
inline constexpr const char* kPeriodicMarker = "check the record above for erroneous actions";
inline constexpr const char* kFinalMarker = "confirm whether the task has been completed";

}  // namespace prompts

// The conversational surface of the three agent roles. Every template is a
// plain text block with {placeholder} slots so deployments can tune the
// wording without rebuilding; the compiled-in defaults are authoritative and
// the files shipped under prompts/ mirror them.
struct PromptTemplates {
  std::string coordinator_system;   // {task}
  std::string count_prompt;         // -
  std::string segment_prompt;       // -
  std::string first_prompt;         // -
  std::string operator_system;      // {user}
  std::string operator_prompt;      // {sub_task} {action_space} {screen} {inbox} {feedback}
  std::string observer_system;      // {task}
  std::string observer_periodic_prompt;  // {plan} {record}
  std::string observer_final_prompt;     // {plan} {record}

  static const PromptTemplates& defaults();

  // Loads template files (<name>.txt per field) from a directory; missing
  // files fall back to the defaults. Throws IoError when the directory does
  // not exist.
  static PromptTemplates from_dir(const std::string& dir);
};

// Replaces every "{key}" occurrence with vars.at(key); unknown keys stay
// literal.
std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& vars);

}  // namespace madroid
