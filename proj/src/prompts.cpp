#include "madroid/prompts.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "madroid/errors.hpp"

namespace madroid {
namespace {

const char* kCoordinatorSystem =
    "I need your assistance in performing specific tasks for Android apps. The task involves "
    "several users interacting with each other, and you coordinate it. You will receive a "
    "description of the task along with questions that need to be addressed.\n\n"
    "Task: {task}\n";

const char* kCountPrompt =
    "Please specify the exact number of users essential for the successful completion of the "
    "task. Provide only the numerical figure, without any additional text or characters.\n";

const char* kSegmentPrompt =
    "Please break the task down into sub-tasks. Each sub-task should include the description of "
    "what one user is required to execute, listed in user order. Please encapsulate each sub-task "
    "within brackets [like this].\n"
    "Here is an example:\n"
    "  Task: start a video call\n"
    "  Segmented sub-tasks: [initiate a video call] and [accept the call]\n";

const char* kFirstPrompt =
    "Please determine the first sub-task to be executed, i.e. the initial event that starts the "
    "task. Reply with that sub-task or its user label.\n";

const char* kOperatorSystem =
    "You are the Operator agent for {user}. You control the Android device of {user} and execute "
    "GUI actions on it to carry out your assigned sub-task of a multi-user feature test.\n";

const char* kOperatorPrompt =
    "Your sub-task: {sub_task}\n"
    "\n"
    "{action_space}"
    "\n"
    "The current GUI screen of your device:\n"
    "{screen}"
    "{inbox}"
    "{feedback}"
    "\n"
    "Considering the sub-task, the available actions and the current screen, infer a single "
    "viable action to execute. Reply with exactly one action in bracket form.\n";

const char* kObserverSystem =
    "You are the Observer agent. Your role is to review the execution of a multi-user interactive "
    "task and detect any potential erroneous actions.\n\n"
    "Overall task: {task}\n";

const char* kObserverPeriodicPrompt =
    "Task coordination summary:\n"
    "{plan}\n"
    "The execution record so far, as a numbered list of steps:\n"
    "{record}\n"
    "Please check the record above for erroneous actions. If every action is correct, reply "
    "\"ok\". If some action is wrong, reply \"error at step N: reason\" citing the step number "
    "from the list.\n";

const char* kObserverFinalPrompt =
    "Task coordination summary:\n"
    "{plan}\n"
    "The full execution record, as a numbered list of steps:\n"
    "{record}\n"
    "The Operators report that the task is finished. Please confirm whether the task has been "
    "completed successfully. Reply \"complete\" if it has, \"incomplete: reason\" if it has not, "
    "or \"error at step N: reason\" if a specific recorded action was wrong.\n";

std::string read_file_or(const std::filesystem::path& path, const std::string& fallback) {
  std::ifstream in(path);
  if (!in) return fallback;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

const PromptTemplates& PromptTemplates::defaults() {
  static const PromptTemplates kDefaults = {
      kCoordinatorSystem,     kCountPrompt,
      kSegmentPrompt,         kFirstPrompt,
      kOperatorSystem,        kOperatorPrompt,
      kObserverSystem,        kObserverPeriodicPrompt,
      kObserverFinalPrompt,
  };
  return kDefaults;
}

PromptTemplates PromptTemplates::from_dir(const std::string& dir) {
  std::filesystem::path base(dir);
  if (!std::filesystem::is_directory(base)) {
    throw IoError("prompt template directory not found: " + dir);
  }
  const PromptTemplates& d = defaults();
  PromptTemplates t;
  t.coordinator_system = read_file_or(base / "coordinator_system.txt", d.coordinator_system);
  t.count_prompt = read_file_or(base / "count_prompt.txt", d.count_prompt);
  t.segment_prompt = read_file_or(base / "segment_prompt.txt", d.segment_prompt);
  t.first_prompt = read_file_or(base / "first_prompt.txt", d.first_prompt);
  t.operator_system = read_file_or(base / "operator_system.txt", d.operator_system);
  t.operator_prompt = read_file_or(base / "operator_prompt.txt", d.operator_prompt);
  t.observer_system = read_file_or(base / "observer_system.txt", d.observer_system);
  t.observer_periodic_prompt =
      read_file_or(base / "observer_periodic_prompt.txt", d.observer_periodic_prompt);
  t.observer_final_prompt =
      read_file_or(base / "observer_final_prompt.txt", d.observer_final_prompt);
  return t;
}

std::string render_template(const std::string& tpl,
                            const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      std::size_t close = tpl.find('}', i + 1);
      if (close != std::string::npos) {
        auto it = vars.find(tpl.substr(i + 1, close - i - 1));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tpl[i++]);
  }
  return out;
}

}  // namespace madroid
