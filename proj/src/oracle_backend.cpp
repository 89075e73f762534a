#include <algorithm>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "madroid/agents.hpp"
#include "madroid/device_farm.hpp"
#include "madroid/errors.hpp"
#include "madroid/gateway.hpp"
#include "madroid/prompts.hpp"
#include "madroid/scenario.hpp"
#include "madroid/view_hierarchy.hpp"

namespace madroid {
namespace {

std::string escape_bracket_text(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '\\' || c == ']') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

// Answers every prompt from the scenario's ground truth, so any full run
// against it must reproduce the recorded action sequence. Used as the
// reference backend in simulations and tests.
class OracleBackend : public Backend {
 public:
  OracleBackend(const Scenario& scenario, const DeviceFarm& farm)
      : scenario_(&scenario), farm_(&farm) {}

  std::string complete(const SessionInfo& session, const std::vector<ChatEntry>& history,
                       const std::string& prompt) override {
    (void)history;
    std::lock_guard<std::mutex> lock(mutex_);
    switch (session.role) {
      case AgentRole::coordinator:
        return answer_coordinator(prompt);
      case AgentRole::operator_agent:
        return answer_operator();
      case AgentRole::observer:
        return answer_observer(prompt);
    }
    throw Error("ground-truth backend: unknown agent role");
  }

  void notify_restart(const ExecutionRecord& prefix) override {
    std::lock_guard<std::mutex> lock(mutex_);
    cursor_ = prefix.steps.size();
  }

 private:
  std::string answer_coordinator(const std::string& prompt) const {
    if (prompt.find(prompts::kCountMarker) != std::string::npos) {
      return std::to_string(scenario_->metadata.expected_user_count);
    }
    if (prompt.find(prompts::kSegmentMarker) != std::string::npos) {
      std::string out;
      for (const std::string& label : scenario_->user_labels()) {
        if (!out.empty()) out += " ";
        out += "[" + escape_bracket_text(scenario_->metadata.sub_tasks.at(label)) + "]";
      }
      return out;
    }
    if (prompt.find(prompts::kFirstMarker) != std::string::npos) {
      if (scenario_->ground_truth.empty()) {
        throw Error("ground-truth backend: scenario has no ground truth");
      }
      const std::string& user = scenario_->ground_truth.front().user;
      return "The first sub-task is \"" + scenario_->metadata.sub_tasks.at(user) +
             "\", carried out by " + user + ".";
    }
    throw Error("ground-truth backend: unrecognized coordinator prompt");
  }

  std::string answer_operator() {
    if (cursor_ >= scenario_->ground_truth.size()) {
      throw Error("ground-truth backend: ran past the end of the ground truth");
    }
    return render_action(resolved_truth(cursor_++));
  }

  std::string answer_observer(const std::string& prompt) const {
    const bool periodic = prompt.find(prompts::kPeriodicMarker) != std::string::npos;
    const bool final_check = prompt.find(prompts::kFinalMarker) != std::string::npos;
    if (!periodic && !final_check) {
      throw Error("ground-truth backend: unrecognized observer prompt");
    }

    std::vector<std::pair<int, std::pair<std::string, Action>>> lines;
    std::istringstream in(prompt);
    std::string line;
    while (std::getline(in, line)) {
      if (auto parsed = parse_record_line(line)) lines.push_back(*parsed);
    }

    int last_index = -1;
    for (const auto& [index, entry] : lines) {
      if (index >= static_cast<int>(scenario_->ground_truth.size())) {
        return "error at step " + std::to_string(index) + ": this action goes beyond the task";
      }
      const GroundTruthEntry& truth = scenario_->ground_truth[static_cast<std::size_t>(index)];
      const Action expected = resolved_truth(static_cast<std::size_t>(index));
      if (to_lower(entry.first) != to_lower(truth.user) ||
          to_lower(render_action(entry.second)) != to_lower(render_action(expected))) {
        return "error at step " + std::to_string(index) + ": expected " + truth.user + " to do " +
               render_action(expected);
      }
      last_index = std::max(last_index, index);
    }

    if (periodic) return "ok";
    if (last_index + 1 == static_cast<int>(scenario_->ground_truth.size())) return "complete";
    return "incomplete: the task still requires further actions";
  }

  Action resolved_truth(std::size_t index) const {
    Action action = scenario_->ground_truth[index].action;
    action.target = farm_->resolve_vars(action.target);
    action.value = farm_->resolve_vars(action.value);
    action.message = farm_->resolve_vars(action.message);
    return action;
  }

  const Scenario* scenario_;
  const DeviceFarm* farm_;
  std::size_t cursor_ = 0;
  mutable std::mutex mutex_;
};

}  // namespace

std::shared_ptr<Backend> make_oracle_backend(const Scenario& scenario, const DeviceFarm& farm) {
  return std::make_shared<OracleBackend>(scenario, farm);
}

}  // namespace madroid
