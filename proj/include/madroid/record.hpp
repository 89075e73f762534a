#pragma once

#include <string>
#include <vector>

#include "madroid/action.hpp"

namespace madroid {

// One executed step of a run. Device actions (tap/input/back) carry the
// resolved target identity and count toward budgets and review cadence;
// switch_user and end_task steps are recorded for auditing but not counted.
struct RecordedStep {
  int step_index = 0;
  std::string user;
  Action action;
  std::string resolved_target;  // resource_id if present, else text; device actions only
  std::string screen_text;      // serialized simplified screen seen before the action
  std::string screen_digest;    // digest of the raw dump seen before the action
  bool changed = false;
  bool ineffective = false;
};

struct ExecutionRecord {
  std::vector<RecordedStep> steps;
  int restarts = 0;

  int device_action_count() const {
    int n = 0;
    for (const auto& s : steps) {
      if (is_device_action(s.action.kind)) ++n;
    }
    return n;
  }
};

}  // namespace madroid
