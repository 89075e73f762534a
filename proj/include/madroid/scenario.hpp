#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "madroid/action.hpp"

namespace madroid {

struct ElementDef {
  std::string class_name;
  std::string resource_id;  // short id, unique within its screen
  std::string text;         // may contain {var} placeholders
  std::string content_desc;
  bool clickable = false;
  bool editable = false;
};

struct ScreenDef {
  std::vector<ElementDef> elements;
};

// Trigger pattern of a transition rule. `target` matches an element by id
// (short or full), text, or content description, case-insensitively; an
// absent `value` matches any input value.
struct ActionPattern {
  ActionKind kind = ActionKind::tap;
  std::string target;
  std::optional<std::string> value;
};

struct EffectDef {
  enum class Kind { set_screen, set_flag, bind_var, inject_screen, start_timer };
  Kind kind = Kind::set_screen;
  std::string user;     // set_screen / inject_screen
  std::string screen;   // set_screen / inject_screen
  std::string name;     // set_flag / bind_var / start_timer
  std::string value;    // set_flag
  std::string generate;     // bind_var: "digits:<n>"
  bool from_input = false;  // bind_var: take the typed value
  int ttl_steps = 0;                  // start_timer
  std::vector<EffectDef> on_expiry;   // start_timer
};

struct RuleDef {
  std::string user;  // canonical label or "any"
  std::string screen;
  ActionPattern when;
  std::vector<EffectDef> then;
};

struct GroundTruthEntry {
  std::string user;
  Action action;
};

struct SuccessSpec {
  std::map<std::string, std::string> screens;  // user label -> required screen
  std::map<std::string, std::string> flags;    // flag -> required value ("" = unset)
};

struct ScenarioMetadata {
  int expected_user_count = 0;
  std::map<std::string, std::string> sub_tasks;  // user label -> sub-task hint
};

struct Scenario {
  std::string name;
  std::string app;  // package-style token used in emitted resource ids
  int user_slots = 0;
  std::map<std::string, ScreenDef> screens;
  std::map<std::string, std::string> initial;  // user label -> starting screen
  std::vector<RuleDef> transitions;
  SuccessSpec success_when;
  std::vector<GroundTruthEntry> ground_truth;
  ScenarioMetadata metadata;

  std::vector<std::string> user_labels() const;
  int slot_of(std::string_view label) const;  // -1 when unknown
};

Action action_from_json(const nlohmann::json& j);
nlohmann::json action_to_json(const Action& action);

Scenario parse_scenario(const nlohmann::json& j);

// Parses, validates structurally, then validates behaviorally by replaying
// the ground truth on a fresh farm and checking the success condition.
// Throws ScenarioInvalid on any problem, IoError when unreadable.
Scenario load_scenario(const std::string& path);

// The two validation halves, usable separately in tests.
void validate_scenario_structure(const Scenario& scenario);
void validate_scenario_ground_truth(const Scenario& scenario);

}  // namespace madroid
