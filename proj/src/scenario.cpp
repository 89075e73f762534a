#include "madroid/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "madroid/device_farm.hpp"
#include "madroid/errors.hpp"
#include "madroid/labels.hpp"
#include "madroid/view_hierarchy.hpp"

namespace madroid {
namespace {

using nlohmann::json;

constexpr std::uint64_t kValidationSeed = 0;

[[noreturn]] void invalid(const std::string& what) {
  throw ScenarioInvalid("invalid scenario: " + what);
}

bool iequals(std::string_view a, std::string_view b) {
  return to_lower(a) == to_lower(b);
}

std::string require_string(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_string()) invalid(ctx + ": missing string field '" + key + "'");
  return j[key].get<std::string>();
}

EffectDef effect_from_json(const json& j, const std::string& ctx);

std::vector<EffectDef> effects_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array()) invalid(ctx + ": effects must be an array");
  std::vector<EffectDef> out;
  for (const auto& e : j) out.push_back(effect_from_json(e, ctx));
  return out;
}

EffectDef effect_from_json(const json& j, const std::string& ctx) {
  if (!j.is_object() || j.size() != 1) invalid(ctx + ": each effect must be a one-key object");
  EffectDef def;
  const std::string key = j.begin().key();
  const json& body = j.begin().value();
  if (key == "set_screen" || key == "inject_screen") {
    def.kind = key == "set_screen" ? EffectDef::Kind::set_screen : EffectDef::Kind::inject_screen;
    def.user = require_string(body, "user", ctx + "/" + key);
    def.screen = require_string(body, "screen", ctx + "/" + key);
  } else if (key == "set_flag") {
    def.kind = EffectDef::Kind::set_flag;
    def.name = require_string(body, "name", ctx + "/set_flag");
    def.value = require_string(body, "value", ctx + "/set_flag");
  } else if (key == "bind_var") {
    def.kind = EffectDef::Kind::bind_var;
    def.name = require_string(body, "name", ctx + "/bind_var");
    if (body.contains("generate")) def.generate = body["generate"].get<std::string>();
    def.from_input = body.value("from", "") == "input";
    if (def.generate.empty() == !def.from_input) {
      invalid(ctx + "/bind_var: need exactly one of generate or from=input");
    }
  } else if (key == "start_timer") {
    def.kind = EffectDef::Kind::start_timer;
    def.name = require_string(body, "name", ctx + "/start_timer");
    if (!body.contains("ttl") || !body["ttl"].is_number_integer()) {
      invalid(ctx + "/start_timer: missing integer ttl");
    }
    def.ttl_steps = body["ttl"].get<int>();
    if (!body.contains("on_expiry")) invalid(ctx + "/start_timer: missing on_expiry");
    def.on_expiry = effects_from_json(body["on_expiry"], ctx + "/start_timer");
  } else {
    invalid(ctx + ": unknown effect '" + key + "'");
  }
  return def;
}

ActionKind kind_from_string(const std::string& s, const std::string& ctx) {
  if (s == "tap") return ActionKind::tap;
  if (s == "input") return ActionKind::input;
  if (s == "back") return ActionKind::back;
  if (s == "switch" || s == "switch_user") return ActionKind::switch_user;
  if (s == "end_task") return ActionKind::end_task;
  invalid(ctx + ": unknown action kind '" + s + "'");
}

// --- static rule-overlap analysis ------------------------------------------

bool users_overlap(const std::string& a, const std::string& b) {
  return a == "any" || b == "any" || a == b;
}

bool pattern_has_var(const std::string& p) {
  return p.find('{') != std::string::npos;
}

// Element set a target pattern can match on a screen (indices). Patterns
// containing variables are treated as matching everything, conservatively.
std::set<std::size_t> match_set(const std::string& pattern, const ScreenDef& screen) {
  std::set<std::size_t> out;
  if (pattern_has_var(pattern)) {
    for (std::size_t i = 0; i < screen.elements.size(); ++i) out.insert(i);
    return out;
  }
  for (std::size_t i = 0; i < screen.elements.size(); ++i) {
    const ElementDef& e = screen.elements[i];
    if (iequals(pattern, e.resource_id) || (!e.text.empty() && iequals(pattern, e.text)) ||
        (!e.content_desc.empty() && iequals(pattern, e.content_desc))) {
      out.insert(i);
    }
  }
  return out;
}

bool values_overlap(const std::optional<std::string>& a, const std::optional<std::string>& b) {
  if (!a || !b) return true;  // absent pattern matches any value
  if (pattern_has_var(*a) || pattern_has_var(*b)) return true;
  return *a == *b;
}

void check_rule_ambiguity(const Scenario& sc) {
  for (std::size_t i = 0; i < sc.transitions.size(); ++i) {
    for (std::size_t k = i + 1; k < sc.transitions.size(); ++k) {
      const RuleDef& a = sc.transitions[i];
      const RuleDef& b = sc.transitions[k];
      if (a.screen != b.screen || a.when.kind != b.when.kind) continue;
      if (!users_overlap(a.user, b.user)) continue;
      if (a.when.kind == ActionKind::back) {
        invalid("rules " + std::to_string(i) + " and " + std::to_string(k) +
                " both match back on screen '" + a.screen + "'");
      }
      const ScreenDef& screen = sc.screens.at(a.screen);
      std::set<std::size_t> ma = match_set(a.when.target, screen);
      std::set<std::size_t> mb = match_set(b.when.target, screen);
      std::vector<std::size_t> common;
      std::set_intersection(ma.begin(), ma.end(), mb.begin(), mb.end(),
                            std::back_inserter(common));
      if (!common.empty() && values_overlap(a.when.value, b.when.value)) {
        invalid("rules " + std::to_string(i) + " and " + std::to_string(k) +
                " can match the same trigger on screen '" + a.screen + "'");
      }
    }
  }
}

void validate_effects(const Scenario& sc, const std::vector<EffectDef>& effects,
                      const RuleDef* rule, const std::string& ctx, bool in_expiry) {
  for (const EffectDef& e : effects) {
    switch (e.kind) {
      case EffectDef::Kind::set_screen:
      case EffectDef::Kind::inject_screen: {
        if (sc.slot_of(e.user) < 0) invalid(ctx + ": unknown user '" + e.user + "'");
        if (!sc.screens.count(e.screen)) invalid(ctx + ": unknown screen '" + e.screen + "'");
        if (e.kind == EffectDef::Kind::inject_screen && !in_expiry) {
          if (!rule || rule->user == "any") {
            invalid(ctx + ": inject_screen requires a concrete acting user");
          }
          if (rule->user == e.user) {
            invalid(ctx + ": inject_screen must target a different user than the acting one");
          }
        }
        break;
      }
      case EffectDef::Kind::set_flag:
        if (e.name.empty()) invalid(ctx + ": set_flag with empty name");
        break;
      case EffectDef::Kind::bind_var:
        if (e.name.empty()) invalid(ctx + ": bind_var with empty name");
        if (e.from_input && (in_expiry || !rule || rule->when.kind != ActionKind::input)) {
          invalid(ctx + ": bind_var from=input is only valid on input rules");
        }
        if (!e.generate.empty() && e.generate.rfind("digits:", 0) != 0) {
          invalid(ctx + ": unsupported generator '" + e.generate + "'");
        }
        break;
      case EffectDef::Kind::start_timer:
        if (e.ttl_steps < 1) invalid(ctx + ": timer ttl must be >= 1");
        if (e.on_expiry.empty()) invalid(ctx + ": timer without on_expiry effects");
        validate_effects(sc, e.on_expiry, rule, ctx + "/on_expiry", true);
        break;
    }
  }
}

}  // namespace

std::string user_label_for_slot(int slot) {
  std::string label = "user_";
  if (slot < 26) {
    label.push_back(static_cast<char>('A' + slot));
  } else {
    label += std::to_string(slot);
  }
  return label;
}

std::optional<int> slot_for_user_label(std::string_view label) {
  std::string low = to_lower(label);
  if (low.rfind("user_", 0) != 0 || low.size() != 6) return std::nullopt;
  char c = low[5];
  if (c < 'a' || c > 'z') return std::nullopt;
  return c - 'a';
}

std::vector<std::string> Scenario::user_labels() const {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(user_slots));
  for (int i = 0; i < user_slots; ++i) out.push_back(user_label_for_slot(i));
  return out;
}

int Scenario::slot_of(std::string_view label) const {
  auto slot = slot_for_user_label(label);
  if (!slot || *slot >= user_slots) return -1;
  return *slot;
}

Action action_from_json(const json& j) {
  if (!j.is_object()) throw ScenarioInvalid("action must be an object");
  const std::string kind = require_string(j, "kind", "action");
  switch (kind_from_string(kind, "action")) {
    case ActionKind::tap:
      return Action::tap(require_string(j, "target", "tap action"));
    case ActionKind::input:
      return Action::input(require_string(j, "target", "input action"), j.value("value", ""));
    case ActionKind::back:
      return Action::back();
    case ActionKind::switch_user:
      return Action::switch_user(require_string(j, "to", "switch action"), j.value("message", ""));
    case ActionKind::end_task:
      return Action::end_task();
  }
  throw ScenarioInvalid("unreachable action kind");
}

json action_to_json(const Action& action) {
  json j = {{"kind", to_string(action.kind)}};
  switch (action.kind) {
    case ActionKind::tap:
      j["target"] = action.target;
      break;
    case ActionKind::input:
      j["target"] = action.target;
      j["value"] = action.value;
      break;
    case ActionKind::switch_user:
      j["to"] = action.user;
      j["message"] = action.message;
      break;
    default:
      break;
  }
  return j;
}

Scenario parse_scenario(const json& j) {
  if (!j.is_object()) invalid("document root must be an object");
  Scenario sc;
  sc.name = require_string(j, "name", "scenario");
  sc.app = require_string(j, "app", "scenario");
  if (!j.contains("user_slots") || !j["user_slots"].is_number_integer()) {
    invalid("missing integer user_slots");
  }
  sc.user_slots = j["user_slots"].get<int>();

  if (!j.contains("screens") || !j["screens"].is_object()) invalid("missing screens object");
  for (const auto& [screen_id, body] : j["screens"].items()) {
    ScreenDef screen;
    if (!body.contains("elements") || !body["elements"].is_array()) {
      invalid("screen '" + screen_id + "' missing elements array");
    }
    for (const auto& el : body["elements"]) {
      ElementDef def;
      def.class_name = require_string(el, "class", "screen '" + screen_id + "'");
      def.resource_id = require_string(el, "id", "screen '" + screen_id + "'");
      def.text = el.value("text", "");
      def.content_desc = el.value("desc", "");
      def.clickable = el.value("clickable", false);
      def.editable = el.value("editable", false);
      screen.elements.push_back(std::move(def));
    }
    sc.screens.emplace(screen_id, std::move(screen));
  }

  if (!j.contains("initial") || !j["initial"].is_object()) invalid("missing initial object");
  for (const auto& [label, screen] : j["initial"].items()) {
    if (!screen.is_string()) invalid("initial screen for '" + label + "' must be a string");
    sc.initial.emplace(label, screen.get<std::string>());
  }

  if (!j.contains("transitions") || !j["transitions"].is_array()) {
    invalid("missing transitions array");
  }
  int rule_no = 0;
  for (const auto& rj : j["transitions"]) {
    const std::string ctx = "rule " + std::to_string(rule_no++);
    RuleDef rule;
    if (!rj.contains("when") || !rj["when"].is_object()) invalid(ctx + ": missing when");
    const json& when = rj["when"];
    rule.user = require_string(when, "user", ctx);
    rule.screen = require_string(when, "screen", ctx);
    if (!when.contains("action") || !when["action"].is_object()) {
      invalid(ctx + ": missing when.action");
    }
    const json& aj = when["action"];
    rule.when.kind = kind_from_string(require_string(aj, "kind", ctx), ctx);
    rule.when.target = aj.value("target", "");
    if (aj.contains("value")) rule.when.value = aj["value"].get<std::string>();
    if (!rj.contains("then")) invalid(ctx + ": missing then");
    rule.then = effects_from_json(rj["then"], ctx);
    sc.transitions.push_back(std::move(rule));
  }

  if (!j.contains("success_when") || !j["success_when"].is_object()) {
    invalid("missing success_when object");
  }
  const json& sw = j["success_when"];
  if (sw.contains("screens")) {
    for (const auto& [label, screen] : sw["screens"].items()) {
      sc.success_when.screens.emplace(label, screen.get<std::string>());
    }
  }
  if (sw.contains("flags")) {
    for (const auto& [flag, value] : sw["flags"].items()) {
      sc.success_when.flags.emplace(flag, value.get<std::string>());
    }
  }

  if (!j.contains("ground_truth") || !j["ground_truth"].is_array()) {
    invalid("missing ground_truth array");
  }
  for (const auto& gj : j["ground_truth"]) {
    GroundTruthEntry entry;
    entry.user = require_string(gj, "user", "ground truth entry");
    if (!gj.contains("action")) invalid("ground truth entry missing action");
    entry.action = action_from_json(gj["action"]);
    sc.ground_truth.push_back(std::move(entry));
  }

  if (!j.contains("metadata") || !j["metadata"].is_object()) invalid("missing metadata object");
  const json& meta = j["metadata"];
  if (!meta.contains("expected_user_count") || !meta["expected_user_count"].is_number_integer()) {
    invalid("metadata missing integer expected_user_count");
  }
  sc.metadata.expected_user_count = meta["expected_user_count"].get<int>();
  if (!meta.contains("sub_tasks") || !meta["sub_tasks"].is_object()) {
    invalid("metadata missing sub_tasks object");
  }
  for (const auto& [label, text] : meta["sub_tasks"].items()) {
    sc.metadata.sub_tasks.emplace(label, text.get<std::string>());
  }
  return sc;
}

void validate_scenario_structure(const Scenario& sc) {
  if (sc.name.empty()) invalid("empty name");
  if (sc.app.empty() || sc.app.find(' ') != std::string::npos) {
    invalid("app must be a package-style token");
  }
  if (sc.user_slots < 2) invalid("user_slots must be >= 2");
  if (sc.screens.empty()) invalid("no screens defined");

  for (const auto& [screen_id, screen] : sc.screens) {
    std::set<std::string> ids;
    if (screen.elements.empty()) invalid("screen '" + screen_id + "' has no elements");
    for (const ElementDef& e : screen.elements) {
      if (e.class_name.empty()) invalid("element without class on screen '" + screen_id + "'");
      if (e.resource_id.empty()) invalid("element without id on screen '" + screen_id + "'");
      if (!ids.insert(to_lower(e.resource_id)).second) {
        invalid("duplicate element id '" + e.resource_id + "' on screen '" + screen_id + "'");
      }
      if (e.editable && to_lower(e.class_name).find("edit") == std::string::npos) {
        invalid("editable element '" + e.resource_id + "' must use an editable class");
      }
    }
  }

  if (static_cast<int>(sc.initial.size()) != sc.user_slots) {
    invalid("initial must list exactly one screen per user slot");
  }
  for (const std::string& label : sc.user_labels()) {
    auto it = sc.initial.find(label);
    if (it == sc.initial.end()) invalid("initial missing user '" + label + "'");
    if (!sc.screens.count(it->second)) {
      invalid("initial screen '" + it->second + "' for '" + label + "' is not defined");
    }
  }

  int rule_no = 0;
  for (const RuleDef& rule : sc.transitions) {
    const std::string ctx = "rule " + std::to_string(rule_no++);
    if (rule.user != "any" && sc.slot_of(rule.user) < 0) {
      invalid(ctx + ": unknown user '" + rule.user + "'");
    }
    if (!sc.screens.count(rule.screen)) invalid(ctx + ": unknown screen '" + rule.screen + "'");
    if (!is_device_action(rule.when.kind)) invalid(ctx + ": rules trigger on device actions only");
    if (rule.when.kind == ActionKind::back) {
      if (!rule.when.target.empty()) invalid(ctx + ": back rules take no target");
    } else if (rule.when.target.empty()) {
      invalid(ctx + ": tap/input rules need a target pattern");
    }
    if (rule.when.value && rule.when.kind != ActionKind::input) {
      invalid(ctx + ": value patterns are only valid on input rules");
    }
    if (rule.then.empty()) invalid(ctx + ": rule with no effects");
    validate_effects(sc, rule.then, &rule, ctx, false);
  }
  check_rule_ambiguity(sc);

  for (const auto& [label, screen] : sc.success_when.screens) {
    if (sc.slot_of(label) < 0) invalid("success_when references unknown user '" + label + "'");
    if (!sc.screens.count(screen)) {
      invalid("success_when references unknown screen '" + screen + "'");
    }
  }
  for (const auto& [flag, _] : sc.success_when.flags) {
    if (flag.empty()) invalid("success_when flag with empty name");
  }
  if (sc.success_when.screens.empty() && sc.success_when.flags.empty()) {
    invalid("success_when must state at least one requirement");
  }

  if (sc.metadata.expected_user_count != sc.user_slots) {
    invalid("metadata expected_user_count must equal user_slots");
  }
  if (static_cast<int>(sc.metadata.sub_tasks.size()) != sc.user_slots) {
    invalid("metadata must give one sub_task per user");
  }
  for (const std::string& label : sc.user_labels()) {
    auto it = sc.metadata.sub_tasks.find(label);
    if (it == sc.metadata.sub_tasks.end() || it->second.empty()) {
      invalid("metadata sub_task missing for '" + label + "'");
    }
  }

  // Ground-truth shape: turn-taking consistency and a single trailing
  // end_task.
  if (sc.ground_truth.empty()) invalid("empty ground_truth");
  for (std::size_t i = 0; i < sc.ground_truth.size(); ++i) {
    const GroundTruthEntry& entry = sc.ground_truth[i];
    const std::string ctx = "ground truth entry " + std::to_string(i);
    if (sc.slot_of(entry.user) < 0) invalid(ctx + ": unknown user '" + entry.user + "'");
    const Action& a = entry.action;
    if (a.kind == ActionKind::end_task) {
      if (i + 1 != sc.ground_truth.size()) invalid(ctx + ": end_task before the final entry");
    } else if (a.kind == ActionKind::switch_user) {
      if (sc.slot_of(a.user) < 0) invalid(ctx + ": switch to unknown user '" + a.user + "'");
      if (iequals(a.user, entry.user)) invalid(ctx + ": switch to self");
      if (i + 1 >= sc.ground_truth.size()) invalid(ctx + ": trailing switch");
      if (!iequals(sc.ground_truth[i + 1].user, a.user)) {
        invalid(ctx + ": next entry must belong to the switched-to user");
      }
    } else {
      if (a.kind != ActionKind::back && a.target.empty()) invalid(ctx + ": missing target");
      if (i + 1 < sc.ground_truth.size() &&
          !iequals(sc.ground_truth[i + 1].user, entry.user)) {
        invalid(ctx + ": user changes without a switch");
      }
    }
  }
  if (sc.ground_truth.back().action.kind != ActionKind::end_task) {
    invalid("ground truth must end with end_task");
  }
}

void validate_scenario_ground_truth(const Scenario& sc) {
  DeviceFarm farm(sc, kValidationSeed);
  for (std::size_t i = 0; i < sc.ground_truth.size(); ++i) {
    const GroundTruthEntry& entry = sc.ground_truth[i];
    if (!is_device_action(entry.action.kind)) continue;
    Action action = entry.action;
    action.target = farm.resolve_vars(action.target);
    action.value = farm.resolve_vars(action.value);
    StepOutcome outcome;
    try {
      outcome = farm.execute(entry.user, action);
    } catch (const Error& e) {
      invalid("ground truth step " + std::to_string(i) + " not executable: " + e.what());
    }
    if (!outcome.rule_matched && !(entry.action.kind == ActionKind::back && outcome.changed)) {
      invalid("ground truth step " + std::to_string(i) + " (" + render_action(entry.action) +
              ") had no effect");
    }
  }
  if (!farm.check_success()) {
    invalid("replaying the ground truth does not satisfy success_when");
  }
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read scenario: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    invalid("bad JSON in " + path + ": " + e.what());
  }
  Scenario sc = parse_scenario(j);
  validate_scenario_structure(sc);
  validate_scenario_ground_truth(sc);
  return sc;
}

}  // namespace madroid
