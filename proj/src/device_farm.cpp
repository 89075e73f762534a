#include "madroid/device_farm.hpp"

#include <algorithm>

#include "madroid/errors.hpp"
#include "madroid/labels.hpp"
#include "madroid/view_hierarchy.hpp"

namespace madroid {
namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

const char* bool_attr(bool b) {
  return b ? "true" : "false";
}

bool iequals(std::string_view a, std::string_view b) {
  return to_lower(a) == to_lower(b);
}

}  // namespace

DeviceFarm::DeviceFarm(const Scenario& scenario, std::uint64_t seed)
    : scenario_(&scenario), seed_(seed) {
  reset();
}

DeviceFarm spawn_farm(const Scenario& scenario, std::uint64_t seed) {
  return DeviceFarm(scenario, seed);
}

void DeviceFarm::reset() {
  devices_.clear();
  for (const std::string& label : scenario_->user_labels()) {
    auto it = scenario_->initial.find(label);
    if (it == scenario_->initial.end()) {
      throw ScenarioInvalid("scenario lacks an initial screen for " + label);
    }
    devices_.push_back(Device{it->second, {}});
  }
  flags_.clear();
  vars_.clear();
  timers_.clear();
  step_ = 0;
  rng_.seed(seed_ ^ fnv1a64(scenario_->name));
}

int DeviceFarm::require_slot(const std::string& user) const {
  int slot = scenario_->slot_of(user);
  if (slot < 0) throw Error("unknown user label '" + user + "'");
  return slot;
}

std::string DeviceFarm::current_screen(const std::string& user) const {
  return devices_[static_cast<std::size_t>(require_slot(user))].screen;
}

std::string DeviceFarm::resolve_vars(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        std::string name(text.substr(i + 1, close - i - 1));
        auto it = vars_.find(name);
        if (it != vars_.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

std::string DeviceFarm::device_screen(const std::string& user) const {
  int slot = require_slot(user);
  const std::string& screen_id = devices_[static_cast<std::size_t>(slot)].screen;
  const ScreenDef& screen = scenario_->screens.at(screen_id);

  std::string out;
  out += "<hierarchy rotation=\"0\">\n";
  out += "  <node index=\"0\" class=\"android.widget.FrameLayout\" resource-id=\"\" text=\"\""
         " content-desc=\"\" clickable=\"false\" enabled=\"true\" bounds=\"[0,0][1080,1920]\">\n";
  int top = 0;
  int idx = 0;
  for (const ElementDef& e : screen.elements) {
    int bottom = top + 120;
    const std::string bounds =
        "[0," + std::to_string(top) + "][1080," + std::to_string(bottom) + "]";
    out += "    <node index=\"" + std::to_string(idx) +
           "\" class=\"android.widget.LinearLayout\" resource-id=\"\" text=\"\""
           " content-desc=\"\" clickable=\"false\" enabled=\"true\" bounds=\"" + bounds + "\">\n";
    out += "      <node index=\"0\" class=\"" + xml_escape(e.class_name) +
           "\" resource-id=\"com." + xml_escape(scenario_->app) + ":id/" +
           xml_escape(e.resource_id) + "\" text=\"" + xml_escape(resolve_vars(e.text)) +
           "\" content-desc=\"" + xml_escape(resolve_vars(e.content_desc)) + "\" clickable=\"" +
           bool_attr(e.clickable) + "\" editable=\"" + bool_attr(e.editable) +
           "\" enabled=\"true\" focused=\"false\" bounds=\"" + bounds + "\"/>\n";
    out += "    </node>\n";
    top = bottom;
    ++idx;
  }
  out += "  </node>\n";
  out += "</hierarchy>\n";
  return out;
}

std::string DeviceFarm::generate_value(const std::string& spec) {
  // Only "digits:<n>" generators exist today.
  int n = std::stoi(spec.substr(spec.find(':') + 1));
  std::uniform_int_distribution<int> digit(0, 9);
  std::string out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(static_cast<char>('0' + digit(rng_)));
  return out;
}

void DeviceFarm::set_device_screen(int slot, const std::string& screen_id) {
  Device& dev = devices_[static_cast<std::size_t>(slot)];
  if (dev.screen == screen_id) return;
  dev.back_stack.push_back(dev.screen);
  dev.screen = screen_id;
}

void DeviceFarm::apply_effects(const std::vector<EffectDef>& effects, int acting_slot,
                               const Action& action, StepOutcome& out) {
  for (const EffectDef& e : effects) {
    switch (e.kind) {
      case EffectDef::Kind::set_screen: {
        int slot = scenario_->slot_of(e.user);
        set_device_screen(slot, e.screen);
        out.notes.push_back("screen of " + e.user + " is now '" + e.screen + "'");
        break;
      }
      case EffectDef::Kind::inject_screen: {
        int slot = scenario_->slot_of(e.user);
        if (slot == acting_slot) {
          throw ScenarioInvalid("inject_screen targets the acting user " + e.user);
        }
        set_device_screen(slot, e.screen);
        out.notes.push_back("injected screen '" + e.screen + "' onto the device of " + e.user);
        break;
      }
      case EffectDef::Kind::set_flag:
        flags_[e.name] = e.value;
        out.notes.push_back("flag " + e.name + "=" + e.value);
        break;
      case EffectDef::Kind::bind_var: {
        std::string value = e.from_input ? action.value : generate_value(e.generate);
        vars_[e.name] = value;
        out.notes.push_back("bound " + e.name + "=" + value);
        break;
      }
      case EffectDef::Kind::start_timer:
        timers_.push_back(ActiveTimer{e.name, step_ + e.ttl_steps, e.on_expiry});
        out.notes.push_back("timer '" + e.name + "' started, fires after " +
                            std::to_string(e.ttl_steps) + " steps");
        break;
    }
  }
}

StepOutcome DeviceFarm::execute(const std::string& user, const Action& action) {
  if (!is_device_action(action.kind)) {
    throw Error("only tap/input/back execute on a device, got " +
                std::string(to_string(action.kind)));
  }
  int slot = require_slot(user);
  Device& dev = devices_[static_cast<std::size_t>(slot)];
  const ScreenDef& screen = scenario_->screens.at(dev.screen);

  StepOutcome out;
  const ElementDef* element = nullptr;
  if (action.kind != ActionKind::back) {
    ViewTree simp = simplify(parse_screen(device_screen(user), user));
    int node_id = -1;
    try {
      node_id = resolve_element(
          simp, action.target,
          action.kind == ActionKind::tap ? NodePredicate(tap_eligible) : NodePredicate(input_eligible));
    } catch (const NoMatch& e) {
      throw TargetMissing("user " + user + " on screen '" + dev.screen + "': " + e.what());
    }
    const ViewNode* node = find_node(simp, node_id);
    out.resolved_node = node_id;
    out.resolved_target = node->resource_id.empty() ? node->text : node->resource_id;
    const std::string full_prefix = "com." + scenario_->app + ":id/";
    for (const ElementDef& e : screen.elements) {
      if (full_prefix + e.resource_id == node->resource_id) {
        element = &e;
        break;
      }
    }
    if (!element) {
      throw TargetMissing("resolved node is not an interactive element of screen '" + dev.screen +
                          "'");
    }
  }

  std::vector<std::string> before;
  before.reserve(devices_.size());
  for (const Device& d : devices_) before.push_back(d.screen);

  // Find the unique matching rule.
  std::vector<const RuleDef*> matches;
  for (const RuleDef& rule : scenario_->transitions) {
    if (rule.screen != dev.screen || rule.when.kind != action.kind) continue;
    if (rule.user != "any" && scenario_->slot_of(rule.user) != slot) continue;
    if (action.kind != ActionKind::back) {
      const std::string pattern = resolve_vars(rule.when.target);
      bool hit = iequals(pattern, element->resource_id) ||
                 iequals(pattern, "com." + scenario_->app + ":id/" + element->resource_id) ||
                 (!element->text.empty() && (iequals(pattern, element->text) ||
                                             iequals(pattern, resolve_vars(element->text)))) ||
                 (!element->content_desc.empty() &&
                  (iequals(pattern, element->content_desc) ||
                   iequals(pattern, resolve_vars(element->content_desc))));
      if (!hit) continue;
    }
    if (action.kind == ActionKind::input && rule.when.value) {
      if (resolve_vars(*rule.when.value) != action.value) continue;
    }
    matches.push_back(&rule);
  }
  if (matches.size() > 1) {
    throw ScenarioInvalid("more than one rule matches " + render_action(action) + " on screen '" +
                          dev.screen + "'");
  }

  if (matches.size() == 1) {
    out.rule_matched = true;
    apply_effects(matches.front()->then, slot, action, out);
  } else if (action.kind == ActionKind::back) {
    if (!dev.back_stack.empty()) {
      dev.screen = dev.back_stack.back();
      dev.back_stack.pop_back();
      out.notes.push_back("screen of " + user + " is now '" + dev.screen + "'");
    } else {
      out.ineffective = true;
      out.notes.push_back("back ignored at the initial screen");
    }
  } else {
    out.ineffective = true;
    out.notes.push_back("no reaction to " + render_action(action));
  }

  // Advance discrete time: a timer started at step s with ttl t fires at the
  // end of step s+t, exactly once.
  std::vector<ActiveTimer> due;
  for (auto it = timers_.begin(); it != timers_.end();) {
    if (it->expires_at == step_) {
      due.push_back(*it);
      it = timers_.erase(it);
    } else {
      ++it;
    }
  }
  for (const ActiveTimer& timer : due) {
    out.notes.push_back("timer '" + timer.name + "' expired");
    apply_effects(timer.on_expiry, -1, action, out);
  }
  ++step_;

  for (std::size_t i = 0; i < devices_.size(); ++i) {
    if (devices_[i].screen != before[i]) out.changed = true;
  }
  return out;
}

bool DeviceFarm::check_success() const {
  for (const auto& [label, screen] : scenario_->success_when.screens) {
    int slot = scenario_->slot_of(label);
    if (slot < 0 || devices_[static_cast<std::size_t>(slot)].screen != screen) return false;
  }
  for (const auto& [flag, expected] : scenario_->success_when.flags) {
    auto it = flags_.find(flag);
    const std::string actual = it == flags_.end() ? "" : it->second;
    if (actual != expected) return false;
  }
  return true;
}

}  // namespace madroid
