#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "madroid/scenario.hpp"

namespace madroid {

struct StepOutcome {
  bool changed = false;       // some device's screen changed
  bool ineffective = false;   // nothing in the scenario reacted
  bool rule_matched = false;
  int resolved_node = -1;           // node id in the simplified pre-action tree
  std::string resolved_target;      // resource_id (full) if present, else text
  std::vector<std::string> notes;   // human-readable side effects (injections, timers)
};

// Simulated fleet of per-user devices driving one scenario. Time advances in
// discrete global steps, one per executed device action; generated values
// (join codes) come from a seeded generator so identical seeds give
// identical runs.
class DeviceFarm {
 public:
  DeviceFarm(const Scenario& scenario, std::uint64_t seed);

  // Returns the farm to exactly the fresh-spawn state (same seed).
  void reset();

  // Deterministic raw dump of the user's current screen, with bound
  // variables substituted into element text.
  std::string device_screen(const std::string& user) const;

  // Applies one device action for `user`: resolves the target against the
  // simplified current screen, fires the unique matching rule's effects (or
  // performs the default back/no-op behavior), then advances every pending
  // timer by one global step. Throws TargetMissing when the referenced
  // element is absent.
  StepOutcome execute(const std::string& user, const Action& action);

  bool check_success() const;

  const Scenario& scenario() const { return *scenario_; }
  std::uint64_t seed() const { return seed_; }
  long global_step() const { return step_; }
  std::string current_screen(const std::string& user) const;
  const std::map<std::string, std::string>& bindings() const { return vars_; }
  const std::map<std::string, std::string>& flags() const { return flags_; }

  // Replaces {name} placeholders with bound variable values; unbound names
  // stay literal.
  std::string resolve_vars(std::string_view text) const;

 private:
  struct Device {
    std::string screen;
    std::vector<std::string> back_stack;
  };
  struct ActiveTimer {
    std::string name;
    long expires_at = 0;
    std::vector<EffectDef> on_expiry;
  };

  int require_slot(const std::string& user) const;
  void apply_effects(const std::vector<EffectDef>& effects, int acting_slot, const Action& action,
                     StepOutcome& out);
  void set_device_screen(int slot, const std::string& screen_id);
  std::string generate_value(const std::string& spec);

  const Scenario* scenario_;
  std::uint64_t seed_;
  std::vector<Device> devices_;
  std::map<std::string, std::string> flags_;
  std::map<std::string, std::string> vars_;
  std::vector<ActiveTimer> timers_;
  long step_ = 0;
  std::mt19937_64 rng_;
};

DeviceFarm spawn_farm(const Scenario& scenario, std::uint64_t seed);

}  // namespace madroid
