#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace madroid {

// Canonical user labels: slot 0 -> "user_A", slot 1 -> "user_B", ...
std::string user_label_for_slot(int slot);

// Inverse mapping; accepts any capitalization ("User_B", "USER_B").
// Returns nothing for strings that are not canonical labels.
std::optional<int> slot_for_user_label(std::string_view label);

}  // namespace madroid
