#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace patrolsim {

/// Racial group sampled for each simulated crime.
enum class RaceGroup { Black = 0, White = 1, Neither = 2 };

inline constexpr std::size_t kGroupCount = 3;
inline constexpr std::array<RaceGroup, kGroupCount> kAllGroups{RaceGroup::Black, RaceGroup::White,
                                                              RaceGroup::Neither};

inline constexpr std::size_t index_of(RaceGroup g) { return static_cast<std::size_t>(g); }

inline std::string_view to_string(RaceGroup g) {
  switch (g) {
    case RaceGroup::Black:
      return "Black";
    case RaceGroup::White:
      return "White";
    case RaceGroup::Neither:
      return "Neither";
  }
  return "?";
}

inline std::optional<RaceGroup> parse_group(std::string_view s) {
  for (RaceGroup g : kAllGroups) {
    if (to_string(g) == s) return g;
  }
  return std::nullopt;
}

}  // namespace patrolsim
