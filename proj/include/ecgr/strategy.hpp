#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace ecgr {

enum class Strategy { current_model, joint, fine_tune, ecgr, ecgr_qa, ecgr_wqa };

inline constexpr std::array<Strategy, 6> kAllStrategies = {Strategy::current_model, Strategy::joint,
                                                           Strategy::fine_tune,     Strategy::ecgr,
                                                           Strategy::ecgr_qa,       Strategy::ecgr_wqa};

[[nodiscard]] std::string_view strategy_name(Strategy s);
/// Column header used in report tables.
[[nodiscard]] std::string_view strategy_label(Strategy s);
[[nodiscard]] std::optional<Strategy> strategy_from_name(std::string_view name);
[[nodiscard]] bool uses_synthetic(Strategy s);

}  // namespace ecgr
