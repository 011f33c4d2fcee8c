#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace rvec {

enum class ReasoningType { deductive = 0, inductive = 1, abductive = 2 };

inline constexpr std::array<ReasoningType, 3> kReasoningTypes = {
    ReasoningType::deductive, ReasoningType::inductive, ReasoningType::abductive};

inline constexpr std::size_t index_of(ReasoningType t) { return static_cast<std::size_t>(t); }

enum class Variant { unsteered, mono, refined, strong_prompt, weak_prompt };

std::string_view to_string(ReasoningType t);
std::string_view to_string(Variant v);
/// Throws ConfigError on unknown names.
ReasoningType parse_reasoning_type(std::string_view name);
Variant parse_variant(std::string_view name);

}  // namespace rvec
