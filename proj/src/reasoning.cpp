#include "rvec/reasoning.hpp"

#include "rvec/error.hpp"

namespace rvec {

std::string_view to_string(ReasoningType t) {
  switch (t) {
    case ReasoningType::deductive: return "deductive";
    case ReasoningType::inductive: return "inductive";
    case ReasoningType::abductive: return "abductive";
  }
  return "?";
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::unsteered: return "unsteered";
    case Variant::mono: return "mono";
    case Variant::refined: return "refined";
    case Variant::strong_prompt: return "strong_prompt";
    case Variant::weak_prompt: return "weak_prompt";
  }
  return "?";
}

ReasoningType parse_reasoning_type(std::string_view name) {
  for (ReasoningType t : kReasoningTypes)
    if (to_string(t) == name) return t;
  fail(ErrorKind::ConfigError, "unknown reasoning type: " + std::string(name));
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::unsteered, Variant::mono, Variant::refined, Variant::strong_prompt,
                    Variant::weak_prompt})
    if (to_string(v) == name) return v;
  fail(ErrorKind::ConfigError, "unknown variant: " + std::string(name));
}

}  // namespace rvec
