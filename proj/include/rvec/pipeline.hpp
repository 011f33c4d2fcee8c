#pragma once

// Pipeline stages behind the `rvec` command. Each stage reads the artifacts of
// earlier stages from conventional file names in the output directory, writes
// its own, and records a manifest under <output_dir>/manifests/<stage>.json.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rvec/hash.hpp"

namespace rvec {

/// Every recognised key with its default value.
nlohmann::json default_config();

/// Overlays `overrides` onto `base`. Unknown keys and type changes are
/// ConfigErrors, reported with their dotted path.
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& overrides);

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& config, std::string_view assignment);

/// Checks ranges and enum names of a merged config; throws ConfigError.
void validate_config(const nlohmann::json& config);

std::string hex64(std::uint64_t v);

const std::vector<std::string>& subcommand_names();
bool is_subcommand(std::string_view name);

struct StageResult {
  std::vector<std::filesystem::path> artifacts;  // relative to output_dir
  std::vector<std::string> log;                  // human-readable summary lines
};

/// Runs one stage and writes its manifest. Throws rvec::Error.
StageResult run_stage(std::string_view name, const nlohmann::json& config);

}  // namespace rvec
