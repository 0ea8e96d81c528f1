#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tbfp/model.h"

namespace tbfp {

/// `section.key` -> raw value text, as read from a config file.
struct RawConfig {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;
};

/// Parses the bracketed-section `key = value` format. Lines starting with
/// `#` or `;` are comments; a trailing `# ...` is stripped from values.
RawConfig parse_config_text(std::string_view text);

/// Applies `key=value` overrides; keys use the `section.key` form.
void apply_overrides(RawConfig& raw, const std::vector<std::string>& overrides);

struct ValidatedConfig {
  ExperimentConfig config;
  std::vector<std::string> warnings;
};

/// Converts units, fills defaults and checks invariants. Unknown keys are
/// rejected with the list of valid keys.
ValidatedConfig validate_config(const RawConfig& raw);

/// Canonical text form: every key, SI units, shortest round-trip numbers.
std::string serialize_config(const ExperimentConfig& config);

/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Valid `section.key` names.
const std::vector<std::string>& config_keys();

/// Parses a value with an optional unit suffix (ns, MHz, nm, deg, pi, %, ...).
/// `dimension` is one of "time", "frequency", "length", "angle", "ratio", "db".
double parse_quantity(std::string_view text, std::string_view dimension);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Named presets: fig3-ideal, fig8-degraded, paper-experiment, lossless-d1.
const std::vector<std::string>& preset_names();
std::string preset_text(std::string_view name);

/// Loads a preset by name, otherwise reads the file at `path_or_preset`.
RawConfig load_raw_config(const std::string& path_or_preset);

}  // namespace tbfp
