#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pseudolabel/loop.hpp"

namespace pseudolabel {

// Plain `key = value` lines; '#' starts a comment, blank lines are skipped.
// Returns pairs in file order. Malformed lines throw ConfigError naming the line.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);

// Sets one RunConfig field. Unknown keys and unparsable values throw ConfigError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

// Every key accepted by apply_setting, in stamp order.
const std::vector<std::string>& config_keys();

// Fully resolved configuration in the same key=value format; feeding it back
// through apply_config_text reproduces `config` exactly.
std::string format_config(const RunConfig& config);

}  // namespace pseudolabel
