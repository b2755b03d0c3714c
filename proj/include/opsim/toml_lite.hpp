#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace opsim {

/// Minimal TOML reader covering the config surface: [tables],
/// [[arrays-of-tables]], dotted keys, strings, integers, floats, booleans,
/// single-line arrays, and # comments. Returns the same JSON shape the JSON
/// config path produces.
nlohmann::json parse_toml_lite(const std::string& text);

/// Dispatches on extension: .toml through parse_toml_lite, anything else is
/// parsed as JSON.
nlohmann::json load_config_file(const std::filesystem::path& path);

} // namespace opsim
