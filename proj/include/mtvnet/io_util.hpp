#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace mtvnet {

/// Writes through a temporary sibling file and renames it into place, so an
/// interrupted run never leaves a truncated artifact behind.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);
void atomic_write_text(const std::filesystem::path& path, std::string_view text);

std::string read_text_file(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace mtvnet
