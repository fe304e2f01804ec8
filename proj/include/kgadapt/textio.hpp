#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace kgadapt {

std::vector<std::string> split_fields(std::string_view line, char sep);

/// Lines without trailing CR/LF. Throws ConfigError when the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames, so readers never see half a file.
void write_file(const std::filesystem::path& path, std::string_view content);

std::size_t parse_index(const std::string& text, const std::string& what);

}  // namespace kgadapt
