#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace tabshap::detail {

// Writes `content` to a sibling temp file and renames it over `path`, so a
// reader sees either the old file or the complete new one.
void write_file_atomically(const std::filesystem::path& path, std::string_view content);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace tabshap::detail
