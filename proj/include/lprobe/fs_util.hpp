#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace lprobe {

// Writes `contents` to a sibling temp file and renames it over `path`, so a
// reader never observes a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

// Temp sibling name used by the temp-then-rename discipline.
std::filesystem::path temp_sibling(const std::filesystem::path& path);

}  // namespace lprobe
