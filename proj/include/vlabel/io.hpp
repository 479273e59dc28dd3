#pragma once

#include <filesystem>
#include <string>

namespace vlabel {

/// Writes to a sibling temporary file, then renames it over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace vlabel
