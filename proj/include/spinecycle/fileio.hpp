#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace spinecycle {

/// Writes `bytes` to a temporary file next to `path` and renames it into place, so readers never
/// observe a truncated file. Parent directories are created.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Whole file as bytes; throws std::runtime_error naming the path.
std::string read_file(const std::filesystem::path& path);

}  // namespace spinecycle
