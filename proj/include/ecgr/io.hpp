#pragma once

#include "ecgr/data.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ecgr::io {

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
[[nodiscard]] std::string read_file(const std::filesystem::path& path);

[[nodiscard]] std::string sha256_hex(std::string_view bytes);
[[nodiscard]] std::string sha256_file(const std::filesystem::path& path);

/// Writes a [0, 1] grayscale image as 8-bit PNG.
void write_png(const std::filesystem::path& path, const Image& image);

/// Grid with one row per entry of `rows`; each row starts with its
/// reference image (blank when absent) followed by the samples.
[[nodiscard]] Image contact_sheet(const std::vector<std::vector<Image>>& rows, int image_size, int gap = 2);

}  // namespace ecgr::io
