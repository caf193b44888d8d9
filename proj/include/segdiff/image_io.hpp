/*
 * Copyright 2026 The segdiff Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// 8-bit grayscale image files (PNG via libpng, binary PGM) and small text/CSV helpers.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "segdiff/common.hpp"

namespace segdiff {

using Gray8 = Grid<std::uint8_t>;

/// Decodes PNG (any color type, converted to gray) or binary PGM, chosen by file signature.
Gray8 read_gray8(const std::filesystem::path& path);
/// Encodes by extension: ".pgm" writes binary PGM, anything else PNG.
void write_gray8(const std::filesystem::path& path, const Gray8& image);

/// round(v * 255) after clamping to [0,1].
Gray8 quantize(const Image& image);
Image dequantize(const Gray8& image);

void save_image(const std::filesystem::path& path, const Image& image);
Image load_image(const std::filesystem::path& path);
/// Masks are stored as 0/255.
void save_mask(const std::filesystem::path& path, const Mask& mask);
/// Any nonzero pixel becomes 1.
Mask load_mask(const std::filesystem::path& path);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ArgumentError when absent.
  std::size_t column(std::string_view name) const;
  /// All cells of the named column.
  std::vector<std::string> values(std::string_view name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace segdiff
