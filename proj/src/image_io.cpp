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

#include "segdiff/image_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

namespace segdiff {

namespace {
void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Gray8 decode_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  Gray8 out(img.height, img.width);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

Gray8 decode_pgm(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    const auto [p, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc()) throw IoError("malformed PGM header in " + path.string());
    pos = static_cast<std::size_t>(p - bytes.data());
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw IoError("unsupported PGM in " + path.string());
  ++pos;  // single whitespace before raster
  const auto n = static_cast<std::size_t>(w * h);
  if (bytes.size() < pos + n) throw IoError("truncated PGM " + path.string());
  Gray8 out(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < n; ++i) {
    const long v = static_cast<unsigned char>(bytes[pos + i]);
    out.data[i] = static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  }
  return out;
}
}  // namespace

Gray8 read_gray8(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path);
  throw IoError(path.string() + " is neither PNG nor binary PGM");
}

void write_gray8(const std::filesystem::path& path, const Gray8& image) {
  if (image.empty()) throw ArgumentError("cannot write an empty image");
  ensure_parent(path);
  if (path.extension() == ".pgm") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << image.cols << " " << image.rows << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.size()));
    if (!out) throw IoError("failed writing " + path.string());
    return;
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.cols);
  img.height = static_cast<png_uint_32>(image.rows);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.data.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

Gray8 quantize(const Image& image) {
  Gray8 out(image.rows, image.cols);
  for (std::size_t i = 0; i < image.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

Image dequantize(const Gray8& image) {
  Image out(image.rows, image.cols);
  for (std::size_t i = 0; i < image.size(); ++i) out.data[i] = static_cast<float>(image.data[i]) / 255.0f;
  return out;
}

void save_image(const std::filesystem::path& path, const Image& image) { write_gray8(path, quantize(image)); }
Image load_image(const std::filesystem::path& path) { return dequantize(read_gray8(path)); }

void save_mask(const std::filesystem::path& path, const Mask& mask) {
  Gray8 g(mask.rows, mask.cols);
  for (std::size_t i = 0; i < mask.size(); ++i) g.data[i] = mask.data[i] ? 255 : 0;
  write_gray8(path, g);
}

Mask load_mask(const std::filesystem::path& path) {
  Gray8 g = read_gray8(path);
  for (auto& v : g.data) v = v ? 1 : 0;
  return g;
}

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ArgumentError("CSV has no column \"" + std::string(name) + "\"");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::string> CsvTable::values(std::string_view name) const {
  const std::size_t c = column(name);
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (c >= r.size()) throw ArgumentError("CSV row shorter than its header");
    out.push_back(r[c]);
  }
  return out;
}

namespace {
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}
}  // namespace

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(row[i]);
    out += "\n";
  };
  emit(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw ArgumentError("CSV row width differs from header");
    emit(r);
  }
  write_text(path, out);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV " + path.string());
  t.header = parse_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = parse_csv_line(line);
    if (row.size() != t.header.size()) throw IoError("ragged CSV row in " + path.string());
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) { return slurp(path); }

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace segdiff
