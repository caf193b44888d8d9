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

#pragma once

#include <filesystem>
#include <string>

#include "segdiff/common.hpp"

namespace segdiff::testing {

inline Image random_image(std::size_t rows, std::size_t cols, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
  Image img(rows, cols);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

inline Mask random_mask(std::size_t rows, std::size_t cols, Rng& rng, double p = 0.3) {
  Mask m(rows, cols);
  for (auto& v : m.data) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

inline Mask box_mask(std::size_t rows, std::size_t cols, std::size_t r0, std::size_t c0, std::size_t h, std::size_t w) {
  Mask m(rows, cols);
  for (std::size_t r = r0; r < r0 + h; ++r) {
    for (std::size_t c = c0; c < c0 + w; ++c) m(r, c) = 1;
  }
  return m;
}

/// Fresh, empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("segdiff_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace segdiff::testing
