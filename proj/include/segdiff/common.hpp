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

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace segdiff {

/// Base error. `kind()` is a short machine-readable tag used by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define SEGDIFF_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(tag, message) {}   \
  };

SEGDIFF_DEFINE_ERROR(ArgumentError, "argument")
SEGDIFF_DEFINE_ERROR(ConfigError, "config")
SEGDIFF_DEFINE_ERROR(VocabularyError, "vocabulary")
SEGDIFF_DEFINE_ERROR(ValidationError, "validation")
SEGDIFF_DEFINE_ERROR(CheckpointError, "checkpoint")
SEGDIFF_DEFINE_ERROR(StageError, "stage")
SEGDIFF_DEFINE_ERROR(DependencyError, "dependency")
SEGDIFF_DEFINE_ERROR(ContractViolation, "contract")
SEGDIFF_DEFINE_ERROR(IngestionError, "ingestion")
SEGDIFF_DEFINE_ERROR(IoError, "io")
SEGDIFF_DEFINE_ERROR(EmptyReportError, "empty-report")

#undef SEGDIFF_DEFINE_ERROR

/// Dense row-major 2D array.
template <class T>
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Grid(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ArgumentError("grid data size does not match its shape");
  }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.empty(); }

  template <class U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return rows == other.rows && cols == other.cols;
  }

  bool operator==(const Grid&) const = default;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;
/// Physical pixel size as (row, column).
using Spacing = std::array<double, 2>;

template <class T, class U>
void require_same_shape(const Grid<T>& a, const Grid<U>& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ArgumentError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                        std::to_string(b.cols) + ")");
  }
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Mixes a tag into a seed so independent streams can be derived from one master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Seeded random source. Each consumer owns its own instance.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() noexcept { return engine_; }

  template <class It>
  void shuffle(It first, It last) {
    // Fisher-Yates with our own index draws; std::shuffle is implementation-defined.
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace segdiff
