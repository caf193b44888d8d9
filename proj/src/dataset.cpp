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

#include "segdiff/dataset.hpp"

#include <cmath>

namespace segdiff {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ArgumentError("unknown split \"" + std::string(s) + "\"");
}

void SampleRecord::validate() const {
  if (image.rows == 0 || image.cols == 0) throw ValidationError(case_id + ": empty image");
  for (float v : image.data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError(case_id + ": pixel value outside [0,1]");
  }
  if (mask) {
    if (!mask->same_shape(image)) throw ValidationError(case_id + ": mask shape differs from image");
    for (auto v : mask->data) {
      if (v > 1) throw ValidationError(case_id + ": mask is not binary");
    }
  }
  if (!edge.empty() && !edge.same_shape(image)) throw ValidationError(case_id + ": edge map shape differs from image");
  if (!(spacing[0] > 0.0 && spacing[1] > 0.0 && std::isfinite(spacing[0]) && std::isfinite(spacing[1]))) {
    throw ValidationError(case_id + ": spacing must be positive");
  }
}

}  // namespace segdiff
