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
#include <optional>
#include <string>
#include <vector>

#include "segdiff/conditioning.hpp"

namespace segdiff {

enum class Split { kTrain, kVal, kTest };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);

/// One dataset element: image in [0,1], optional binary mask, prompt and edge map.
struct SampleRecord {
  std::string case_id;
  Image image;
  std::optional<Mask> mask;
  PromptTriplet triplet;
  EdgeMap edge;
  Split split = Split::kTrain;
  std::optional<std::string> source_volume_id;
  Spacing spacing{1.0, 1.0};

  /// Grouping key for fold assignment: the source volume when known, else the case.
  const std::string& group_id() const { return source_volume_id ? *source_volume_id : case_id; }

  /// Throws ValidationError when shapes disagree, pixels leave [0,1] or the mask is not binary.
  void validate() const;
};

}  // namespace segdiff
