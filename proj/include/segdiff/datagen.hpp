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

// Synthetic datasets and ingestion of external 2D image/mask folders.
//
// Generated pixel values are snapped to the 8-bit grid so that a manifest written
// to disk and read back reproduces the in-memory records exactly.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdiff/dataset.hpp"

namespace segdiff {

struct DatasetManifest {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> records;
  std::vector<std::string> warnings;

  /// Unique case ids, valid records, and no source volume spread over two splits.
  void validate() const;
  std::vector<SampleRecord> split(Split s) const;
  /// Canonical JSON description (no pixel data).
  nlohmann::json to_json() const;
};

struct CorpusSpec {
  int count = 2000;
  int size = 32;
  double train_fraction = 0.9;
  double val_fraction = 0.05;
  double aug_fraction = 0.4;  // share of items rendered with one augmentation attribute
  std::uint64_t seed = 0;
};

/// Pseudo-modalities (intensity, texture and noise profiles), pseudo-organs (shape
/// families) and pseudo-pathologies, each labeled with its prompt triplet.
DatasetManifest synth_corpus(const CorpusSpec& spec, const Vocabulary& vocab);

struct SegTaskSpec {
  int count = 32;
  int size = 32;
  std::string modality = "MR";
  std::string organ = "Blob";
  std::string category = "Normal";
  double min_foreground = 0.05;
  double max_foreground = 0.40;
  double min_contrast = 0.15;
  double max_contrast = 0.35;
  double max_noise = 0.08;
  int max_distractors = 2;  // small bright structures outside the target
  std::uint64_t seed = 0;
};

DatasetManifest synth_seg_task(const SegTaskSpec& spec, const Vocabulary& vocab);

struct IngestLayout {
  std::string images_dir = "images";
  std::string masks_dir = "masks";
  /// Stem suffix separating a volume id from a slice index, e.g. "case07_slice012".
  std::string slice_separator = "_slice";
  /// Optional "<volume>: <row> <col>" lines; the key "default" applies to all others.
  std::string spacing_file = "spacing.txt";
  /// Labels >= threshold become 1. Unset: only {0, 1, 255} are accepted.
  std::optional<int> binarize_threshold;
  bool foreground_slices_only = true;
  PromptTriplet triplet{"US", "Blob", "Normal", {}};
};

/// images/<stem>.(png|pgm) paired with masks/<stem>.(png|pgm).
DatasetManifest ingest_external(const std::filesystem::path& root, const IngestLayout& layout = {});

/// Writes images/, masks/ and manifest.json under `dir`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
/// Reads a directory written by save_manifest; edge maps are recomputed.
DatasetManifest load_manifest(const std::filesystem::path& dir);

/// Conditioning edge for a record: the mask boundary when a mask exists, otherwise image edges.
EdgeMap record_edge(const SampleRecord& record);

}  // namespace segdiff
