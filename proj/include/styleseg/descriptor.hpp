/*
 * styleseg: MRI glioma segmentation with style-transfer augmentation
 *
 * Copyright 2026 styleseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "styleseg/volume.hpp"

namespace styleseg {

// One dataset entry: paths are stored relative to the descriptor file.
struct CaseEntry {
  std::string id;
  std::string domain;
  std::map<std::string, std::string> channels;  // modality name -> path
  std::optional<std::string> truth;
};

struct DatasetDescriptor {
  std::string name;
  std::string base_dir;  // directory of the descriptor file, set on load
  std::vector<CaseEntry> cases;

  std::vector<std::string> case_ids() const;
  const CaseEntry& entry(const std::string& id) const;
  size_t count_domain(const std::string& domain) const;
};

// Parses and validates the JSON manifest. Cases are sorted by id so the
// result is independent of array order. Validation: all four channels
// present per case, unique ids, known domain tags, referenced files exist.
DatasetDescriptor load_descriptor(const std::string& path);

// check_paths=false skips file-existence checks (used when composing a
// descriptor for outputs that are about to be written).
DatasetDescriptor parse_descriptor_json(const std::string& text,
                                        const std::string& base_dir,
                                        bool check_paths);

void save_descriptor(const DatasetDescriptor& d, const std::string& path);

// Loads the four channels (+ truth when present) and checks geometry.
CaseVolume load_case(const DatasetDescriptor& d, const CaseEntry& entry);

// Writes all volumes of a case as <id>_<channel>.nii / <id>_seg.nii under dir
// and returns the corresponding entry.
CaseEntry save_case(const CaseVolume& c, const std::string& dir);

}  // namespace styleseg
