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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "styleseg/common.hpp"

namespace styleseg {

// Segmentation label codes (BraTS 2023 convention).
inline constexpr uint8_t kLabelBG = 0;
inline constexpr uint8_t kLabelNCR = 1;  // necrotic tumor core
inline constexpr uint8_t kLabelED = 2;   // peritumoral edema
inline constexpr uint8_t kLabelET = 3;   // enhancing tumor
inline constexpr int kNumClasses = 4;

// Orientation metadata carried through I/O untouched; resampling math uses
// spacing only.
struct NiftiXform {
  float qfac = 1.0f;
  int16_t qform_code = 0;
  int16_t sform_code = 0;
  std::array<float, 3> quatern{0, 0, 0};  // b, c, d
  std::array<float, 3> qoffset{0, 0, 0};  // x, y, z
  std::array<float, 12> srow{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
};

// Axis order is (D, H, W) with W fastest in memory; this matches the NIfTI
// payload order with D = z, H = y, W = x.
struct VoxelGrid {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;
  NiftiXform xform;

  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
  float& at(int64_t d, int64_t h, int64_t w) {
    return data[(d * dims[1] + h) * dims[2] + w];
  }
  float at(int64_t d, int64_t h, int64_t w) const {
    return data[(d * dims[1] + h) * dims[2] + w];
  }
  void validate(const std::string& what) const;
};

struct LabelVolume {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<uint8_t> data;
  NiftiXform xform;

  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
  uint8_t& at(int64_t d, int64_t h, int64_t w) {
    return data[(d * dims[1] + h) * dims[2] + w];
  }
  uint8_t at(int64_t d, int64_t h, int64_t w) const {
    return data[(d * dims[1] + h) * dims[2] + w];
  }
  void validate(const std::string& what) const;
};

// Composite evaluation region: a named set of label codes.
struct RegionSpec {
  std::string name;
  std::vector<uint8_t> members;

  static const RegionSpec& et();  // {ET}
  static const RegionSpec& tc();  // {NCR, ET}
  static const RegionSpec& wt();  // {NCR, ED, ET}
  static const std::array<RegionSpec, 3>& all();
};

// Binary mask over a volume grid.
struct Mask {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::vector<uint8_t> data;
  int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
};

Mask region_mask(const LabelVolume& labels, const RegionSpec& region);

const std::array<std::string, 4>& channel_names();  // T1, T1ce, T2, FLAIR

bool valid_domain(const std::string& d);

// One multi-modal case: four co-registered channels plus optional truth.
struct CaseVolume {
  std::string id;
  std::string domain;  // GLI | SSA | PHANTOM_CLEAN | PHANTOM_DEGRADED
  std::array<VoxelGrid, 4> channels;
  std::optional<LabelVolume> truth;

  void validate() const;
};

}  // namespace styleseg
