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

#include "styleseg/volume.hpp"

#include <cmath>

namespace styleseg {

void VoxelGrid::validate(const std::string& what) const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw DataError(what + ": non-positive dimension");
    if (!(spacing[a] > 0.0)) throw DataError(what + ": non-positive spacing");
  }
  if (static_cast<int64_t>(data.size()) != numel())
    throw DataError(what + ": payload size does not match dims");
  for (float v : data) {
    if (!std::isfinite(v)) throw DataError(what + ": non-finite voxel value");
  }
}

void LabelVolume::validate(const std::string& what) const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw DataError(what + ": non-positive dimension");
    if (!(spacing[a] > 0.0)) throw DataError(what + ": non-positive spacing");
  }
  if (static_cast<int64_t>(data.size()) != numel())
    throw DataError(what + ": payload size does not match dims");
  for (uint8_t v : data) {
    if (v > kLabelET) throw DataError(what + ": label code out of range");
  }
}

const RegionSpec& RegionSpec::et() {
  static const RegionSpec r{"ET", {kLabelET}};
  return r;
}

const RegionSpec& RegionSpec::tc() {
  static const RegionSpec r{"TC", {kLabelNCR, kLabelET}};
  return r;
}

const RegionSpec& RegionSpec::wt() {
  static const RegionSpec r{"WT", {kLabelNCR, kLabelED, kLabelET}};
  return r;
}

const std::array<RegionSpec, 3>& RegionSpec::all() {
  static const std::array<RegionSpec, 3> r{et(), tc(), wt()};
  return r;
}

Mask region_mask(const LabelVolume& labels, const RegionSpec& region) {
  bool member[256] = {};
  for (uint8_t m : region.members) member[m] = true;
  Mask mask;
  mask.dims = labels.dims;
  mask.data.resize(labels.data.size());
  for (size_t i = 0; i < labels.data.size(); ++i) {
    mask.data[i] = member[labels.data[i]] ? 1 : 0;
  }
  return mask;
}

const std::array<std::string, 4>& channel_names() {
  static const std::array<std::string, 4> names{"T1", "T1ce", "T2", "FLAIR"};
  return names;
}

bool valid_domain(const std::string& d) {
  return d == "GLI" || d == "SSA" || d == "PHANTOM_CLEAN" ||
         d == "PHANTOM_DEGRADED";
}

void CaseVolume::validate() const {
  if (id.empty()) throw DataError("case with empty id");
  if (!valid_domain(domain)) throw DataError("case " + id + ": unknown domain '" + domain + "'");
  for (size_t c = 0; c < channels.size(); ++c) {
    channels[c].validate("case " + id + " channel " + channel_names()[c]);
    if (channels[c].dims != channels[0].dims || channels[c].spacing != channels[0].spacing)
      throw DataError("case " + id + ": channel geometry mismatch");
  }
  if (truth) {
    truth->validate("case " + id + " truth");
    if (truth->dims != channels[0].dims || truth->spacing != channels[0].spacing)
      throw DataError("case " + id + ": truth geometry mismatch");
  }
}

}  // namespace styleseg
