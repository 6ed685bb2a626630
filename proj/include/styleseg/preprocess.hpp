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

#include "styleseg/volume.hpp"

namespace styleseg {

// Inclusive index box per axis, in (D, H, W) order.
struct BoundingBox {
  std::array<int64_t, 3> lo{0, 0, 0};
  std::array<int64_t, 3> hi{0, 0, 0};
};

// Minimal box containing every voxel that is nonzero in any channel; all
// channels and the truth are cropped with the same box.
std::pair<CaseVolume, BoundingBox> crop_foreground(const CaseVolume& c);

// Z-score over the nonzero support (population sd); zeros stay exactly zero.
// Degenerate input (all zero, or constant nonzero values) is an error.
VoxelGrid normalize_nonzero(const VoxelGrid& grid);

// Trilinear resampling at voxel-center coordinates with edge clamping.
// Output dims are round(in_dim * in_spacing / target), at least 1 per axis.
VoxelGrid resample_trilinear(const VoxelGrid& grid,
                             const std::array<double, 3>& target_spacing);

// Nearest-neighbor variant for label volumes (never invents codes).
LabelVolume resample_nearest(const LabelVolume& labels,
                             const std::array<double, 3>& target_spacing);

// crop -> normalize per channel -> resample (channels trilinear, truth NN).
CaseVolume preprocess_case(const CaseVolume& c,
                           const std::array<double, 3>& target_spacing);

}  // namespace styleseg
