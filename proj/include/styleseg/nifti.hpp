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

#include <string>
#include <variant>

#include "styleseg/volume.hpp"

namespace styleseg {

// Minimal NIfTI-1 single-file reader/writer.
//
// Supported subset: little-endian .nii, 348-byte header, magic "n+1",
// dim[0] == 3, datatype uint8 (2) / int16 (4) / float32 (16), payload at
// vox_offset. uint8 decodes as LabelVolume; int16 and float32 decode as
// VoxelGrid (int16 is widened to float). qform/sform fields pass through
// verbatim. Anything else is rejected.
std::variant<VoxelGrid, LabelVolume> read_nifti(const std::string& path);

VoxelGrid read_nifti_image(const std::string& path);
LabelVolume read_nifti_labels(const std::string& path);

// Writers emit deterministic bytes: all unused header fields are zero,
// float32 for VoxelGrid, uint8 for LabelVolume, payload at offset 352.
void write_nifti(const VoxelGrid& grid, const std::string& path);
void write_nifti(const LabelVolume& labels, const std::string& path);

}  // namespace styleseg
