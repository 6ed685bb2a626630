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
#include <string>
#include <vector>

#include "styleseg/volume.hpp"

namespace styleseg {

// 2|A∩B| / (|A|+|B|). Both masks empty scores 1.0 (correct absence),
// exactly one empty scores 0.0.
double dice_binary(const Mask& a, const Mask& b);

// Per-case Dice over the composite regions, in RegionSpec::all() order
// (ET, TC, WT).
struct DiceReport {
  std::string case_id;
  std::array<double, 3> dice{0.0, 0.0, 0.0};
};

DiceReport region_dice_report(const LabelVolume& pred, const LabelVolume& truth,
                              const std::string& case_id = "");

// 26-connected component labeling. Labels run 1..count in the scan order of
// each component's first voxel (W fastest); 0 is background.
struct ComponentLabels {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::vector<int32_t> labels;
  int32_t count = 0;
};

ComponentLabels components_26(const Mask& mask);

// Chebyshev-ball dilation, i.e. `radius` rounds of 26-neighbour growth.
Mask dilate_mask(const Mask& mask, int radius);

struct LesionWiseParams {
  int dilation_radius = 1;
  int64_t min_lesion = 2;
};

struct LesionScore {
  double dice = 1.0;
  int64_t tp = 0;  // truth lesions with at least one assigned prediction
  int64_t fn = 0;  // truth lesions nothing was assigned to
  int64_t fp = 0;  // unassigned predicted components of qualifying size
};

// Lesion-wise Dice over one region mask pair. Truth lesions are 26-components
// of size >= min_lesion; each lesion dilated by dilation_radius forms its
// match zone; predicted components are assigned to the first lesion (lowest
// label) whose zone they touch. Every kept truth lesion contributes the Dice
// of its assigned prediction voxels against the lesion (0 when nothing was
// assigned); every unassigned predicted component of qualifying size
// contributes 0. The score is the mean contribution, or 1.0 when there is
// nothing to score.
LesionScore lesion_wise_dice(const Mask& pred, const Mask& truth,
                             const LesionWiseParams& params = {});

// Per-case lesion-wise report over ET/TC/WT; parameters are carried so every
// emitted report records how it was scored.
struct LesionWiseReport {
  std::string case_id;
  LesionWiseParams params;
  std::array<LesionScore, 3> regions;
};

LesionWiseReport lesion_wise_report(const LabelVolume& pred,
                                    const LabelVolume& truth,
                                    const std::string& case_id = "",
                                    const LesionWiseParams& params = {});

}  // namespace styleseg
