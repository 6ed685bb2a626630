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

#include "styleseg/volume.hpp"

namespace styleseg {

// Synthetic multi-modal brain: an intensity ellipsoid with nested spherical
// tumor shells (NCR core, ET rim, ED halo). All geometry is in voxel units.
struct PhantomSpec {
  std::string id = "phantom";
  std::array<int64_t, 3> dims{64, 64, 64};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> brain_center{31.5, 31.5, 31.5};
  std::array<double, 3> brain_axes{26.0, 24.0, 22.0};  // ellipsoid semi-axes
  std::array<double, 3> tumor_center{36.0, 34.0, 34.0};
  double ncr_radius = 4.0;
  double tc_radius = 7.0;
  double ed_radius = 11.0;
  // contrast[tissue][modality]: tissues {brain, ED, ET, NCR} against the
  // channel order {T1, T1ce, T2, FLAIR}. Defaults keep ET brightest on T1ce
  // and ED brightest on FLAIR; these are configuration, not physiology.
  std::array<std::array<double, 4>, 4> contrast{{
      {{1.0, 1.0, 1.0, 1.0}},
      {{0.8, 0.9, 1.4, 1.8}},
      {{1.1, 1.9, 1.2, 1.2}},
      {{0.6, 0.5, 1.5, 0.9}},
  }};
  double intensity_scale = 100.0;
  double noise_sd = 2.0;
  uint64_t seed = 0;

  void validate() const;
};

// Default spec with seeded tumor geometry variation (semi-axes, center,
// radii), so a generated cohort is not twenty copies of one case.
PhantomSpec jittered_spec(const std::string& id, uint64_t seed);

// Deterministic per spec; domain PHANTOM_CLEAN; intensities are zero outside
// the brain and clamped to >= 1 inside, so the nonzero support is exactly the
// brain ellipsoid.
CaseVolume generate_phantom(const PhantomSpec& spec);

// Quality-loss operator: blur through a down-then-up trilinear round trip,
// multiplicative linear bias field, added noise, and a zeroed bottom axial
// slab. The truth volume is copied untouched.
struct DegradeSpec {
  double factor = 2.0;          // resolution loss, >= 1; 1 means none
  double noise_sd = 4.0;
  double bias_amplitude = 0.3;  // field spans [1-a, 1+a]; a in [0, 0.9]
  int64_t slab = 8;             // bottom axial slices zeroed, < depth
  uint64_t seed = 0;

  void validate(const std::array<int64_t, 3>& dims) const;
};

CaseVolume degrade_case(const CaseVolume& c, const DegradeSpec& dspec);

}  // namespace styleseg
