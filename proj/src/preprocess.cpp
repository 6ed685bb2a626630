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

#include "styleseg/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace styleseg {

namespace {

template <class Vol>
Vol crop_volume(const Vol& v, const BoundingBox& box) {
  Vol out;
  for (int a = 0; a < 3; ++a) out.dims[a] = box.hi[a] - box.lo[a] + 1;
  out.spacing = v.spacing;
  out.xform = v.xform;
  out.data.resize(static_cast<size_t>(out.dims[0] * out.dims[1] * out.dims[2]));
  size_t o = 0;
  for (int64_t d = box.lo[0]; d <= box.hi[0]; ++d)
    for (int64_t h = box.lo[1]; h <= box.hi[1]; ++h)
      for (int64_t w = box.lo[2]; w <= box.hi[2]; ++w)
        out.data[o++] = v.at(d, h, w);
  return out;
}

// Per-axis sample position in input index space for output index j.
inline double sample_coord(int64_t j, double target, double source, int64_t in_dim) {
  double x = (static_cast<double>(j) + 0.5) * (target / source) - 0.5;
  if (x < 0.0) x = 0.0;
  const double hi = static_cast<double>(in_dim - 1);
  if (x > hi) x = hi;
  return x;
}

std::array<int64_t, 3> output_dims(const std::array<int64_t, 3>& dims,
                                   const std::array<double, 3>& spacing,
                                   const std::array<double, 3>& target) {
  std::array<int64_t, 3> out;
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0)) throw DataError("resample: non-positive target spacing");
    out[a] = std::max<int64_t>(
        1, std::llround(static_cast<double>(dims[a]) * spacing[a] / target[a]));
  }
  return out;
}

}  // namespace

std::pair<CaseVolume, BoundingBox> crop_foreground(const CaseVolume& c) {
  const auto& dims = c.channels[0].dims;
  BoundingBox box;
  box.lo = {dims[0], dims[1], dims[2]};
  box.hi = {-1, -1, -1};
  for (int64_t d = 0; d < dims[0]; ++d)
    for (int64_t h = 0; h < dims[1]; ++h)
      for (int64_t w = 0; w < dims[2]; ++w) {
        bool nz = false;
        for (const auto& ch : c.channels) {
          if (ch.at(d, h, w) != 0.0f) {
            nz = true;
            break;
          }
        }
        if (!nz) continue;
        const int64_t idx[3] = {d, h, w};
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::min(box.lo[a], idx[a]);
          box.hi[a] = std::max(box.hi[a], idx[a]);
        }
      }
  if (box.hi[0] < 0)
    throw DataError("crop_foreground: case " + c.id + " is entirely zero");

  CaseVolume out;
  out.id = c.id;
  out.domain = c.domain;
  for (size_t i = 0; i < c.channels.size(); ++i)
    out.channels[i] = crop_volume(c.channels[i], box);
  if (c.truth) out.truth = crop_volume(*c.truth, box);
  return {std::move(out), box};
}

VoxelGrid normalize_nonzero(const VoxelGrid& grid) {
  double sum = 0.0;
  int64_t n = 0;
  for (float v : grid.data) {
    if (v != 0.0f) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw DataError("normalize_nonzero: all-zero volume");
  const double mean = sum / static_cast<double>(n);
  double ssd = 0.0;
  for (float v : grid.data) {
    if (v != 0.0f) {
      const double d = v - mean;
      ssd += d * d;
    }
  }
  const double sd = std::sqrt(ssd / static_cast<double>(n));
  if (!(sd > 0.0))
    throw DataError("normalize_nonzero: constant nonzero intensities");

  VoxelGrid out = grid;
  for (auto& v : out.data) {
    if (v != 0.0f) v = static_cast<float>((v - mean) / sd);
  }
  return out;
}

VoxelGrid resample_trilinear(const VoxelGrid& grid,
                             const std::array<double, 3>& target_spacing) {
  const auto odims = output_dims(grid.dims, grid.spacing, target_spacing);
  VoxelGrid out;
  out.dims = odims;
  out.spacing = target_spacing;
  out.xform = grid.xform;
  out.data.resize(static_cast<size_t>(odims[0] * odims[1] * odims[2]));

  const int64_t D = grid.dims[0], H = grid.dims[1], W = grid.dims[2];
  size_t o = 0;
  for (int64_t od = 0; od < odims[0]; ++od) {
    const double zd = sample_coord(od, target_spacing[0], grid.spacing[0], D);
    const int64_t z0 = static_cast<int64_t>(zd);
    const int64_t z1 = std::min(z0 + 1, D - 1);
    const float fz = static_cast<float>(zd - static_cast<double>(z0));
    for (int64_t oh = 0; oh < odims[1]; ++oh) {
      const double yd = sample_coord(oh, target_spacing[1], grid.spacing[1], H);
      const int64_t y0 = static_cast<int64_t>(yd);
      const int64_t y1 = std::min(y0 + 1, H - 1);
      const float fy = static_cast<float>(yd - static_cast<double>(y0));
      for (int64_t ow = 0; ow < odims[2]; ++ow) {
        const double xd = sample_coord(ow, target_spacing[2], grid.spacing[2], W);
        const int64_t x0 = static_cast<int64_t>(xd);
        const int64_t x1 = std::min(x0 + 1, W - 1);
        const float fx = static_cast<float>(xd - static_cast<double>(x0));

        // lerp as v0 + f*(v1-v0) so constant inputs reproduce exactly
        auto lerp = [](float a, float b, float f) { return a + f * (b - a); };
        const float c00 = lerp(grid.at(z0, y0, x0), grid.at(z0, y0, x1), fx);
        const float c01 = lerp(grid.at(z0, y1, x0), grid.at(z0, y1, x1), fx);
        const float c10 = lerp(grid.at(z1, y0, x0), grid.at(z1, y0, x1), fx);
        const float c11 = lerp(grid.at(z1, y1, x0), grid.at(z1, y1, x1), fx);
        const float c0 = lerp(c00, c01, fy);
        const float c1 = lerp(c10, c11, fy);
        out.data[o++] = lerp(c0, c1, fz);
      }
    }
  }
  return out;
}

LabelVolume resample_nearest(const LabelVolume& labels,
                             const std::array<double, 3>& target_spacing) {
  const auto odims = output_dims(labels.dims, labels.spacing, target_spacing);
  LabelVolume out;
  out.dims = odims;
  out.spacing = target_spacing;
  out.xform = labels.xform;
  out.data.resize(static_cast<size_t>(odims[0] * odims[1] * odims[2]));

  size_t o = 0;
  for (int64_t od = 0; od < odims[0]; ++od) {
    const int64_t z = std::llround(
        sample_coord(od, target_spacing[0], labels.spacing[0], labels.dims[0]));
    for (int64_t oh = 0; oh < odims[1]; ++oh) {
      const int64_t y = std::llround(
          sample_coord(oh, target_spacing[1], labels.spacing[1], labels.dims[1]));
      for (int64_t ow = 0; ow < odims[2]; ++ow) {
        const int64_t x = std::llround(
            sample_coord(ow, target_spacing[2], labels.spacing[2], labels.dims[2]));
        out.data[o++] = labels.at(z, y, x);
      }
    }
  }
  return out;
}

CaseVolume preprocess_case(const CaseVolume& c,
                           const std::array<double, 3>& target_spacing) {
  auto [cropped, box] = crop_foreground(c);
  (void)box;
  CaseVolume out;
  out.id = cropped.id;
  out.domain = cropped.domain;
  for (size_t i = 0; i < cropped.channels.size(); ++i) {
    out.channels[i] = resample_trilinear(normalize_nonzero(cropped.channels[i]),
                                         target_spacing);
  }
  if (cropped.truth) out.truth = resample_nearest(*cropped.truth, target_spacing);
  out.validate();
  return out;
}

}  // namespace styleseg
