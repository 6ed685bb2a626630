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

#include "styleseg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "styleseg/common.hpp"

namespace styleseg {

namespace {

constexpr uint64_t kJitterStream = 0x71770ull;
constexpr uint64_t kPhantomNoiseStream = 0x0F4Aull;
constexpr uint64_t kDegradeNoiseStream = 0xDE64ull;

// Row in the contrast table for a label code.
inline int tissue_row(uint8_t label) {
  switch (label) {
    case kLabelED:
      return 1;
    case kLabelET:
      return 2;
    case kLabelNCR:
      return 3;
    default:
      return 0;
  }
}

// Conservative containment test: the whole ED ball must sit inside the
// brain ellipsoid even along its shortest axis.
bool tumor_inside_brain(const PhantomSpec& s) {
  double q = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (s.tumor_center[a] - s.brain_center[a]) / s.brain_axes[a];
    q += d * d;
  }
  const double min_axis = std::min({s.brain_axes[0], s.brain_axes[1], s.brain_axes[2]});
  return std::sqrt(q) + s.ed_radius / min_axis <= 1.0;
}

// Trilinear resampling to explicit output dims (same voxel-center convention
// as the spacing-driven variant, but guaranteed to hit requested dims so a
// down-then-up round trip restores the original grid shape).
VoxelGrid trilinear_to_dims(const VoxelGrid& grid,
                            const std::array<int64_t, 3>& odims) {
  VoxelGrid out;
  out.dims = odims;
  out.spacing = grid.spacing;
  out.xform = grid.xform;
  out.data.resize(static_cast<size_t>(odims[0] * odims[1] * odims[2]));

  auto coord = [](int64_t j, int64_t out_dim, int64_t in_dim) {
    double x = (static_cast<double>(j) + 0.5) *
                   (static_cast<double>(in_dim) / static_cast<double>(out_dim)) -
               0.5;
    if (x < 0.0) x = 0.0;
    const double hi = static_cast<double>(in_dim - 1);
    if (x > hi) x = hi;
    return x;
  };
  auto lerp = [](float a, float b, float f) { return a + f * (b - a); };

  const int64_t D = grid.dims[0], H = grid.dims[1], W = grid.dims[2];
  size_t o = 0;
  for (int64_t od = 0; od < odims[0]; ++od) {
    const double zd = coord(od, odims[0], D);
    const int64_t z0 = static_cast<int64_t>(zd);
    const int64_t z1 = std::min(z0 + 1, D - 1);
    const float fz = static_cast<float>(zd - static_cast<double>(z0));
    for (int64_t oh = 0; oh < odims[1]; ++oh) {
      const double yd = coord(oh, odims[1], H);
      const int64_t y0 = static_cast<int64_t>(yd);
      const int64_t y1 = std::min(y0 + 1, H - 1);
      const float fy = static_cast<float>(yd - static_cast<double>(y0));
      for (int64_t ow = 0; ow < odims[2]; ++ow) {
        const double xd = coord(ow, odims[2], W);
        const int64_t x0 = static_cast<int64_t>(xd);
        const int64_t x1 = std::min(x0 + 1, W - 1);
        const float fx = static_cast<float>(xd - static_cast<double>(x0));
        const float c00 = lerp(grid.at(z0, y0, x0), grid.at(z0, y0, x1), fx);
        const float c01 = lerp(grid.at(z0, y1, x0), grid.at(z0, y1, x1), fx);
        const float c10 = lerp(grid.at(z1, y0, x0), grid.at(z1, y0, x1), fx);
        const float c11 = lerp(grid.at(z1, y1, x0), grid.at(z1, y1, x1), fx);
        out.data[o++] = lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
      }
    }
  }
  return out;
}

}  // namespace

void PhantomSpec::validate() const {
  if (id.empty()) throw DataError("phantom spec: empty id");
  for (int a = 0; a < 3; ++a) {
    if (dims[a] <= 0) throw DataError("phantom spec: non-positive dims");
    if (!(spacing[a] > 0.0)) throw DataError("phantom spec: non-positive spacing");
    if (!(brain_axes[a] > 0.0))
      throw DataError("phantom spec: non-positive brain semi-axis");
  }
  if (!(ncr_radius > 0.0 && ncr_radius < tc_radius && tc_radius < ed_radius))
    throw DataError("phantom spec: tumor radii must satisfy NCR < TC < ED");
  if (!tumor_inside_brain(*this))
    throw DataError("phantom spec: tumor extends outside the brain ellipsoid");
  for (const auto& row : contrast)
    for (double m : row)
      if (!(m > 0.0)) throw DataError("phantom spec: non-positive contrast");
  if (!(intensity_scale > 0.0))
    throw DataError("phantom spec: non-positive intensity scale");
  if (noise_sd < 0.0) throw DataError("phantom spec: negative noise sd");
}

PhantomSpec jittered_spec(const std::string& id, uint64_t seed) {
  PhantomSpec s;
  s.id = id;
  s.seed = seed;
  auto g = seeded_engine(seed, kJitterStream);
  for (int a = 0; a < 3; ++a) s.brain_axes[a] = 22.0 + 6.0 * uniform_unit(g);
  s.ncr_radius = 3.0 + 2.0 * uniform_unit(g);
  s.tc_radius = s.ncr_radius + 2.0 + 2.0 * uniform_unit(g);
  s.ed_radius = s.tc_radius + 3.0 + 2.0 * uniform_unit(g);
  for (int tries = 0; tries < 100; ++tries) {
    for (int a = 0; a < 3; ++a)
      s.tumor_center[a] = s.brain_center[a] + 16.0 * (uniform_unit(g) - 0.5);
    if (tumor_inside_brain(s)) break;
    if (tries == 99) s.tumor_center = s.brain_center;
  }
  s.validate();
  return s;
}

CaseVolume generate_phantom(const PhantomSpec& spec) {
  spec.validate();

  CaseVolume out;
  out.id = spec.id;
  out.domain = "PHANTOM_CLEAN";

  LabelVolume truth;
  truth.dims = spec.dims;
  truth.spacing = spec.spacing;
  truth.data.resize(static_cast<size_t>(truth.numel()));
  size_t i = 0;
  for (int64_t d = 0; d < spec.dims[0]; ++d)
    for (int64_t h = 0; h < spec.dims[1]; ++h)
      for (int64_t w = 0; w < spec.dims[2]; ++w, ++i) {
        const double p[3] = {static_cast<double>(d), static_cast<double>(h),
                             static_cast<double>(w)};
        double q = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double e = (p[a] - spec.brain_center[a]) / spec.brain_axes[a];
          q += e * e;
        }
        if (q > 1.0) {
          truth.data[i] = kLabelBG;
          continue;
        }
        double r2 = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double e = p[a] - spec.tumor_center[a];
          r2 += e * e;
        }
        const double r = std::sqrt(r2);
        if (r <= spec.ncr_radius)
          truth.data[i] = kLabelNCR;
        else if (r <= spec.tc_radius)
          truth.data[i] = kLabelET;
        else if (r <= spec.ed_radius)
          truth.data[i] = kLabelED;
        else
          truth.data[i] = kLabelBG;
      }

  auto g = seeded_engine(spec.seed, kPhantomNoiseStream);
  for (int c = 0; c < 4; ++c) {
    VoxelGrid& ch = out.channels[c];
    ch.dims = spec.dims;
    ch.spacing = spec.spacing;
    ch.data.resize(static_cast<size_t>(ch.numel()));
    i = 0;
    for (int64_t d = 0; d < spec.dims[0]; ++d)
      for (int64_t h = 0; h < spec.dims[1]; ++h)
        for (int64_t w = 0; w < spec.dims[2]; ++w, ++i) {
          const double p[3] = {static_cast<double>(d), static_cast<double>(h),
                               static_cast<double>(w)};
          double q = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double e = (p[a] - spec.brain_center[a]) / spec.brain_axes[a];
            q += e * e;
          }
          if (q > 1.0) {
            ch.data[i] = 0.0f;
            continue;
          }
          double v = spec.intensity_scale *
                     spec.contrast[tissue_row(truth.data[i])][c];
          if (spec.noise_sd > 0.0) v += spec.noise_sd * gaussian(g);
          ch.data[i] = static_cast<float>(std::max(v, 1.0));
        }
  }

  out.truth = std::move(truth);
  out.validate();
  return out;
}

void DegradeSpec::validate(const std::array<int64_t, 3>& dims) const {
  if (!(factor >= 1.0)) throw DataError("degrade spec: factor must be >= 1");
  if (noise_sd < 0.0) throw DataError("degrade spec: negative noise sd");
  if (!(bias_amplitude >= 0.0 && bias_amplitude <= 0.9))
    throw DataError("degrade spec: bias amplitude outside [0, 0.9]");
  if (slab < 0 || slab >= dims[0])
    throw DataError("degrade spec: slab must be below the volume depth");
}

CaseVolume degrade_case(const CaseVolume& c, const DegradeSpec& dspec) {
  c.validate();
  const auto dims = c.channels[0].dims;
  dspec.validate(dims);

  // Nonzero-anywhere support of the clean case; degradation never creates
  // foreground outside it.
  std::vector<uint8_t> support(c.channels[0].data.size(), 0);
  for (const auto& ch : c.channels)
    for (size_t i = 0; i < ch.data.size(); ++i)
      if (ch.data[i] != 0.0f) support[i] = 1;

  CaseVolume out = c;
  out.domain = "PHANTOM_DEGRADED";

  const int64_t D = dims[0], H = dims[1], W = dims[2];
  auto g = seeded_engine(dspec.seed, kDegradeNoiseStream);
  for (auto& ch : out.channels) {
    if (dspec.factor > 1.0) {
      std::array<int64_t, 3> down;
      for (int a = 0; a < 3; ++a)
        down[a] = std::max<int64_t>(
            1, std::llround(static_cast<double>(dims[a]) / dspec.factor));
      ch = trilinear_to_dims(trilinear_to_dims(ch, down), dims);
    }
    size_t i = 0;
    for (int64_t d = 0; d < D; ++d)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w, ++i) {
          double v = ch.data[i];
          if (dspec.bias_amplitude > 0.0) {
            double t = 0.0;
            t += D > 1 ? static_cast<double>(d) / static_cast<double>(D - 1) : 0.5;
            t += H > 1 ? static_cast<double>(h) / static_cast<double>(H - 1) : 0.5;
            t += W > 1 ? static_cast<double>(w) / static_cast<double>(W - 1) : 0.5;
            v *= 1.0 + dspec.bias_amplitude * (2.0 * t / 3.0 - 1.0);
          }
          if (dspec.noise_sd > 0.0) {
            // One draw per voxel regardless of support, so the stream layout
            // does not depend on the mask.
            const double n = dspec.noise_sd * gaussian(g);
            if (support[i]) v = std::max(v + n, 1.0);
          }
          ch.data[i] = support[i] ? static_cast<float>(v) : 0.0f;
        }
    for (int64_t d = 0; d < dspec.slab; ++d)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) ch.at(d, h, w) = 0.0f;
  }

  out.validate();
  return out;
}

}  // namespace styleseg
