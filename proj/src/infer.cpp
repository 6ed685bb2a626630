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

#include <algorithm>
#include <array>
#include <vector>

#include "styleseg/unet.hpp"

namespace styleseg::nn {

namespace {

// Window origins along one axis: half-patch steps, the last window clamped
// flush against the end so every voxel is covered.
std::vector<int64_t> tile_origins(int64_t dim, int64_t patch) {
  std::vector<int64_t> os;
  const int64_t step = std::max<int64_t>(1, patch / 2);
  for (int64_t o = 0;; o += step) {
    if (o + patch >= dim) {
      os.push_back(dim - patch);
      break;
    }
    os.push_back(o);
  }
  return os;
}

}  // namespace

Tensor<float> sliding_window_probs(const Model& model, const CaseVolume& cs) {
  cs.validate();
  const auto& patch = model.cfg.patch;
  const auto dims = cs.channels[0].dims;
  std::array<int64_t, 3> pd;
  for (int a = 0; a < 3; ++a) pd[a] = std::max(dims[a], patch[a]);

  // Assemble the (1, 4, D, H, W) input once, zero beyond the volume.
  Tensor<float> vol({1, 4, pd[0], pd[1], pd[2]});
  for (int64_t c = 0; c < 4; ++c) {
    const VoxelGrid& ch = cs.channels[static_cast<size_t>(c)];
    float* dst = vol.ptr() + c * pd[0] * pd[1] * pd[2];
    for (int64_t d = 0; d < dims[0]; ++d)
      for (int64_t h = 0; h < dims[1]; ++h)
        std::copy_n(ch.data.data() + (d * dims[1] + h) * dims[2], dims[2],
                    dst + (d * pd[1] + h) * pd[2]);
  }

  const int64_t C = model.cfg.num_classes;
  const int64_t vn = pd[0] * pd[1] * pd[2];
  std::vector<float> accum(static_cast<size_t>(C * vn), 0.0f);
  std::vector<int32_t> count(static_cast<size_t>(vn), 0);

  const auto od = tile_origins(pd[0], patch[0]);
  const auto oh = tile_origins(pd[1], patch[1]);
  const auto ow = tile_origins(pd[2], patch[2]);
  Tensor<float> tile({1, 4, patch[0], patch[1], patch[2]});
  const int64_t pm = patch[0] * patch[1] * patch[2];
  for (int64_t o0 : od)
    for (int64_t o1 : oh)
      for (int64_t o2 : ow) {
        for (int64_t c = 0; c < 4; ++c) {
          const float* src = vol.ptr() + c * vn;
          float* dst = tile.ptr() + c * pm;
          for (int64_t d = 0; d < patch[0]; ++d)
            for (int64_t h = 0; h < patch[1]; ++h)
              std::copy_n(src + ((o0 + d) * pd[1] + o1 + h) * pd[2] + o2, patch[2],
                          dst + (d * patch[1] + h) * patch[2]);
        }
        auto logits = unet_forward(model, tile, static_cast<ForwardCacheT<float>*>(nullptr));
        Tensor<float> p = softmax_over_classes(logits[0]);
        for (int64_t c = 0; c < C; ++c) {
          const float* pc = p.ptr() + c * pm;
          float* ac = accum.data() + c * vn;
          for (int64_t d = 0; d < patch[0]; ++d)
            for (int64_t h = 0; h < patch[1]; ++h)
              for (int64_t ww = 0; ww < patch[2]; ++ww)
                ac[((o0 + d) * pd[1] + o1 + h) * pd[2] + o2 + ww] +=
                    pc[(d * patch[1] + h) * patch[2] + ww];
        }
        for (int64_t d = 0; d < patch[0]; ++d)
          for (int64_t h = 0; h < patch[1]; ++h)
            for (int64_t ww = 0; ww < patch[2]; ++ww)
              ++count[static_cast<size_t>(((o0 + d) * pd[1] + o1 + h) * pd[2] + o2 + ww)];
      }

  Tensor<float> probs({C, dims[0], dims[1], dims[2]});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t d = 0; d < dims[0]; ++d)
      for (int64_t h = 0; h < dims[1]; ++h)
        for (int64_t w = 0; w < dims[2]; ++w) {
          const int64_t i = (d * pd[1] + h) * pd[2] + w;
          probs.data[static_cast<size_t>(((c * dims[0] + d) * dims[1] + h) * dims[2] + w)] =
              accum[static_cast<size_t>(c * vn + i)] /
              static_cast<float>(count[static_cast<size_t>(i)]);
        }
  return probs;
}

LabelVolume sliding_window_predict(const Model& model, const CaseVolume& cs) {
  const Tensor<float> probs = sliding_window_probs(model, cs);
  const auto dims = cs.channels[0].dims;
  const int64_t C = probs.shape[0];
  const int64_t vn = dims[0] * dims[1] * dims[2];

  LabelVolume out;
  out.dims = dims;
  out.spacing = cs.channels[0].spacing;
  out.xform = cs.channels[0].xform;
  out.data.assign(static_cast<size_t>(vn), 0);
  for (int64_t i = 0; i < vn; ++i) {
    int best = 0;
    float bv = probs.data[static_cast<size_t>(i)];
    for (int64_t c = 1; c < C; ++c) {
      const float v = probs.data[static_cast<size_t>(c * vn + i)];
      if (v > bv) {
        bv = v;
        best = static_cast<int>(c);
      }
    }
    out.data[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
  }
  return out;
}

}  // namespace styleseg::nn
