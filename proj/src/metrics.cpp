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

#include "styleseg/metrics.hpp"

#include <algorithm>
#include <queue>

#include "styleseg/common.hpp"

namespace styleseg {

namespace {

void check_same_dims(const std::array<int64_t, 3>& a,
                     const std::array<int64_t, 3>& b, const char* what) {
  if (a != b) throw DataError(std::string(what) + ": dimension mismatch");
}

}  // namespace

double dice_binary(const Mask& a, const Mask& b) {
  check_same_dims(a.dims, b.dims, "dice_binary");
  int64_t na = 0, nb = 0, ni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const bool va = a.data[i] != 0;
    const bool vb = b.data[i] != 0;
    na += va;
    nb += vb;
    ni += va && vb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

DiceReport region_dice_report(const LabelVolume& pred, const LabelVolume& truth,
                              const std::string& case_id) {
  check_same_dims(pred.dims, truth.dims, "region_dice_report");
  if (pred.spacing != truth.spacing)
    throw DataError("region_dice_report: spacing mismatch");
  DiceReport rep;
  rep.case_id = case_id;
  const auto& regions = RegionSpec::all();
  for (size_t r = 0; r < regions.size(); ++r) {
    rep.dice[r] =
        dice_binary(region_mask(pred, regions[r]), region_mask(truth, regions[r]));
  }
  return rep;
}

ComponentLabels components_26(const Mask& mask) {
  ComponentLabels out;
  out.dims = mask.dims;
  out.labels.assign(mask.data.size(), 0);
  const int64_t D = mask.dims[0], H = mask.dims[1], W = mask.dims[2];
  std::queue<int64_t> frontier;
  for (int64_t start = 0; start < static_cast<int64_t>(mask.data.size()); ++start) {
    if (mask.data[start] == 0 || out.labels[start] != 0) continue;
    const int32_t label = ++out.count;
    out.labels[start] = label;
    frontier.push(start);
    while (!frontier.empty()) {
      const int64_t idx = frontier.front();
      frontier.pop();
      const int64_t d = idx / (H * W);
      const int64_t h = (idx / W) % H;
      const int64_t w = idx % W;
      for (int64_t dd = -1; dd <= 1; ++dd)
        for (int64_t dh = -1; dh <= 1; ++dh)
          for (int64_t dw = -1; dw <= 1; ++dw) {
            const int64_t nd = d + dd, nh = h + dh, nw = w + dw;
            if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W)
              continue;
            const int64_t nidx = (nd * H + nh) * W + nw;
            if (mask.data[nidx] == 0 || out.labels[nidx] != 0) continue;
            out.labels[nidx] = label;
            frontier.push(nidx);
          }
    }
  }
  return out;
}

Mask dilate_mask(const Mask& mask, int radius) {
  Mask cur = mask;
  const int64_t D = mask.dims[0], H = mask.dims[1], W = mask.dims[2];
  for (int r = 0; r < radius; ++r) {
    Mask next = cur;
    for (int64_t d = 0; d < D; ++d)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          const int64_t idx = (d * H + h) * W + w;
          if (cur.data[idx] == 0) continue;
          for (int64_t dd = -1; dd <= 1; ++dd)
            for (int64_t dh = -1; dh <= 1; ++dh)
              for (int64_t dw = -1; dw <= 1; ++dw) {
                const int64_t nd = d + dd, nh = h + dh, nw = w + dw;
                if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W)
                  continue;
                next.data[(nd * H + nh) * W + nw] = 1;
              }
        }
    cur = std::move(next);
  }
  return cur;
}

LesionScore lesion_wise_dice(const Mask& pred, const Mask& truth,
                             const LesionWiseParams& params) {
  check_same_dims(pred.dims, truth.dims, "lesion_wise_dice");
  if (params.dilation_radius < 0 || params.min_lesion < 1)
    throw UsageError("lesion_wise_dice: invalid parameters");

  const ComponentLabels tc = components_26(truth);
  const ComponentLabels pc = components_26(pred);

  std::vector<int64_t> truth_size(tc.count + 1, 0);
  for (int32_t l : tc.labels) truth_size[l] += l != 0;
  std::vector<int64_t> pred_size(pc.count + 1, 0);
  for (int32_t l : pc.labels) pred_size[l] += l != 0;

  // Match zone per kept truth lesion, then first-lesion assignment for every
  // predicted component that touches a zone.
  std::vector<int32_t> zone(truth.data.size(), 0);
  for (int32_t t = 1; t <= tc.count; ++t) {
    if (truth_size[t] < params.min_lesion) continue;
    Mask lesion;
    lesion.dims = truth.dims;
    lesion.data.resize(truth.data.size());
    for (size_t i = 0; i < truth.data.size(); ++i)
      lesion.data[i] = tc.labels[i] == t ? 1 : 0;
    const Mask grown = dilate_mask(lesion, params.dilation_radius);
    for (size_t i = 0; i < zone.size(); ++i)
      if (grown.data[i] != 0 && zone[i] == 0) zone[i] = t;
  }

  std::vector<int32_t> assigned(pc.count + 1, 0);
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const int32_t p = pc.labels[i];
    if (p == 0 || zone[i] == 0) continue;
    if (assigned[p] == 0 || zone[i] < assigned[p]) assigned[p] = zone[i];
  }

  LesionScore score;
  std::vector<double> contributions;
  for (int32_t t = 1; t <= tc.count; ++t) {
    if (truth_size[t] < params.min_lesion) continue;
    int64_t inter = 0, np = 0;
    for (size_t i = 0; i < truth.data.size(); ++i) {
      const bool in_pred = pc.labels[i] != 0 && assigned[pc.labels[i]] == t;
      np += in_pred;
      inter += in_pred && tc.labels[i] == t;
    }
    if (np == 0) {
      contributions.push_back(0.0);
      ++score.fn;
    } else {
      contributions.push_back(2.0 * static_cast<double>(inter) /
                              static_cast<double>(np + truth_size[t]));
      ++score.tp;
    }
  }
  for (int32_t p = 1; p <= pc.count; ++p) {
    if (assigned[p] != 0 || pred_size[p] < params.min_lesion) continue;
    contributions.push_back(0.0);
    ++score.fp;
  }

  if (contributions.empty()) {
    score.dice = 1.0;
  } else {
    double sum = 0.0;
    for (double c : contributions) sum += c;
    score.dice = sum / static_cast<double>(contributions.size());
  }
  return score;
}

LesionWiseReport lesion_wise_report(const LabelVolume& pred,
                                    const LabelVolume& truth,
                                    const std::string& case_id,
                                    const LesionWiseParams& params) {
  check_same_dims(pred.dims, truth.dims, "lesion_wise_report");
  if (pred.spacing != truth.spacing)
    throw DataError("lesion_wise_report: spacing mismatch");
  LesionWiseReport rep;
  rep.case_id = case_id;
  rep.params = params;
  const auto& regions = RegionSpec::all();
  for (size_t r = 0; r < regions.size(); ++r) {
    rep.regions[r] = lesion_wise_dice(region_mask(pred, regions[r]),
                                      region_mask(truth, regions[r]), params);
  }
  return rep;
}

}  // namespace styleseg
