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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "styleseg/featurenet.hpp"
#include "styleseg/volume.hpp"

namespace styleseg {

enum class NstInit { kContentCopy, kNoise };

struct StyleTransferConfig {
  double alpha = 1.0;   // content weight
  double beta = 1e3;    // style weight
  int iterations = 200;
  double step_size = 0.02;  // Adam step on pixels
  uint64_t seed = 0;
  NstInit init = NstInit::kContentCopy;

  void validate() const;
};

// Losses recorded before each update, so trace.front() is the loss of the
// initial image and trace.back() the loss entering the final step.
struct LossPoint {
  double total = 0.0;
  double content = 0.0;
  double style = 0.0;
};

template <class T>
struct NstResult {
  Tensor<T> image;
  std::vector<LossPoint> trace;
};

// One stylization job; channel/slice are bookkeeping for diagnostics.
struct StylePair {
  std::string content_id;
  std::string style_id;
  int channel = -1;
  int64_t slice = -1;
};

// L = 1/2 sum (F - P)^2 over the content layer map; gradient is F - P.
template <class T>
std::pair<double, Tensor<T>> content_loss(const Tensor<T>& f, const Tensor<T>& p);

// Gatys style loss over the given maps: sum_l w_l / (4 N_l^2 M_l^2) *
// ||G_l - A_l||^2 with G_l the Gram of maps[l]; dmaps receives the exact
// gradient w.r.t. each map.
template <class T>
double style_loss(const std::vector<Tensor<T>>& maps,
                  const std::vector<Tensor<T>>& target_grams,
                  const std::vector<double>& weights, std::vector<Tensor<T>>& dmaps);

// Adam on the pixels of a (1,1,1,H,W) slice against alpha*content +
// beta*style. Aborts with a numerical error if the loss grows past 10x its
// initial value.
template <class T>
NstResult<T> nst_optimize(const Tensor<T>& content, const Tensor<T>& style,
                          const FeatureExtractor<T>& extractor,
                          const StyleTransferConfig& config);

// Symmetric center crop/pad (zero fill) of a slice to the given height/width.
template <class T>
Tensor<T> center_crop_or_pad(const Tensor<T>& slice, int64_t height, int64_t width);

// Each content id appears exactly once; style ids are drawn uniformly with
// replacement. Deterministic in the seed.
std::vector<StylePair> pair_randomly(const std::vector<std::string>& content_ids,
                                     const std::vector<std::string>& style_ids,
                                     uint64_t seed);

struct SliceTraceSummary {
  std::string content_id;
  std::string style_id;
  int channel = 0;
  int64_t slice = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct AugmentResult {
  std::vector<CaseVolume> cases;
  std::vector<StylePair> pairs;
  std::vector<SliceTraceSummary> traces;
};

// Stylizes every channel of every content case slice-wise (axial) against a
// randomly paired style case, re-standardizes intensities, and emits new
// cases with an "-nst" id suffix and the truth copied bit-exactly.
AugmentResult augment_dataset(const std::vector<CaseVolume>& content_cases,
                              const std::vector<CaseVolume>& style_cases,
                              const FeatureExtractorSpec& extractor_spec,
                              const StyleTransferConfig& config);

}  // namespace styleseg
