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
#include <vector>

#include "styleseg/tensor.hpp"

namespace styleseg {

// Fixed convolutional feature pyramid used for style transfer. The filters
// are seeded orthogonal-random, never trained; content/style representations
// are read from the post-activation maps before pooling.
struct FeatureExtractorSpec {
  struct Layer {
    int64_t channels = 0;
    bool pool_after = false;  // 2x2 average pool between this layer and the next
  };

  std::vector<Layer> layers;
  int content_layer = 0;
  std::vector<int> style_layers;
  std::vector<double> style_weights;  // positive, sum 1
  uint64_t seed = 0;

  // 4 layers of 8/16/16/32 channels, pools after the 1st and 3rd, content on
  // the last layer, style on all four at uniform weight.
  static FeatureExtractorSpec defaults(uint64_t seed);

  void validate() const;
  std::string to_json() const;
  static FeatureExtractorSpec from_json(const std::string& text);
};

// Weights are (out_channels, in_channels, 1, 3, 3); stride 1, padding 1,
// no bias, ReLU after every layer.
template <class T>
struct FeatureExtractor {
  FeatureExtractorSpec spec;
  std::vector<Tensor<T>> weights;
};

template <class T>
FeatureExtractor<T> build_extractor(const FeatureExtractorSpec& spec);

// Everything the backward pass needs; maps[l] is the pyramid entry for
// layer l (post-ReLU, pre-pool).
template <class T>
struct FeatureTrace {
  std::vector<Tensor<T>> inputs;  // inputs[l] feeds layer l; inputs[0] = image
  std::vector<Tensor<T>> pre;    // conv outputs before the activation
  std::vector<Tensor<T>> maps;
};

// image is (1, 1, 1, H, W) with H, W >= 4.
template <class T>
FeatureTrace<T> extract_features(const FeatureExtractor<T>& ex, const Tensor<T>& image);

// Propagates per-layer map gradients back to the image pixels.
template <class T>
Tensor<T> backward_to_image(const FeatureExtractor<T>& ex, const FeatureTrace<T>& trace,
                            const std::vector<Tensor<T>>& dmaps);

// G = F F^T with F the map flattened to (channels, spatial); unnormalized.
template <class T>
Tensor<T> gram_matrix(const Tensor<T>& map);

}  // namespace styleseg
