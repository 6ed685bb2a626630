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
#include <random>
#include <string>
#include <vector>

#include "styleseg/conv.hpp"
#include "styleseg/tensor.hpp"
#include "styleseg/volume.hpp"

// Deep-supervised encoder/decoder segmentation network with exact hand-rolled
// backprop. 2D models are 3D models with a singleton depth axis, so the whole
// module has a single code path for both.
namespace styleseg::nn {

struct UNetConfig {
  std::string id = "desk2d";
  int dims = 2;  // 2 or 3; controls kernel/stride depth handling
  int64_t base_features = 8;
  int stages = 3;
  // Per-stage downsampling stride applied by the first conv of the stage.
  // Stage 0 must be all-ones.
  std::vector<std::array<int64_t, 3>> strides;
  // Per-stage conv kernel, typically (1,3,3) for 2D and (3,3,3) for 3D.
  std::vector<std::array<int64_t, 3>> kernels;
  std::array<int64_t, 3> patch{1, 32, 32};
  int64_t batch_size = 2;
  // Number of supervised levels below full resolution. Heads sit at
  // levels 0..deep_supervision.
  int deep_supervision = 1;
  int num_classes = 4;
  uint64_t seed = 0;

  static UNetConfig desk_2d(uint64_t seed);
  static UNetConfig desk_3d(uint64_t seed);
  static UNetConfig gradcheck_2d(uint64_t seed);
  static UNetConfig gradcheck_3d(uint64_t seed);
  // Full-scale 3D configuration (base 32, six stages, 128^3 patches).
  // Accepted by validate() but far too heavy for the test suite.
  static UNetConfig full_3d(uint64_t seed);

  void validate() const;
  int64_t features_at(int stage) const;  // min(base * 2^s, 320)
  // Spatial dims at decoder level l: patch divided by the cumulative stride.
  std::array<int64_t, 3> level_dims(int level) const;
  std::string to_json() const;
  static UNetConfig from_json(const std::string& text);
};

struct LRSchedule {
  double initial_lr = 0.01;
  double exponent = 0.9;
  int64_t max_epochs = 1;

  void validate() const;
};

// lr = initial * (1 - epoch/max_epochs)^exponent
double poly_lr(const LRSchedule& s, int64_t epoch);

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
};

// Full optimizer state travels with the model so a checkpoint restart
// continues the exact same trajectory (including the patch-sampling RNG).
template <class T>
struct ModelT {
  UNetConfig cfg;
  std::vector<Param<T>> params;
  std::vector<Tensor<T>> m;  // Adam first moments, aligned with params
  std::vector<Tensor<T>> v;  // Adam second moments
  int64_t step = 0;
  int64_t epoch = 0;        // completed training epochs
  double pseudo_ema = 0.0;  // running validation Dice estimate
  LRSchedule sched;
  std::mt19937_64 rng;

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }
  int find(const std::string& name) const {
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

using Model = ModelT<float>;

template <class T>
ModelT<T> build_model(const UNetConfig& cfg);

template <class T>
struct ConvBlockCacheT {
  Tensor<T> x;                  // block input
  Tensor<T> z;                  // conv output (norm input)
  InstanceNormCache<T> norm;
  Tensor<T> a;                  // norm output (activation input)
  Tensor<T> y;                  // block output
};

template <class T>
struct ForwardCacheT {
  std::vector<ConvBlockCacheT<T>> enc;  // two blocks per stage
  std::vector<ConvBlockCacheT<T>> dec;  // two blocks per decoder level
  std::vector<Tensor<T>> up_in;         // tconv input per decoder level
  std::vector<Tensor<T>> feat;          // per-level feature entering the heads
};

// Returns logits per supervised level, level 0 first at full patch
// resolution, level k at the stride-reduced resolution. `cache` may be null
// for inference.
template <class T>
std::vector<Tensor<T>> unet_forward(const ModelT<T>& model, const Tensor<T>& x,
                                    ForwardCacheT<T>* cache);

// Gradients aligned with model.params; dlogits must match unet_forward's
// output shapes.
template <class T>
std::vector<Tensor<T>> unet_backward(const ModelT<T>& model,
                                     const ForwardCacheT<T>& cache,
                                     const std::vector<Tensor<T>>& dlogits);

template <class T>
struct LossResult {
  double total = 0, dice = 0, ce = 0;
  std::vector<Tensor<T>> dlogits;
};

// Soft foreground Dice plus cross-entropy at every supervised level, level
// weights halving with depth and normalized to sum 1. Targets are label codes
// shaped (B, D, H, W) at full patch resolution; coarser levels compare
// against the stride-aligned nearest-neighbor subsampling.
template <class T>
LossResult<T> dice_ce_loss(const UNetConfig& cfg,
                           const std::vector<Tensor<T>>& logits,
                           const Tensor<uint8_t>& target);

// Standard Adam (beta1 0.9, beta2 0.999, eps 1e-8) with bias correction over
// every parameter tensor; bumps the step counter. Non-finite gradients abort
// with the offending layer's name before any parameter is touched.
template <class T>
void adam_step(ModelT<T>& model, const std::vector<Tensor<T>>& grads, double lr);

struct StepStats {
  double total = 0, dice = 0, ce = 0;
};

// forward + loss + backward + Adam in one call.
template <class T>
StepStats train_step(ModelT<T>& model, const Tensor<T>& x,
                     const Tensor<uint8_t>& target, double lr);

// Tiled full-volume inference: 50% window overlap, uniform averaging of
// level-0 softmax in overlaps, argmax per voxel. Volumes smaller than the
// patch are zero-padded at the high end and the padding is cut away again.
LabelVolume sliding_window_predict(const Model& model, const CaseVolume& cs);

// The averaged class-probability volume behind sliding_window_predict,
// shaped (num_classes, D, H, W) at the case's dims.
Tensor<float> sliding_window_probs(const Model& model, const CaseVolume& cs);

// Softmax class probabilities for one already-assembled input tensor
// (used by tests to cross-check the tiled path).
Tensor<float> softmax_over_classes(const Tensor<float>& logits);

}  // namespace styleseg::nn
