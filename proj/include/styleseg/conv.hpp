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
#include <vector>

#include "styleseg/tensor.hpp"

// Dense layer primitives shared by the feature extractor and the U-Net.
// Every tensor is (N, C, D, H, W); 2D networks pass depth-1 tensors with
// depth-1 kernels, so there is exactly one convolution code path.
namespace styleseg::nn {

struct ConvGeom {
  std::array<int64_t, 3> kernel{1, 3, 3};
  std::array<int64_t, 3> stride{1, 1, 1};
  std::array<int64_t, 3> pad{0, 1, 1};
};

std::array<int64_t, 3> conv_out_dims(const std::array<int64_t, 3>& in,
                                     const ConvGeom& geom);

// Unrolls conv patches into a (C * prod(kernel)) x prod(out_dims) matrix,
// zero where the window hangs over the padded border.
template <class T>
void im2col(const T* x, int64_t channels, const std::array<int64_t, 3>& in,
            const ConvGeom& geom, T* col);

// Transpose scatter-add of im2col; x is zeroed first.
template <class T>
void col2im(const T* col, int64_t channels, const std::array<int64_t, 3>& in,
            const ConvGeom& geom, T* x);

// x (N,C,D,H,W), w (F,C,kd,kh,kw), bias (F) optional -> (N,F,oD,oH,oW)
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                       const ConvGeom& geom);

// Overwrites dx/dw/db (no accumulation).
template <class T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& geom,
                   const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dw, Tensor<T>* db);

// Transposed convolution with stride == kernel and no padding (the exact
// upsampling used between decoder levels). w is (C_in, C_out, kd, kh, kw);
// output spatial dims are input dims * kernel.
template <class T>
Tensor<T> tconv_forward(const Tensor<T>& x, const Tensor<T>& w,
                        const std::array<int64_t, 3>& kernel);

template <class T>
void tconv_backward(const Tensor<T>& x, const Tensor<T>& w,
                    const std::array<int64_t, 3>& kernel, const Tensor<T>& dy,
                    Tensor<T>& dx, Tensor<T>& dw);

// Average pooling, floor mode: trailing rows/cols that do not fill a window
// are dropped (and receive zero gradient).
template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& x, const std::array<int64_t, 3>& window);

template <class T>
Tensor<T> avgpool_backward(const std::vector<int64_t>& x_shape,
                           const std::array<int64_t, 3>& window, const Tensor<T>& dy);

// Per-(sample, channel) mean/inverse-std captured in the forward pass.
template <class T>
struct InstanceNormCache {
  std::vector<T> mean;
  std::vector<T> invstd;
};

template <class T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                const Tensor<T>& beta, T eps,
                                InstanceNormCache<T>& cache);

template <class T>
void instance_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                            const InstanceNormCache<T>& cache, const Tensor<T>& dy,
                            Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta);

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <class T>
Tensor<T> leaky_relu_grad(const Tensor<T>& x, const Tensor<T>& dy, T slope);

}  // namespace styleseg::nn
