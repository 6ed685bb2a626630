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
#include <numeric>
#include <string>
#include <vector>

#include "styleseg/common.hpp"

namespace styleseg {

// Dense row-major tensor. The last axis varies fastest. Network code uses
// (N, C, D, H, W); 2D models carry a singleton depth axis.
template <class T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(count(shape)), T(0));
  }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d <= 0) throw DataError("tensor axis must be positive");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  void fill_gaussian(std::mt19937_64& g, double sd) {
    for (auto& x : data) x = static_cast<T>(gaussian(g) * sd);
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace styleseg
