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

#include "styleseg/featurenet.hpp"

#include <cmath>

#include "json.hpp"
#include "styleseg/conv.hpp"
#include "styleseg/kernels.hpp"

namespace styleseg {

namespace {

constexpr int64_t kKernel = 3;

nn::ConvGeom slice_conv_geom() {
  nn::ConvGeom g;
  g.kernel = {1, kKernel, kKernel};
  g.stride = {1, 1, 1};
  g.pad = {0, 1, 1};
  return g;
}

constexpr std::array<int64_t, 3> kPoolWindow{1, 2, 2};

// Rows of a gaussian matrix orthonormalized by modified Gram-Schmidt.
// rows <= cols is required (true for every 3x3 layer here).
std::vector<double> orthogonal_rows(std::mt19937_64& g, int64_t rows, int64_t cols) {
  std::vector<double> a(static_cast<size_t>(rows * cols));
  for (auto& v : a) v = gaussian(g);
  for (int64_t i = 0; i < rows; ++i) {
    double* ri = a.data() + i * cols;
    for (int64_t j = 0; j < i; ++j) {
      const double* rj = a.data() + j * cols;
      double d = 0.0;
      for (int64_t k = 0; k < cols; ++k) d += ri[k] * rj[k];
      for (int64_t k = 0; k < cols; ++k) ri[k] -= d * rj[k];
    }
    double nrm = 0.0;
    for (int64_t k = 0; k < cols; ++k) nrm += ri[k] * ri[k];
    nrm = std::sqrt(nrm);
    if (!(nrm > 1e-12))
      throw NumericalError("orthogonal init: rank-deficient draw");
    for (int64_t k = 0; k < cols; ++k) ri[k] /= nrm;
  }
  return a;
}

}  // namespace

FeatureExtractorSpec FeatureExtractorSpec::defaults(uint64_t seed) {
  FeatureExtractorSpec s;
  s.layers = {{8, true}, {16, false}, {16, true}, {32, false}};
  s.content_layer = 3;
  s.style_layers = {0, 1, 2, 3};
  s.style_weights = {0.25, 0.25, 0.25, 0.25};
  s.seed = seed;
  return s;
}

void FeatureExtractorSpec::validate() const {
  if (layers.empty()) throw DataError("extractor spec: no layers");
  for (const auto& l : layers)
    if (l.channels <= 0) throw DataError("extractor spec: non-positive channel count");
  const int n = static_cast<int>(layers.size());
  if (content_layer < 0 || content_layer >= n)
    throw DataError("extractor spec: content layer out of range");
  if (style_layers.empty() || style_layers.size() != style_weights.size())
    throw DataError("extractor spec: style layers/weights mismatch");
  double wsum = 0.0;
  for (size_t i = 0; i < style_layers.size(); ++i) {
    if (style_layers[i] < 0 || style_layers[i] >= n)
      throw DataError("extractor spec: style layer out of range");
    if (!(style_weights[i] > 0.0))
      throw DataError("extractor spec: style weights must be positive");
    wsum += style_weights[i];
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw DataError("extractor spec: style weights must sum to 1");
}

std::string FeatureExtractorSpec::to_json() const {
  nlohmann::json j;
  for (const auto& l : layers)
    j["layers"].push_back({{"channels", l.channels}, {"pool_after", l.pool_after}});
  j["content_layer"] = content_layer;
  j["style_layers"] = style_layers;
  j["style_weights"] = style_weights;
  j["seed"] = seed;
  return j.dump();
}

FeatureExtractorSpec FeatureExtractorSpec::from_json(const std::string& text) {
  FeatureExtractorSpec s;
  try {
    auto j = nlohmann::json::parse(text);
    for (const auto& l : j.at("layers"))
      s.layers.push_back({l.at("channels").get<int64_t>(), l.at("pool_after").get<bool>()});
    s.content_layer = j.at("content_layer").get<int>();
    s.style_layers = j.at("style_layers").get<std::vector<int>>();
    s.style_weights = j.at("style_weights").get<std::vector<double>>();
    s.seed = j.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("extractor spec: bad JSON: ") + e.what());
  }
  s.validate();
  return s;
}

template <class T>
FeatureExtractor<T> build_extractor(const FeatureExtractorSpec& spec) {
  spec.validate();
  FeatureExtractor<T> ex;
  ex.spec = spec;
  auto g = seeded_engine(spec.seed, 0xFEA7u);
  int64_t in_ch = 1;
  for (const auto& layer : spec.layers) {
    const int64_t fan_in = in_ch * kKernel * kKernel;
    auto rows = orthogonal_rows(g, layer.channels, fan_in);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor<T> w({layer.channels, in_ch, 1, kKernel, kKernel});
    for (size_t i = 0; i < rows.size(); ++i)
      w.data[i] = static_cast<T>(rows[i] * scale);
    ex.weights.push_back(std::move(w));
    in_ch = layer.channels;
  }
  return ex;
}

template <class T>
FeatureTrace<T> extract_features(const FeatureExtractor<T>& ex, const Tensor<T>& image) {
  if (image.shape.size() != 5 || image.shape[0] != 1 || image.shape[1] != 1 ||
      image.shape[2] != 1)
    throw DataError("extract_features: expected a (1,1,1,H,W) slice");
  if (image.shape[3] < 4 || image.shape[4] < 4)
    throw DataError("extract_features: slice smaller than 4x4");

  const auto geom = slice_conv_geom();
  FeatureTrace<T> trace;
  Tensor<T> x = image;
  for (size_t l = 0; l < ex.weights.size(); ++l) {
    trace.inputs.push_back(x);
    Tensor<T> z = nn::conv_forward(x, ex.weights[l], static_cast<const Tensor<T>*>(nullptr), geom);
    Tensor<T> a = nn::leaky_relu(z, T(0));
    trace.pre.push_back(std::move(z));
    trace.maps.push_back(a);
    x = ex.spec.layers[l].pool_after ? nn::avgpool_forward(a, kPoolWindow)
                                     : std::move(a);
  }
  return trace;
}

template <class T>
Tensor<T> backward_to_image(const FeatureExtractor<T>& ex, const FeatureTrace<T>& trace,
                            const std::vector<Tensor<T>>& dmaps) {
  if (dmaps.size() != ex.weights.size())
    throw DataError("backward_to_image: one gradient per layer required");
  const auto geom = slice_conv_geom();

  Tensor<T> dnext;  // gradient w.r.t. the input of layer l+1
  for (int l = static_cast<int>(ex.weights.size()) - 1; l >= 0; --l) {
    Tensor<T> dmap = dmaps[static_cast<size_t>(l)];
    if (dmap.shape != trace.maps[static_cast<size_t>(l)].shape)
      throw DataError("backward_to_image: gradient shape mismatch");
    if (dnext.numel() > 0) {
      Tensor<T> dpool =
          ex.spec.layers[static_cast<size_t>(l)].pool_after
              ? nn::avgpool_backward(trace.maps[static_cast<size_t>(l)].shape,
                                     kPoolWindow, dnext)
              : std::move(dnext);
      kernels::axpy(T(1), dpool.ptr(), dmap.ptr(), dmap.data.size());
    }
    Tensor<T> dz = nn::leaky_relu_grad(trace.pre[static_cast<size_t>(l)], dmap, T(0));
    Tensor<T> dx, dw;
    nn::conv_backward(trace.inputs[static_cast<size_t>(l)],
                      ex.weights[static_cast<size_t>(l)], geom, dz, dx, dw, static_cast<Tensor<T>*>(nullptr));
    dnext = std::move(dx);
  }
  return dnext;
}

template <class T>
Tensor<T> gram_matrix(const Tensor<T>& map) {
  if (map.shape.size() != 5) throw DataError("gram_matrix: expected a 5-axis map");
  const int64_t C = map.shape[1];
  const int64_t M = map.shape[2] * map.shape[3] * map.shape[4];
  if (map.shape[0] != 1) throw DataError("gram_matrix: single sample expected");
  Tensor<T> g({C, C});
  kernels::gemm_nt(map.ptr(), map.ptr(), g.ptr(), static_cast<size_t>(C),
                   static_cast<size_t>(M), static_cast<size_t>(C), false);
  return g;
}

#define STYLESEG_INSTANTIATE(T)                                                       \
  template FeatureExtractor<T> build_extractor<T>(const FeatureExtractorSpec&);       \
  template FeatureTrace<T> extract_features<T>(const FeatureExtractor<T>&,            \
                                               const Tensor<T>&);                     \
  template Tensor<T> backward_to_image<T>(const FeatureExtractor<T>&,                 \
                                          const FeatureTrace<T>&,                     \
                                          const std::vector<Tensor<T>>&);             \
  template Tensor<T> gram_matrix<T>(const Tensor<T>&);

STYLESEG_INSTANTIATE(float)
STYLESEG_INSTANTIATE(double)
#undef STYLESEG_INSTANTIATE

}  // namespace styleseg
