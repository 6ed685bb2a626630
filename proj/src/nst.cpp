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

#include "styleseg/nst.hpp"

#include <cmath>
#include <sstream>

#include "styleseg/kernels.hpp"
#include "styleseg/preprocess.hpp"

namespace styleseg {

void StyleTransferConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0))
    throw DataError("style config: need nonnegative alpha/beta, not both zero");
  if (iterations < 1) throw DataError("style config: iterations must be >= 1");
  if (!(step_size > 0.0)) throw DataError("style config: step size must be > 0");
}

template <class T>
std::pair<double, Tensor<T>> content_loss(const Tensor<T>& f, const Tensor<T>& p) {
  if (f.shape != p.shape) throw DataError("content_loss: shape mismatch");
  Tensor<T> grad(f.shape);
  double loss = 0.0;
  for (size_t i = 0; i < f.data.size(); ++i) {
    const double d = static_cast<double>(f.data[i]) - static_cast<double>(p.data[i]);
    grad.data[i] = static_cast<T>(d);
    loss += d * d;
  }
  return {0.5 * loss, std::move(grad)};
}

template <class T>
double style_loss(const std::vector<Tensor<T>>& maps,
                  const std::vector<Tensor<T>>& target_grams,
                  const std::vector<double>& weights, std::vector<Tensor<T>>& dmaps) {
  if (maps.size() != target_grams.size() || maps.size() != weights.size())
    throw DataError("style_loss: layer count mismatch");
  dmaps.clear();
  double loss = 0.0;
  for (size_t l = 0; l < maps.size(); ++l) {
    const auto& map = maps[l];
    const int64_t n = map.shape[1];
    const int64_t m = map.shape[2] * map.shape[3] * map.shape[4];
    Tensor<T> g = gram_matrix(map);
    if (g.shape != target_grams[l].shape) throw DataError("style_loss: Gram shape mismatch");

    Tensor<T> diff(g.shape);
    double ssq = 0.0;
    for (size_t i = 0; i < g.data.size(); ++i) {
      const double d =
          static_cast<double>(g.data[i]) - static_cast<double>(target_grams[l].data[i]);
      diff.data[i] = static_cast<T>(d);
      ssq += d * d;
    }
    const double nm = static_cast<double>(n) * static_cast<double>(m);
    loss += weights[l] * ssq / (4.0 * nm * nm);

    // dE/dF = (G - A) F / (N^2 M^2), with the layer weight folded in
    Tensor<T> dmap(map.shape);
    kernels::gemm_nn(diff.ptr(), map.ptr(), dmap.ptr(), static_cast<size_t>(n),
                     static_cast<size_t>(n), static_cast<size_t>(m), false);
    const T scale = static_cast<T>(weights[l] / (nm * nm));
    kernels::scale(dmap.ptr(), scale, dmap.data.size());
    dmaps.push_back(std::move(dmap));
  }
  return loss;
}

template <class T>
NstResult<T> nst_optimize(const Tensor<T>& content, const Tensor<T>& style,
                          const FeatureExtractor<T>& extractor,
                          const StyleTransferConfig& config) {
  config.validate();
  if (content.shape != style.shape)
    throw DataError("nst_optimize: content/style slice shapes differ");

  const auto& spec = extractor.spec;
  const auto content_trace = extract_features(extractor, content);
  const auto style_trace = extract_features(extractor, style);
  const Tensor<T>& content_target =
      content_trace.maps[static_cast<size_t>(spec.content_layer)];

  std::vector<Tensor<T>> target_grams;
  for (int l : spec.style_layers)
    target_grams.push_back(gram_matrix(style_trace.maps[static_cast<size_t>(l)]));

  Tensor<T> x = content;
  if (config.init == NstInit::kNoise) {
    auto g = seeded_engine(config.seed, 0x0153u);
    x.fill_gaussian(g, 1.0);
  }

  Tensor<T> m(x.shape), v(x.shape);
  NstResult<T> out;
  out.trace.reserve(static_cast<size_t>(config.iterations));
  double initial_total = 0.0;

  for (int it = 0; it < config.iterations; ++it) {
    const auto trace = extract_features(extractor, x);

    auto [lc, dcontent] =
        content_loss(trace.maps[static_cast<size_t>(spec.content_layer)], content_target);

    std::vector<Tensor<T>> style_maps;
    for (int l : spec.style_layers)
      style_maps.push_back(trace.maps[static_cast<size_t>(l)]);
    std::vector<Tensor<T>> dstyle;
    const double ls = style_loss(style_maps, target_grams, spec.style_weights, dstyle);

    const double total = config.alpha * lc + config.beta * ls;
    out.trace.push_back({total, lc, ls});
    if (it == 0) {
      initial_total = total;
    } else if (total > 10.0 * initial_total && total > 0.0) {
      std::ostringstream os;
      os << "nst diverged at iteration " << it << ": loss " << total
         << " exceeds 10x initial " << initial_total;
      throw NumericalError(os.str());
    }
    if (!std::isfinite(total)) throw NumericalError("nst: non-finite loss");

    std::vector<Tensor<T>> dmaps;
    for (const auto& map : trace.maps) dmaps.emplace_back(map.shape);
    {
      auto& dm = dmaps[static_cast<size_t>(spec.content_layer)];
      kernels::axpy(static_cast<T>(config.alpha), dcontent.ptr(), dm.ptr(),
                    dm.data.size());
    }
    for (size_t i = 0; i < spec.style_layers.size(); ++i) {
      auto& dm = dmaps[static_cast<size_t>(spec.style_layers[i])];
      kernels::axpy(static_cast<T>(config.beta), dstyle[i].ptr(), dm.ptr(),
                    dm.data.size());
    }

    Tensor<T> dx = backward_to_image(extractor, trace, dmaps);

    const double t = static_cast<double>(it + 1);
    const T bc1 = static_cast<T>(1.0 - std::pow(0.9, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(0.999, t));
    kernels::adam_step(x.ptr(), m.ptr(), v.ptr(), dx.ptr(), x.data.size(),
                       static_cast<T>(config.step_size), static_cast<T>(0.9),
                       static_cast<T>(0.999), static_cast<T>(1e-8), bc1, bc2);
  }

  out.image = std::move(x);
  return out;
}

template <class T>
Tensor<T> center_crop_or_pad(const Tensor<T>& slice, int64_t height, int64_t width) {
  if (slice.shape.size() != 5) throw DataError("center_crop_or_pad: expected a slice");
  const int64_t h = slice.shape[3], w = slice.shape[4];
  if (h == height && w == width) return slice;
  Tensor<T> out({slice.shape[0], slice.shape[1], slice.shape[2], height, width});
  // source/destination window offsets per axis
  const int64_t sh = h > height ? (h - height) / 2 : 0;
  const int64_t dh = h < height ? (height - h) / 2 : 0;
  const int64_t sw = w > width ? (w - width) / 2 : 0;
  const int64_t dw = w < width ? (width - w) / 2 : 0;
  const int64_t copy_h = std::min(h, height);
  const int64_t copy_w = std::min(w, width);
  const int64_t planes = slice.shape[0] * slice.shape[1] * slice.shape[2];
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < copy_h; ++i)
      for (int64_t j = 0; j < copy_w; ++j)
        out.data[static_cast<size_t>((p * height + dh + i) * width + dw + j)] =
            slice.data[static_cast<size_t>((p * h + sh + i) * w + sw + j)];
  return out;
}

std::vector<StylePair> pair_randomly(const std::vector<std::string>& content_ids,
                                     const std::vector<std::string>& style_ids,
                                     uint64_t seed) {
  if (content_ids.empty() || style_ids.empty())
    throw DataError("pair_randomly: empty id list");
  auto g = seeded_engine(seed, 0x9A17u);
  std::vector<StylePair> pairs;
  pairs.reserve(content_ids.size());
  for (const auto& id : content_ids) {
    StylePair p;
    p.content_id = id;
    p.style_id = style_ids[uniform_below(g, style_ids.size())];
    pairs.push_back(std::move(p));
  }
  return pairs;
}

namespace {

Tensor<float> slice_of(const VoxelGrid& grid, int64_t d) {
  Tensor<float> t({1, 1, 1, grid.dims[1], grid.dims[2]});
  const size_t plane = static_cast<size_t>(grid.dims[1] * grid.dims[2]);
  std::copy(grid.data.begin() + static_cast<int64_t>(plane) * d,
            grid.data.begin() + static_cast<int64_t>(plane) * (d + 1), t.data.begin());
  return t;
}

}  // namespace

AugmentResult augment_dataset(const std::vector<CaseVolume>& content_cases,
                              const std::vector<CaseVolume>& style_cases,
                              const FeatureExtractorSpec& extractor_spec,
                              const StyleTransferConfig& config) {
  config.validate();
  const auto extractor = build_extractor<float>(extractor_spec);

  std::vector<std::string> content_ids, style_ids;
  for (const auto& c : content_cases) content_ids.push_back(c.id);
  for (const auto& c : style_cases) style_ids.push_back(c.id);

  AugmentResult result;
  result.pairs = pair_randomly(content_ids, style_ids, config.seed);

  for (const auto& pair : result.pairs) {
    const CaseVolume* content = nullptr;
    const CaseVolume* style = nullptr;
    for (const auto& c : content_cases)
      if (c.id == pair.content_id) content = &c;
    for (const auto& c : style_cases)
      if (c.id == pair.style_id) style = &c;

    CaseVolume out;
    out.id = content->id + "-nst";
    out.domain = content->domain;
    out.truth = content->truth;  // bit-exact passthrough

    const int64_t cd = content->channels[0].dims[0];
    const int64_t sd = style->channels[0].dims[0];
    for (int ch = 0; ch < 4; ++ch) {
      const auto& cgrid = content->channels[static_cast<size_t>(ch)];
      const auto& sgrid = style->channels[static_cast<size_t>(ch)];
      VoxelGrid stylized = cgrid;
      for (int64_t d = 0; d < cd; ++d) {
        const int64_t d_style = std::min(sd - 1, d * sd / cd);
        try {
          auto cslice = slice_of(cgrid, d);
          auto sslice = center_crop_or_pad(slice_of(sgrid, d_style), cgrid.dims[1],
                                           cgrid.dims[2]);
          auto res = nst_optimize(cslice, sslice, extractor, config);
          std::copy(res.image.data.begin(), res.image.data.end(),
                    stylized.data.begin() + d * cgrid.dims[1] * cgrid.dims[2]);
          result.traces.push_back({pair.content_id, pair.style_id, ch, d,
                                   res.trace.front().total, res.trace.back().total});
        } catch (const NumericalError& e) {
          std::ostringstream os;
          os << "pair " << pair.content_id << "/" << pair.style_id << " channel " << ch
             << " slice " << d << ": " << e.what();
          throw NumericalError(os.str());
        }
      }
      try {
        stylized = normalize_nonzero(stylized);
      } catch (const DataError& e) {
        throw DataError("pair " + pair.content_id + "/" + pair.style_id +
                        ": degenerate stylized channel: " + e.what());
      }
      out.channels[static_cast<size_t>(ch)] = std::move(stylized);
    }
    out.validate();
    result.cases.push_back(std::move(out));
  }
  return result;
}

#define STYLESEG_INSTANTIATE(T)                                                        \
  template std::pair<double, Tensor<T>> content_loss<T>(const Tensor<T>&,              \
                                                        const Tensor<T>&);             \
  template double style_loss<T>(const std::vector<Tensor<T>>&,                         \
                                const std::vector<Tensor<T>>&,                         \
                                const std::vector<double>&, std::vector<Tensor<T>>&);  \
  template NstResult<T> nst_optimize<T>(const Tensor<T>&, const Tensor<T>&,            \
                                        const FeatureExtractor<T>&,                    \
                                        const StyleTransferConfig&);                   \
  template Tensor<T> center_crop_or_pad<T>(const Tensor<T>&, int64_t, int64_t);

STYLESEG_INSTANTIATE(float)
STYLESEG_INSTANTIATE(double)
#undef STYLESEG_INSTANTIATE

}  // namespace styleseg
