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

#include "styleseg/unet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "styleseg/kernels.hpp"

namespace styleseg::nn {

namespace {

constexpr int64_t kInChannels = 4;
constexpr double kNormEps = 1e-5;
constexpr double kSlope = 0.01;
constexpr double kDiceEps = 1e-5;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
// Independent random streams: weight init and patch sampling never interleave.
constexpr uint64_t kInitStream = 0xD0DEu;
constexpr uint64_t kSampleStream = 0x5A3Fu;

struct BlockIdx {
  int w = -1, b = -1, g = -1, be = -1;
};
struct StageIdx {
  BlockIdx c1, c2;
};
struct DecIdx {
  int up = -1;
  BlockIdx c1, c2;
};
struct HeadIdx {
  int w = -1, b = -1;
};
struct Layout {
  std::vector<StageIdx> enc;   // by stage
  std::vector<DecIdx> dec;     // by decoder level
  std::vector<HeadIdx> head;   // by supervised level
};

struct ParamDef {
  std::string name;
  std::vector<int64_t> shape;
  char kind;       // 'w' gaussian, 'z' zeros, 'o' ones
  double init_sd;  // for 'w'
};

int64_t prod3(const std::array<int64_t, 3>& a) { return a[0] * a[1] * a[2]; }

BlockIdx def_conv_block(const std::string& prefix, int64_t in_ch, int64_t out_ch,
                        const std::array<int64_t, 3>& kernel,
                        std::vector<ParamDef>& defs) {
  BlockIdx bi;
  const double sd = std::sqrt(2.0 / static_cast<double>(in_ch * prod3(kernel)));
  bi.w = static_cast<int>(defs.size());
  defs.push_back({prefix + ".w", {out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, 'w', sd});
  bi.b = static_cast<int>(defs.size());
  defs.push_back({prefix + ".b", {out_ch}, 'z', 0.0});
  bi.g = static_cast<int>(defs.size());
  defs.push_back({prefix + ".g", {out_ch}, 'o', 0.0});
  bi.be = static_cast<int>(defs.size());
  defs.push_back({prefix + ".beta", {out_ch}, 'z', 0.0});
  return bi;
}

// Canonical parameter order: encoder stages, then decoder levels from the
// bottleneck up, then segmentation heads from full resolution down. Training,
// checkpoints and gradient vectors all index parameters this way.
Layout make_layout(const UNetConfig& cfg, std::vector<ParamDef>& defs) {
  Layout L;
  const int S = cfg.stages;
  for (int s = 0; s < S; ++s) {
    const int64_t in_ch = s == 0 ? kInChannels : cfg.features_at(s - 1);
    const int64_t f = cfg.features_at(s);
    const std::string p = "enc" + std::to_string(s);
    StageIdx si;
    si.c1 = def_conv_block(p + ".conv1", in_ch, f, cfg.kernels[static_cast<size_t>(s)], defs);
    si.c2 = def_conv_block(p + ".conv2", f, f, cfg.kernels[static_cast<size_t>(s)], defs);
    L.enc.push_back(si);
  }
  L.dec.resize(static_cast<size_t>(S - 1));
  for (int l = S - 2; l >= 0; --l) {
    const int64_t f_lo = cfg.features_at(l + 1);
    const int64_t f = cfg.features_at(l);
    const auto& up_k = cfg.strides[static_cast<size_t>(l + 1)];
    const std::string p = "dec" + std::to_string(l);
    DecIdx di;
    di.up = static_cast<int>(defs.size());
    defs.push_back({p + ".up.w",
                    {f_lo, f, up_k[0], up_k[1], up_k[2]},
                    'w',
                    std::sqrt(2.0 / static_cast<double>(f_lo * prod3(up_k)))});
    di.c1 = def_conv_block(p + ".conv1", 2 * f, f, cfg.kernels[static_cast<size_t>(l)], defs);
    di.c2 = def_conv_block(p + ".conv2", f, f, cfg.kernels[static_cast<size_t>(l)], defs);
    L.dec[static_cast<size_t>(l)] = di;
  }
  for (int k = 0; k <= cfg.deep_supervision; ++k) {
    const int64_t f = cfg.features_at(k);
    const std::string p = "head" + std::to_string(k);
    HeadIdx hi;
    hi.w = static_cast<int>(defs.size());
    defs.push_back({p + ".w",
                    {cfg.num_classes, f, 1, 1, 1},
                    'w',
                    std::sqrt(2.0 / static_cast<double>(f))});
    hi.b = static_cast<int>(defs.size());
    defs.push_back({p + ".b", {cfg.num_classes}, 'z', 0.0});
    L.head.push_back(hi);
  }
  return L;
}

Layout make_layout(const UNetConfig& cfg) {
  std::vector<ParamDef> defs;
  return make_layout(cfg, defs);
}

ConvGeom stage_entry_geom(const UNetConfig& cfg, int s) {
  ConvGeom g;
  g.kernel = cfg.kernels[static_cast<size_t>(s)];
  g.stride = cfg.strides[static_cast<size_t>(s)];
  g.pad = {g.kernel[0] / 2, g.kernel[1] / 2, g.kernel[2] / 2};
  return g;
}

ConvGeom unit_geom(const std::array<int64_t, 3>& kernel) {
  ConvGeom g;
  g.kernel = kernel;
  g.stride = {1, 1, 1};
  g.pad = {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
  return g;
}

ConvGeom head_geom() {
  ConvGeom g;
  g.kernel = {1, 1, 1};
  g.stride = {1, 1, 1};
  g.pad = {0, 0, 0};
  return g;
}

template <class T>
Tensor<T> block_fwd(const ModelT<T>& M, const BlockIdx& bi, const ConvGeom& g,
                    const Tensor<T>& x, ConvBlockCacheT<T>* cb) {
  const auto& P = M.params;
  Tensor<T> z = conv_forward(x, P[static_cast<size_t>(bi.w)].value,
                             &P[static_cast<size_t>(bi.b)].value, g);
  InstanceNormCache<T> nc;
  Tensor<T> a = instance_norm_forward(z, P[static_cast<size_t>(bi.g)].value,
                                      P[static_cast<size_t>(bi.be)].value,
                                      static_cast<T>(kNormEps), nc);
  Tensor<T> y = leaky_relu(a, static_cast<T>(kSlope));
  if (cb) {
    cb->x = x;
    cb->z = std::move(z);
    cb->norm = std::move(nc);
    cb->a = std::move(a);
    cb->y = y;
  }
  return y;
}

template <class T>
Tensor<T> block_bwd(const ModelT<T>& M, const BlockIdx& bi, const ConvGeom& g,
                    const ConvBlockCacheT<T>& cb, const Tensor<T>& dy,
                    std::vector<Tensor<T>>& grads) {
  const auto& P = M.params;
  Tensor<T> da = leaky_relu_grad(cb.a, dy, static_cast<T>(kSlope));
  Tensor<T> dz, dgm, dbt;
  instance_norm_backward(cb.z, P[static_cast<size_t>(bi.g)].value, cb.norm, da, dz,
                         dgm, dbt);
  grads[static_cast<size_t>(bi.g)] = std::move(dgm);
  grads[static_cast<size_t>(bi.be)] = std::move(dbt);
  Tensor<T> dx, dw, db;
  conv_backward(cb.x, P[static_cast<size_t>(bi.w)].value, g, dz, dx, dw, &db);
  grads[static_cast<size_t>(bi.w)] = std::move(dw);
  grads[static_cast<size_t>(bi.b)] = std::move(db);
  return dx;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const int64_t N = a.shape[0];
  const int64_t Ca = a.shape[1], Cb = b.shape[1];
  const int64_t M = a.shape[2] * a.shape[3] * a.shape[4];
  Tensor<T> out({N, Ca + Cb, a.shape[2], a.shape[3], a.shape[4]});
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(a.ptr() + n * Ca * M, Ca * M, out.ptr() + n * (Ca + Cb) * M);
    std::copy_n(b.ptr() + n * Cb * M, Cb * M, out.ptr() + (n * (Ca + Cb) + Ca) * M);
  }
  return out;
}

template <class T>
void split_channels(const Tensor<T>& dcat, int64_t Ca, Tensor<T>& da, Tensor<T>& db) {
  const int64_t N = dcat.shape[0];
  const int64_t C = dcat.shape[1];
  const int64_t Cb = C - Ca;
  const int64_t M = dcat.shape[2] * dcat.shape[3] * dcat.shape[4];
  da = Tensor<T>({N, Ca, dcat.shape[2], dcat.shape[3], dcat.shape[4]});
  db = Tensor<T>({N, Cb, dcat.shape[2], dcat.shape[3], dcat.shape[4]});
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(dcat.ptr() + n * C * M, Ca * M, da.ptr() + n * Ca * M);
    std::copy_n(dcat.ptr() + (n * C + Ca) * M, Cb * M, db.ptr() + n * Cb * M);
  }
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  kernels::axpy(T(1), src.ptr(), dst.ptr(), src.data.size());
}

std::array<int64_t, 3> level_factor(const UNetConfig& cfg, int level) {
  std::array<int64_t, 3> f{1, 1, 1};
  for (int s = 1; s <= level; ++s)
    for (int a = 0; a < 3; ++a) f[a] *= cfg.strides[static_cast<size_t>(s)][a];
  return f;
}

}  // namespace

UNetConfig UNetConfig::desk_2d(uint64_t seed) {
  UNetConfig c;
  c.id = "desk2d";
  c.dims = 2;
  c.base_features = 8;
  c.stages = 3;
  c.strides = {{1, 1, 1}, {1, 2, 2}, {1, 2, 2}};
  c.kernels = {{1, 3, 3}, {1, 3, 3}, {1, 3, 3}};
  c.patch = {1, 32, 32};
  c.batch_size = 4;
  c.deep_supervision = 1;
  c.seed = seed;
  return c;
}

UNetConfig UNetConfig::desk_3d(uint64_t seed) {
  UNetConfig c;
  c.id = "desk3d";
  c.dims = 3;
  c.base_features = 8;
  c.stages = 3;
  c.strides = {{1, 1, 1}, {2, 2, 2}, {2, 2, 2}};
  c.kernels = {{3, 3, 3}, {3, 3, 3}, {3, 3, 3}};
  c.patch = {32, 32, 32};
  c.batch_size = 2;
  c.deep_supervision = 1;
  c.seed = seed;
  return c;
}

UNetConfig UNetConfig::gradcheck_2d(uint64_t seed) {
  UNetConfig c = desk_2d(seed);
  c.id = "gc2d";
  c.base_features = 4;
  c.patch = {1, 16, 16};
  c.batch_size = 1;
  c.deep_supervision = 2;  // exercises the bottleneck head
  return c;
}

UNetConfig UNetConfig::gradcheck_3d(uint64_t seed) {
  UNetConfig c;
  c.id = "gc3d";
  c.dims = 3;
  c.base_features = 4;
  c.stages = 2;
  c.strides = {{1, 1, 1}, {2, 2, 2}};
  c.kernels = {{3, 3, 3}, {3, 3, 3}};
  c.patch = {8, 8, 8};
  c.batch_size = 1;
  c.deep_supervision = 1;
  c.seed = seed;
  return c;
}

UNetConfig UNetConfig::full_3d(uint64_t seed) {
  UNetConfig c;
  c.id = "full3d";
  c.dims = 3;
  c.base_features = 32;
  c.stages = 6;
  c.strides = {{1, 1, 1}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {2, 2, 2}};
  c.kernels.assign(6, {3, 3, 3});
  c.patch = {128, 128, 128};
  c.batch_size = 2;
  c.deep_supervision = 2;
  c.seed = seed;
  return c;
}

void UNetConfig::validate() const {
  if (id.empty()) throw DataError("unet config: empty id");
  if (dims != 2 && dims != 3) throw DataError("unet config: dims must be 2 or 3");
  if (base_features < 1) throw DataError("unet config: base_features must be positive");
  if (stages < 2) throw DataError("unet config: need at least 2 stages");
  if (strides.size() != static_cast<size_t>(stages) ||
      kernels.size() != static_cast<size_t>(stages))
    throw DataError("unet config: strides/kernels must list one entry per stage");
  if (strides[0] != std::array<int64_t, 3>{1, 1, 1})
    throw DataError("unet config: stage 0 must not downsample");
  for (const auto& st : strides)
    for (int a = 0; a < 3; ++a)
      if (st[a] < 1) throw DataError("unet config: strides must be positive");
  for (const auto& k : kernels)
    for (int a = 0; a < 3; ++a)
      if (k[a] < 1 || k[a] % 2 == 0)
        throw DataError("unet config: kernels must be odd and positive");
  if (dims == 2) {
    if (patch[0] != 1) throw DataError("unet config: 2D patch must have depth 1");
    for (const auto& st : strides)
      if (st[0] != 1) throw DataError("unet config: 2D strides must keep depth 1");
    for (const auto& k : kernels)
      if (k[0] != 1) throw DataError("unet config: 2D kernels must have depth 1");
  }
  if (deep_supervision < 0 || deep_supervision > stages - 1)
    throw DataError("unet config: deep_supervision must lie in [0, stages-1]");
  if (num_classes < 2 || num_classes > 16)
    throw DataError("unet config: num_classes must lie in [2, 16]");
  if (batch_size < 1) throw DataError("unet config: batch_size must be positive");
  std::array<int64_t, 3> cum{1, 1, 1};
  for (int s = 1; s < stages; ++s)
    for (int a = 0; a < 3; ++a) cum[a] *= strides[static_cast<size_t>(s)][a];
  for (int a = 0; a < 3; ++a) {
    if (patch[a] < 1) throw DataError("unet config: patch dims must be positive");
    if (patch[a] % cum[a] != 0)
      throw DataError("unet config: patch not divisible by the stride product");
  }
}

int64_t UNetConfig::features_at(int stage) const {
  const int64_t f = base_features << stage;
  return std::min<int64_t>(f, 320);
}

std::array<int64_t, 3> UNetConfig::level_dims(int level) const {
  const auto f = level_factor(*this, level);
  return {patch[0] / f[0], patch[1] / f[1], patch[2] / f[2]};
}

std::string UNetConfig::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["dims"] = dims;
  j["base_features"] = base_features;
  j["stages"] = stages;
  j["strides"] = strides;
  j["kernels"] = kernels;
  j["patch"] = patch;
  j["batch_size"] = batch_size;
  j["deep_supervision"] = deep_supervision;
  j["num_classes"] = num_classes;
  j["seed"] = seed;
  return j.dump();
}

UNetConfig UNetConfig::from_json(const std::string& text) {
  UNetConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    j.at("id").get_to(c.id);
    j.at("dims").get_to(c.dims);
    j.at("base_features").get_to(c.base_features);
    j.at("stages").get_to(c.stages);
    j.at("strides").get_to(c.strides);
    j.at("kernels").get_to(c.kernels);
    j.at("patch").get_to(c.patch);
    j.at("batch_size").get_to(c.batch_size);
    j.at("deep_supervision").get_to(c.deep_supervision);
    j.at("num_classes").get_to(c.num_classes);
    j.at("seed").get_to(c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("unet config: invalid JSON: ") + e.what());
  }
  c.validate();
  return c;
}

void LRSchedule::validate() const {
  if (!(initial_lr > 0)) throw DataError("lr schedule: initial_lr must be positive");
  if (!(exponent > 0) || exponent > 1)
    throw DataError("lr schedule: exponent must lie in (0, 1]");
  if (max_epochs < 1) throw DataError("lr schedule: max_epochs must be positive");
}

double poly_lr(const LRSchedule& s, int64_t epoch) {
  s.validate();
  if (epoch < 0 || epoch > s.max_epochs)
    throw DataError("poly_lr: epoch outside [0, max_epochs]");
  const double frac = 1.0 - static_cast<double>(epoch) / static_cast<double>(s.max_epochs);
  return s.initial_lr * std::pow(frac, s.exponent);
}

template <class T>
ModelT<T> build_model(const UNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamDef> defs;
  make_layout(cfg, defs);

  ModelT<T> model;
  model.cfg = cfg;
  std::mt19937_64 eng = seeded_engine(cfg.seed, kInitStream);
  for (const auto& d : defs) {
    Tensor<double> t(d.shape);
    if (d.kind == 'w')
      t.fill_gaussian(eng, d.init_sd);
    else if (d.kind == 'o')
      t.fill(1.0);
    model.params.push_back({d.name, t.cast<T>()});
    model.m.emplace_back(d.shape);
    model.v.emplace_back(d.shape);
  }
  model.rng = seeded_engine(cfg.seed, kSampleStream);
  return model;
}

template <class T>
std::vector<Tensor<T>> unet_forward(const ModelT<T>& model, const Tensor<T>& x,
                                    ForwardCacheT<T>* cache) {
  const UNetConfig& cfg = model.cfg;
  if (x.shape.size() != 5) throw DataError("forward: expected a 5-axis input");
  if (x.shape[1] != kInChannels)
    throw DataError("forward: expected " + std::to_string(kInChannels) + " input channels");
  if (x.shape[2] != cfg.patch[0] || x.shape[3] != cfg.patch[1] ||
      x.shape[4] != cfg.patch[2])
    throw DataError("forward: input spatial dims do not match the configured patch");

  const Layout L = make_layout(cfg);
  const int S = cfg.stages;
  const int ds = cfg.deep_supervision;
  if (cache) {
    cache->enc.assign(static_cast<size_t>(2 * S), {});
    cache->dec.assign(static_cast<size_t>(2 * (S - 1)), {});
    cache->up_in.assign(static_cast<size_t>(S - 1), {});
    cache->feat.assign(static_cast<size_t>(ds + 1), {});
  }

  std::vector<Tensor<T>> enc_y(static_cast<size_t>(S));
  for (int s = 0; s < S; ++s) {
    const Tensor<T>& in = s == 0 ? x : enc_y[static_cast<size_t>(s - 1)];
    Tensor<T> y1 = block_fwd(model, L.enc[static_cast<size_t>(s)].c1,
                             stage_entry_geom(cfg, s), in,
                             cache ? &cache->enc[static_cast<size_t>(2 * s)] : nullptr);
    enc_y[static_cast<size_t>(s)] =
        block_fwd(model, L.enc[static_cast<size_t>(s)].c2,
                  unit_geom(cfg.kernels[static_cast<size_t>(s)]), y1,
                  cache ? &cache->enc[static_cast<size_t>(2 * s + 1)] : nullptr);
  }

  std::vector<Tensor<T>> dec_y(static_cast<size_t>(S - 1));
  for (int l = S - 2; l >= 0; --l) {
    const Tensor<T>& below =
        l == S - 2 ? enc_y[static_cast<size_t>(S - 1)] : dec_y[static_cast<size_t>(l + 1)];
    if (cache) cache->up_in[static_cast<size_t>(l)] = below;
    const auto& di = L.dec[static_cast<size_t>(l)];
    Tensor<T> up = tconv_forward(below, model.params[static_cast<size_t>(di.up)].value,
                                 cfg.strides[static_cast<size_t>(l + 1)]);
    Tensor<T> cat = concat_channels(up, enc_y[static_cast<size_t>(l)]);
    Tensor<T> y1 = block_fwd(model, di.c1, unit_geom(cfg.kernels[static_cast<size_t>(l)]),
                             cat, cache ? &cache->dec[static_cast<size_t>(2 * l)] : nullptr);
    dec_y[static_cast<size_t>(l)] =
        block_fwd(model, di.c2, unit_geom(cfg.kernels[static_cast<size_t>(l)]), y1,
                  cache ? &cache->dec[static_cast<size_t>(2 * l + 1)] : nullptr);
  }

  std::vector<Tensor<T>> logits(static_cast<size_t>(ds + 1));
  for (int k = 0; k <= ds; ++k) {
    const Tensor<T>& feat =
        k <= S - 2 ? dec_y[static_cast<size_t>(k)] : enc_y[static_cast<size_t>(S - 1)];
    if (cache) cache->feat[static_cast<size_t>(k)] = feat;
    const auto& hi = L.head[static_cast<size_t>(k)];
    logits[static_cast<size_t>(k)] =
        conv_forward(feat, model.params[static_cast<size_t>(hi.w)].value,
                     &model.params[static_cast<size_t>(hi.b)].value, head_geom());
  }
  return logits;
}

template <class T>
std::vector<Tensor<T>> unet_backward(const ModelT<T>& model,
                                     const ForwardCacheT<T>& cache,
                                     const std::vector<Tensor<T>>& dlogits) {
  const UNetConfig& cfg = model.cfg;
  const Layout L = make_layout(cfg);
  const int S = cfg.stages;
  const int ds = cfg.deep_supervision;
  if (dlogits.size() != static_cast<size_t>(ds + 1))
    throw DataError("backward: one upstream gradient per supervised level expected");

  std::vector<Tensor<T>> grads(model.params.size());

  std::vector<Tensor<T>> d_dec(static_cast<size_t>(S - 1));
  for (int l = 0; l <= S - 2; ++l)
    d_dec[static_cast<size_t>(l)] = Tensor<T>(cache.dec[static_cast<size_t>(2 * l + 1)].y.shape);
  Tensor<T> d_bot(cache.enc[static_cast<size_t>(2 * (S - 1) + 1)].y.shape);

  for (int k = 0; k <= ds; ++k) {
    const auto& hi = L.head[static_cast<size_t>(k)];
    Tensor<T> dx, dw, db;
    conv_backward(cache.feat[static_cast<size_t>(k)],
                  model.params[static_cast<size_t>(hi.w)].value, head_geom(),
                  dlogits[static_cast<size_t>(k)], dx, dw, &db);
    grads[static_cast<size_t>(hi.w)] = std::move(dw);
    grads[static_cast<size_t>(hi.b)] = std::move(db);
    if (k <= S - 2)
      add_into(d_dec[static_cast<size_t>(k)], dx);
    else
      add_into(d_bot, dx);
  }

  std::vector<Tensor<T>> d_enc(static_cast<size_t>(S));
  for (int s = 0; s < S; ++s)
    d_enc[static_cast<size_t>(s)] = Tensor<T>(cache.enc[static_cast<size_t>(2 * s + 1)].y.shape);

  // Full-resolution level first: its tconv gradient feeds the level above.
  for (int l = 0; l <= S - 2; ++l) {
    const auto& di = L.dec[static_cast<size_t>(l)];
    const auto geom = unit_geom(cfg.kernels[static_cast<size_t>(l)]);
    Tensor<T> dy1 = block_bwd(model, di.c2, geom,
                              cache.dec[static_cast<size_t>(2 * l + 1)],
                              d_dec[static_cast<size_t>(l)], grads);
    Tensor<T> dcat = block_bwd(model, di.c1, geom,
                               cache.dec[static_cast<size_t>(2 * l)], dy1, grads);
    Tensor<T> d_up, d_skip;
    split_channels(dcat, cfg.features_at(l), d_up, d_skip);
    Tensor<T> d_src, dwu;
    tconv_backward(cache.up_in[static_cast<size_t>(l)],
                   model.params[static_cast<size_t>(di.up)].value,
                   cfg.strides[static_cast<size_t>(l + 1)], d_up, d_src, dwu);
    grads[static_cast<size_t>(di.up)] = std::move(dwu);
    if (l == S - 2)
      add_into(d_bot, d_src);
    else
      add_into(d_dec[static_cast<size_t>(l + 1)], d_src);
    add_into(d_enc[static_cast<size_t>(l)], d_skip);
  }

  for (int s = S - 1; s >= 0; --s) {
    const Tensor<T>& dy = s == S - 1 ? d_bot : d_enc[static_cast<size_t>(s)];
    const auto& si = L.enc[static_cast<size_t>(s)];
    Tensor<T> dy1 = block_bwd(model, si.c2, unit_geom(cfg.kernels[static_cast<size_t>(s)]),
                              cache.enc[static_cast<size_t>(2 * s + 1)], dy, grads);
    Tensor<T> dx = block_bwd(model, si.c1, stage_entry_geom(cfg, s),
                             cache.enc[static_cast<size_t>(2 * s)], dy1, grads);
    if (s > 0) add_into(d_enc[static_cast<size_t>(s - 1)], dx);
  }
  return grads;
}

template <class T>
LossResult<T> dice_ce_loss(const UNetConfig& cfg, const std::vector<Tensor<T>>& logits,
                           const Tensor<uint8_t>& target) {
  const int ds = cfg.deep_supervision;
  if (logits.size() != static_cast<size_t>(ds + 1))
    throw DataError("loss: one logit tensor per supervised level expected");
  const int64_t C = cfg.num_classes;
  const int64_t B = logits[0].shape[0];
  if (target.shape.size() != 4 || target.shape[0] != B ||
      target.shape[1] != logits[0].shape[2] || target.shape[2] != logits[0].shape[3] ||
      target.shape[3] != logits[0].shape[4])
    throw DataError("loss: target must be (batch, depth, height, width) at full resolution");
  for (uint8_t c : target.data)
    if (c >= C) throw DataError("loss: invalid label code " + std::to_string(c));

  // Level weights halve with depth and are normalized to sum 1.
  std::vector<double> w(static_cast<size_t>(ds + 1));
  double wsum = 0;
  for (int k = 0; k <= ds; ++k) wsum += std::pow(0.5, k);
  for (int k = 0; k <= ds; ++k) w[static_cast<size_t>(k)] = std::pow(0.5, k) / wsum;

  LossResult<T> res;
  res.dlogits.resize(static_cast<size_t>(ds + 1));
  const int64_t fg_lo = 1;  // classes 1..C-1 enter the soft Dice

  for (int k = 0; k <= ds; ++k) {
    const Tensor<T>& z = logits[static_cast<size_t>(k)];
    const auto f = level_factor(cfg, k);
    const auto ld = cfg.level_dims(k);
    if (z.shape.size() != 5 || z.shape[0] != B || z.shape[1] != C ||
        z.shape[2] != ld[0] || z.shape[3] != ld[1] || z.shape[4] != ld[2])
      throw DataError("loss: logits at level " + std::to_string(k) +
                      " have unexpected shape");
    const int64_t D = z.shape[2], H = z.shape[3], W = z.shape[4];
    const int64_t M = D * H * W;

    // Stride-aligned nearest-neighbor target for this level.
    std::vector<uint8_t> g(static_cast<size_t>(B * M));
    {
      const int64_t tD = target.shape[1], tH = target.shape[2], tW = target.shape[3];
      size_t i = 0;
      for (int64_t b = 0; b < B; ++b) {
        const uint8_t* tb = target.ptr() + b * tD * tH * tW;
        for (int64_t d = 0; d < D; ++d)
          for (int64_t h = 0; h < H; ++h)
            for (int64_t ww = 0; ww < W; ++ww, ++i)
              g[i] = tb[((d * f[0]) * tH + h * f[1]) * tW + ww * f[2]];
      }
    }

    Tensor<T> p(z.shape);
    std::vector<double> sum_pg(static_cast<size_t>(C), 0.0);
    std::vector<double> sum_p(static_cast<size_t>(C), 0.0);
    std::vector<double> sum_g(static_cast<size_t>(C), 0.0);
    double ce = 0;
    for (int64_t b = 0; b < B; ++b) {
      const T* zb = z.ptr() + b * C * M;
      T* pb = p.ptr() + b * C * M;
      for (int64_t i = 0; i < M; ++i) {
        T zmax = zb[i];
        for (int64_t c = 1; c < C; ++c) zmax = std::max(zmax, zb[c * M + i]);
        double denom = 0;
        for (int64_t c = 0; c < C; ++c)
          denom += std::exp(static_cast<double>(zb[c * M + i] - zmax));
        const uint8_t gc = g[static_cast<size_t>(b * M + i)];
        for (int64_t c = 0; c < C; ++c) {
          const double pc =
              std::exp(static_cast<double>(zb[c * M + i] - zmax)) / denom;
          pb[c * M + i] = static_cast<T>(pc);
          sum_p[static_cast<size_t>(c)] += pc;
          if (c == gc) {
            sum_pg[static_cast<size_t>(c)] += pc;
            sum_g[static_cast<size_t>(c)] += 1.0;
            ce -= std::log(std::max(pc, 1e-300));
          }
        }
      }
    }
    const double inv_bm = 1.0 / static_cast<double>(B * M);
    ce *= inv_bm;

    double dice_sum = 0;
    std::vector<double> num(static_cast<size_t>(C)), den(static_cast<size_t>(C));
    for (int64_t c = fg_lo; c < C; ++c) {
      num[static_cast<size_t>(c)] = 2.0 * sum_pg[static_cast<size_t>(c)] + kDiceEps;
      den[static_cast<size_t>(c)] =
          sum_p[static_cast<size_t>(c)] + sum_g[static_cast<size_t>(c)] + kDiceEps;
      dice_sum += num[static_cast<size_t>(c)] / den[static_cast<size_t>(c)];
    }
    const double n_fg = static_cast<double>(C - fg_lo);
    const double dice_loss = 1.0 - dice_sum / n_fg;

    Tensor<T> dz(z.shape);
    for (int64_t b = 0; b < B; ++b) {
      const T* pb = p.ptr() + b * C * M;
      T* dzb = dz.ptr() + b * C * M;
      for (int64_t i = 0; i < M; ++i) {
        const uint8_t gc = g[static_cast<size_t>(b * M + i)];
        // dL/dp per class: Dice touches foreground classes only, CE is folded
        // in later directly on the logits.
        double a[16];  // num_classes is small
        double adotp = 0;
        for (int64_t c = 0; c < C; ++c) {
          double ac = 0;
          if (c >= fg_lo) {
            const double gci = c == gc ? 1.0 : 0.0;
            ac = -(2.0 * gci * den[static_cast<size_t>(c)] - num[static_cast<size_t>(c)]) /
                 (den[static_cast<size_t>(c)] * den[static_cast<size_t>(c)] * n_fg);
          }
          a[c] = ac;
          adotp += ac * static_cast<double>(pb[c * M + i]);
        }
        for (int64_t c = 0; c < C; ++c) {
          const double pc = static_cast<double>(pb[c * M + i]);
          const double dice_part = pc * (a[c] - adotp);
          const double ce_part = (pc - (c == gc ? 1.0 : 0.0)) * inv_bm;
          dzb[c * M + i] = static_cast<T>(w[static_cast<size_t>(k)] * (dice_part + ce_part));
        }
      }
    }

    res.dice += w[static_cast<size_t>(k)] * dice_loss;
    res.ce += w[static_cast<size_t>(k)] * ce;
    res.dlogits[static_cast<size_t>(k)] = std::move(dz);
  }
  res.total = res.dice + res.ce;
  return res;
}

template <class T>
void adam_step(ModelT<T>& model, const std::vector<Tensor<T>>& grads, double lr) {
  if (grads.size() != model.params.size())
    throw DataError("adam: gradient count does not match parameter count");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape != model.params[i].value.shape)
      throw DataError("adam: gradient shape mismatch at " + model.params[i].name);
    for (const T& g : grads[i].data)
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericalError("non-finite gradient in " + model.params[i].name);
  }
  const int64_t t = model.step + 1;
  const T bc1 = static_cast<T>(1.0 - std::pow(kBeta1, static_cast<double>(t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(kBeta2, static_cast<double>(t)));
  for (size_t i = 0; i < grads.size(); ++i) {
    kernels::adam_step(model.params[i].value.ptr(), model.m[i].ptr(), model.v[i].ptr(),
                       grads[i].ptr(), grads[i].data.size(), static_cast<T>(lr),
                       static_cast<T>(kBeta1), static_cast<T>(kBeta2),
                       static_cast<T>(kAdamEps), bc1, bc2);
  }
  model.step = t;
}

template <class T>
StepStats train_step(ModelT<T>& model, const Tensor<T>& x, const Tensor<uint8_t>& target,
                     double lr) {
  ForwardCacheT<T> cache;
  auto logits = unet_forward(model, x, &cache);
  auto loss = dice_ce_loss(model.cfg, logits, target);
  auto grads = unet_backward(model, cache, loss.dlogits);
  adam_step(model, grads, lr);
  return StepStats{loss.total, loss.dice, loss.ce};
}

Tensor<float> softmax_over_classes(const Tensor<float>& logits) {
  const int64_t N = logits.shape[0], C = logits.shape[1];
  const int64_t M = logits.numel() / (N * C);
  Tensor<float> p(logits.shape);
  for (int64_t n = 0; n < N; ++n) {
    const float* zn = logits.ptr() + n * C * M;
    float* pn = p.ptr() + n * C * M;
    for (int64_t i = 0; i < M; ++i) {
      float zmax = zn[i];
      for (int64_t c = 1; c < C; ++c) zmax = std::max(zmax, zn[c * M + i]);
      double denom = 0;
      for (int64_t c = 0; c < C; ++c) denom += std::exp(static_cast<double>(zn[c * M + i] - zmax));
      for (int64_t c = 0; c < C; ++c)
        pn[c * M + i] =
            static_cast<float>(std::exp(static_cast<double>(zn[c * M + i] - zmax)) / denom);
    }
  }
  return p;
}

#define STYLESEG_UNET_INSTANTIATE(T)                                                   \
  template ModelT<T> build_model<T>(const UNetConfig&);                                \
  template std::vector<Tensor<T>> unet_forward<T>(const ModelT<T>&, const Tensor<T>&,  \
                                                  ForwardCacheT<T>*);                  \
  template std::vector<Tensor<T>> unet_backward<T>(                                    \
      const ModelT<T>&, const ForwardCacheT<T>&, const std::vector<Tensor<T>>&);       \
  template LossResult<T> dice_ce_loss<T>(const UNetConfig&,                            \
                                         const std::vector<Tensor<T>>&,                \
                                         const Tensor<uint8_t>&);                      \
  template void adam_step<T>(ModelT<T>&, const std::vector<Tensor<T>>&, double);       \
  template StepStats train_step<T>(ModelT<T>&, const Tensor<T>&,                       \
                                   const Tensor<uint8_t>&, double);

STYLESEG_UNET_INSTANTIATE(float)
STYLESEG_UNET_INSTANTIATE(double)
#undef STYLESEG_UNET_INSTANTIATE

}  // namespace styleseg::nn
