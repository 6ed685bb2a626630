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

#include "styleseg/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace styleseg {

namespace {

constexpr char kMagic[4] = {'M', 'U', 'N', 'T'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_floats(std::string& out, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  const size_t at = out.size();
  out.resize(at + v.size() * 4);
  std::memcpy(out.data() + at, v.data(), v.size() * 4);
}

uint16_t get_u16(const std::string& s, size_t at) {
  return static_cast<uint16_t>(static_cast<uint8_t>(s[at]) |
                               (static_cast<uint8_t>(s[at + 1]) << 8));
}

uint32_t get_u32(const std::string& s, size_t at) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const nn::Model& model, const std::string& path) {
  nlohmann::json meta;
  meta["config"] = nlohmann::json::parse(model.cfg.to_json());
  meta["step"] = model.step;
  meta["epoch"] = model.epoch;
  meta["pseudo_ema"] = model.pseudo_ema;
  meta["schedule"] = {{"initial_lr", model.sched.initial_lr},
                      {"exponent", model.sched.exponent},
                      {"max_epochs", model.sched.max_epochs}};
  meta["rng"] = engine_state_string(model.rng);
  const std::string blob = meta.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<uint32_t>(blob.size()));
  out += blob;
  for (const auto& p : model.params) put_floats(out, p.value.data);
  for (const auto& t : model.m) put_floats(out, t.data);
  for (const auto& t : model.v) put_floats(out, t.data);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

nn::Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 10 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  if (get_u16(buf, 4) != kVersion)
    throw DataError("checkpoint: unsupported format version in " + path);
  const uint32_t blob_len = get_u32(buf, 6);
  if (buf.size() < 10 + static_cast<size_t>(blob_len))
    throw DataError("checkpoint: truncated metadata in " + path);

  nn::UNetConfig cfg;
  int64_t step = 0, epoch = 0;
  double pseudo_ema = 0.0;
  nn::LRSchedule sched;
  std::string rng_state;
  try {
    const auto meta = nlohmann::json::parse(buf.substr(10, blob_len));
    cfg = nn::UNetConfig::from_json(meta.at("config").dump());
    meta.at("step").get_to(step);
    meta.at("epoch").get_to(epoch);
    meta.at("pseudo_ema").get_to(pseudo_ema);
    meta.at("schedule").at("initial_lr").get_to(sched.initial_lr);
    meta.at("schedule").at("exponent").get_to(sched.exponent);
    meta.at("schedule").at("max_epochs").get_to(sched.max_epochs);
    meta.at("rng").get_to(rng_state);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: invalid metadata: ") + e.what());
  }

  nn::Model model = nn::build_model<float>(cfg);
  model.step = step;
  model.epoch = epoch;
  model.pseudo_ema = pseudo_ema;
  model.sched = sched;
  model.rng = engine_from_state(rng_state);

  const size_t expect = static_cast<size_t>(model.parameter_count()) * 3 * 4;
  const size_t at0 = 10 + static_cast<size_t>(blob_len);
  if (buf.size() - at0 != expect)
    throw DataError("checkpoint: payload size mismatch in " + path);

  size_t at = at0;
  auto read_into = [&](std::vector<float>& dst) {
    std::memcpy(dst.data(), buf.data() + at, dst.size() * 4);
    at += dst.size() * 4;
  };
  for (auto& p : model.params) read_into(p.value.data);
  for (auto& t : model.m) read_into(t.data);
  for (auto& t : model.v) read_into(t.data);

  for (const auto& p : model.params)
    for (float x : p.value.data)
      if (!std::isfinite(x))
        throw DataError("checkpoint: non-finite parameter in " + p.name);
  return model;
}

}  // namespace styleseg
