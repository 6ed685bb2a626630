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

#include <string>

#include "styleseg/unet.hpp"

namespace styleseg {

// Checkpoint layout: "MUNT" magic, u16 format version, u32 length-prefixed
// JSON blob (config, counters, schedule, RNG state), then every parameter
// tensor followed by the Adam m and v tensors as little-endian float32 in
// registry order. Identical state serializes to identical bytes.
void save_checkpoint(const nn::Model& model, const std::string& path);

nn::Model load_checkpoint(const std::string& path);

}  // namespace styleseg
