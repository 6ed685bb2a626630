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
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace styleseg {

// Exit codes shared by the CLI and the error hierarchy.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (files, descriptors, volumes).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: non-finite losses, divergent optimization, degenerate stats.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// One engine per independent random stream; streams derived from (seed, tag)
// so that unrelated pipeline stages never share a sequence.
inline std::mt19937_64 seeded_engine(uint64_t seed, uint64_t stream = 0) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ stream));
}

// Uniform in [0,1). Explicit construction keeps the sequence
// compiler-independent, unlike std::uniform_real_distribution.
inline double uniform_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Unbiased integer draw in [0, n).
inline uint64_t uniform_below(std::mt19937_64& g, uint64_t n) {
  if (n == 0) throw NumericalError("uniform_below: empty range");
  const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                         std::numeric_limits<uint64_t>::max() % n;
  uint64_t x = g();
  while (x >= limit) x = g();
  return x % n;
}

// Box-Muller with fixed two-draw consumption and no cached spare, so the
// engine state alone determines every future sample (checkpoint-friendly).
inline double gaussian(std::mt19937_64& g) {
  const double u1 = (static_cast<double>(g() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(g() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <class T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& g) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(uniform_below(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline std::string engine_state_string(const std::mt19937_64& g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

inline std::mt19937_64 engine_from_state(const std::string& s) {
  std::mt19937_64 g;
  std::istringstream is(s);
  is >> g;
  if (!is) throw DataError("invalid RNG state string");
  return g;
}

}  // namespace styleseg
