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

#include <cstddef>

namespace styleseg::kernels {

// Function-pointer table filled by one backend at startup.
struct Backend {
  const char* name;

  float (*dot_f)(const float*, const float*, size_t);
  double (*dot_d)(const double*, const double*, size_t);
  void (*axpy_f)(float, const float*, float*, size_t);
  void (*axpy_d)(double, const double*, double*, size_t);
  void (*scale_f)(float*, float, size_t);
  void (*scale_d)(double*, double, size_t);
  float (*sum_f)(const float*, size_t);
  double (*sum_d)(const double*, size_t);
  float (*sumsq_f)(const float*, size_t);
  double (*sumsq_d)(const double*, size_t);
  void (*vmul_f)(const float*, const float*, float*, size_t);
  void (*vmul_d)(const double*, const double*, double*, size_t);
  void (*lrelu_fwd_f)(const float*, float*, size_t, float);
  void (*lrelu_fwd_d)(const double*, double*, size_t, double);
  void (*lrelu_bwd_f)(const float*, const float*, float*, size_t, float);
  void (*lrelu_bwd_d)(const double*, const double*, double*, size_t, double);
  void (*adam_f)(float*, float*, float*, const float*, size_t, float, float, float, float, float, float);
  void (*adam_d)(double*, double*, double*, const double*, size_t, double, double, double, double, double, double);
  void (*gemm_nn_f)(const float*, const float*, float*, size_t, size_t, size_t, bool);
  void (*gemm_nn_d)(const double*, const double*, double*, size_t, size_t, size_t, bool);
  void (*gemm_nt_f)(const float*, const float*, float*, size_t, size_t, size_t, bool);
  void (*gemm_nt_d)(const double*, const double*, double*, size_t, size_t, size_t, bool);
  void (*gemm_tn_f)(const float*, const float*, float*, size_t, size_t, size_t, bool);
  void (*gemm_tn_d)(const double*, const double*, double*, size_t, size_t, size_t, bool);
};

#if STYLESEG_HAVE_AVX2
const Backend& avx2_backend();
#endif

}  // namespace styleseg::kernels
