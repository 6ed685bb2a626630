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

#include "styleseg/kernels.hpp"

#include <cstdlib>

#include "kernels_internal.hpp"

namespace styleseg::kernels {

namespace {

const Backend& scalar_backend() {
  static const Backend table = {
      "scalar",
      &scalar::dot<float>,
      &scalar::dot<double>,
      &scalar::axpy<float>,
      &scalar::axpy<double>,
      &scalar::scale<float>,
      &scalar::scale<double>,
      &scalar::sum<float>,
      &scalar::sum<double>,
      &scalar::sumsq<float>,
      &scalar::sumsq<double>,
      &scalar::vmul<float>,
      &scalar::vmul<double>,
      &scalar::leaky_relu_fwd<float>,
      &scalar::leaky_relu_fwd<double>,
      &scalar::leaky_relu_bwd<float>,
      &scalar::leaky_relu_bwd<double>,
      &scalar::adam_step<float>,
      &scalar::adam_step<double>,
      &scalar::gemm_nn<float>,
      &scalar::gemm_nn<double>,
      &scalar::gemm_nt<float>,
      &scalar::gemm_nt<double>,
      &scalar::gemm_tn<float>,
      &scalar::gemm_tn<double>,
  };
  return table;
}

const Backend& pick_backend() {
#if STYLESEG_HAVE_AVX2
  const char* force = std::getenv("STYLESEG_SCALAR_ONLY");
  const bool forced_scalar = force != nullptr && force[0] == '1';
  if (!forced_scalar && __builtin_cpu_supports("avx2") &&
      __builtin_cpu_supports("fma")) {
    return avx2_backend();
  }
#endif
  return scalar_backend();
}

const Backend& active() {
  static const Backend& b = pick_backend();
  return b;
}

}  // namespace

const char* backend_name() { return active().name; }

float dot(const float* a, const float* b, size_t n) { return active().dot_f(a, b, n); }
double dot(const double* a, const double* b, size_t n) { return active().dot_d(a, b, n); }
void axpy(float alpha, const float* x, float* y, size_t n) { active().axpy_f(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, size_t n) { active().axpy_d(alpha, x, y, n); }
void scale(float* x, float alpha, size_t n) { active().scale_f(x, alpha, n); }
void scale(double* x, double alpha, size_t n) { active().scale_d(x, alpha, n); }
float sum(const float* x, size_t n) { return active().sum_f(x, n); }
double sum(const double* x, size_t n) { return active().sum_d(x, n); }
float sumsq(const float* x, size_t n) { return active().sumsq_f(x, n); }
double sumsq(const double* x, size_t n) { return active().sumsq_d(x, n); }
void vmul(const float* a, const float* b, float* out, size_t n) { active().vmul_f(a, b, out, n); }
void vmul(const double* a, const double* b, double* out, size_t n) { active().vmul_d(a, b, out, n); }
void leaky_relu_fwd(const float* x, float* y, size_t n, float slope) { active().lrelu_fwd_f(x, y, n, slope); }
void leaky_relu_fwd(const double* x, double* y, size_t n, double slope) { active().lrelu_fwd_d(x, y, n, slope); }
void leaky_relu_bwd(const float* x, const float* dy, float* dx, size_t n, float slope) { active().lrelu_bwd_f(x, dy, dx, n, slope); }
void leaky_relu_bwd(const double* x, const double* dy, double* dx, size_t n, double slope) { active().lrelu_bwd_d(x, dy, dx, n, slope); }
void adam_step(float* w, float* m, float* v, const float* g, size_t n,
               float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
  active().adam_f(w, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}
void adam_step(double* w, double* m, double* v, const double* g, size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2) {
  active().adam_d(w, m, v, g, n, lr, beta1, beta2, eps, bc1, bc2);
}
void gemm_nn(const float* A, const float* B, float* C, size_t M, size_t K, size_t N, bool accumulate) {
  active().gemm_nn_f(A, B, C, M, K, N, accumulate);
}
void gemm_nn(const double* A, const double* B, double* C, size_t M, size_t K, size_t N, bool accumulate) {
  active().gemm_nn_d(A, B, C, M, K, N, accumulate);
}
void gemm_nt(const float* A, const float* B, float* C, size_t M, size_t K, size_t N, bool accumulate) {
  active().gemm_nt_f(A, B, C, M, K, N, accumulate);
}
void gemm_nt(const double* A, const double* B, double* C, size_t M, size_t K, size_t N, bool accumulate) {
  active().gemm_nt_d(A, B, C, M, K, N, accumulate);
}
void gemm_tn(const float* A, const float* B, float* C, size_t M, size_t K, size_t N, bool accumulate) {
  active().gemm_tn_f(A, B, C, M, K, N, accumulate);
}
void gemm_tn(const double* A, const double* B, double* C, size_t M, size_t K, size_t N, bool accumulate) {
  active().gemm_tn_d(A, B, C, M, K, N, accumulate);
}

}  // namespace styleseg::kernels
