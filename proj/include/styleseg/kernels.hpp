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

#include <cmath>
#include <cstddef>

namespace styleseg::kernels {

// Scalar reference kernels. These are the semantic ground truth: the SIMD
// variants are equivalence-tested against them, and the 64-bit gradient
// checks run through them unchanged.
//
// GEMM layout is row-major throughout:
//   gemm_nn: C(M,N) = A(M,K) * B(K,N)
//   gemm_nt: C(M,N) = A(M,K) * B(N,K)^T
//   gemm_tn: C(M,N) = A(K,M)^T * B(K,N)
// With accumulate=false C is overwritten, otherwise added to.
namespace scalar {

template <class T>
T dot(const T* a, const T* b, size_t n) {
  T acc = T(0);
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void axpy(T alpha, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(T* x, T alpha, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <class T>
T sum(const T* x, size_t n) {
  T acc = T(0);
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <class T>
T sumsq(const T* x, size_t n) {
  T acc = T(0);
  for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

template <class T>
void vmul(const T* a, const T* b, T* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void leaky_relu_fwd(const T* x, T* y, size_t n, T slope) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

// dx = dy * (x > 0 ? 1 : slope); x is the pre-activation input.
template <class T>
void leaky_relu_bwd(const T* x, const T* dy, T* dx, size_t n, T slope) {
  for (size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : slope * dy[i];
}

// One Adam update over a flat parameter block. bc1/bc2 are the bias
// corrections 1-beta1^t and 1-beta2^t for the step being applied.
template <class T>
void adam_step(T* w, T* m, T* v, const T* g, size_t n, T lr, T beta1, T beta2,
               T eps, T bc1, T bc2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
void gemm_nn(const T* A, const T* B, T* C, size_t M, size_t K, size_t N,
             bool accumulate) {
  if (!accumulate) {
    for (size_t i = 0; i < M * N; ++i) C[i] = T(0);
  }
  for (size_t i = 0; i < M; ++i) {
    for (size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      const T* brow = B + k * N;
      T* crow = C + i * N;
      for (size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

template <class T>
void gemm_nt(const T* A, const T* B, T* C, size_t M, size_t K, size_t N,
             bool accumulate) {
  for (size_t i = 0; i < M; ++i) {
    for (size_t j = 0; j < N; ++j) {
      const T d = dot(A + i * K, B + j * K, K);
      if (accumulate)
        C[i * N + j] += d;
      else
        C[i * N + j] = d;
    }
  }
}

template <class T>
void gemm_tn(const T* A, const T* B, T* C, size_t M, size_t K, size_t N,
             bool accumulate) {
  if (!accumulate) {
    for (size_t i = 0; i < M * N; ++i) C[i] = T(0);
  }
  for (size_t k = 0; k < K; ++k) {
    for (size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      const T* brow = B + k * N;
      T* crow = C + i * N;
      for (size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace scalar

// Name of the backend selected at startup: "avx2" or "scalar".
// STYLESEG_SCALAR_ONLY=1 in the environment forces the scalar table.
const char* backend_name();

float dot(const float* a, const float* b, size_t n);
double dot(const double* a, const double* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
void scale(float* x, float alpha, size_t n);
void scale(double* x, double alpha, size_t n);
float sum(const float* x, size_t n);
double sum(const double* x, size_t n);
float sumsq(const float* x, size_t n);
double sumsq(const double* x, size_t n);
void vmul(const float* a, const float* b, float* out, size_t n);
void vmul(const double* a, const double* b, double* out, size_t n);
void leaky_relu_fwd(const float* x, float* y, size_t n, float slope);
void leaky_relu_fwd(const double* x, double* y, size_t n, double slope);
void leaky_relu_bwd(const float* x, const float* dy, float* dx, size_t n, float slope);
void leaky_relu_bwd(const double* x, const double* dy, double* dx, size_t n, double slope);
void adam_step(float* w, float* m, float* v, const float* g, size_t n,
               float lr, float beta1, float beta2, float eps, float bc1, float bc2);
void adam_step(double* w, double* m, double* v, const double* g, size_t n,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2);
void gemm_nn(const float* A, const float* B, float* C, size_t M, size_t K, size_t N, bool accumulate);
void gemm_nn(const double* A, const double* B, double* C, size_t M, size_t K, size_t N, bool accumulate);
void gemm_nt(const float* A, const float* B, float* C, size_t M, size_t K, size_t N, bool accumulate);
void gemm_nt(const double* A, const double* B, double* C, size_t M, size_t K, size_t N, bool accumulate);
void gemm_tn(const float* A, const float* B, float* C, size_t M, size_t K, size_t N, bool accumulate);
void gemm_tn(const double* A, const double* B, double* C, size_t M, size_t K, size_t N, bool accumulate);

}  // namespace styleseg::kernels
