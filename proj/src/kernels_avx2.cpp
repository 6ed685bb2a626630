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

// AVX2+FMA variants of the arithmetic kernels. This translation unit is the
// only one compiled with -mavx2 -mfma; it must not be entered unless cpuid
// reported both features (the dispatcher guarantees that).

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "kernels_internal.hpp"

namespace styleseg::kernels {
namespace {

inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum256d(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  lo = _mm_add_sd(lo, shuf);
  return _mm_cvtsd_f64(lo);
}

float dot_f(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  }
  float r = hsum256(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

double dot_d(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  double r = hsum256d(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

void axpy_f(float alpha, const float* x, float* y, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_d(double alpha, const double* x, double* y, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f(float* x, float alpha, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), va));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void scale_d(double* x, double alpha, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

float sum_f(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float r = hsum256(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

double sum_d(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double r = hsum256d(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

float sumsq_f(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc = _mm256_fmadd_ps(v, v, acc);
  }
  float r = hsum256(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

double sumsq_d(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double r = hsum256d(acc);
  for (; i < n; ++i) r += x[i] * x[i];
  return r;
}

void vmul_f(const float* a, const float* b, float* out, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_d(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void lrelu_fwd_f(const float* x, float* y, size_t n, float slope) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 mask = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(v, vs), v, mask));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void lrelu_fwd_d(const double* x, double* y, size_t n, double slope) {
  const __m256d vs = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(v, vs), v, mask));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void lrelu_bwd_f(const float* x, const float* dy, float* dx, size_t n, float slope) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vx = _mm256_loadu_ps(x + i);
    const __m256 vdy = _mm256_loadu_ps(dy + i);
    const __m256 mask = _mm256_cmp_ps(vx, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(dx + i, _mm256_blendv_ps(_mm256_mul_ps(vdy, vs), vdy, mask));
  }
  for (; i < n; ++i) dx[i] = x[i] > 0.0f ? dy[i] : slope * dy[i];
}

void lrelu_bwd_d(const double* x, const double* dy, double* dx, size_t n, double slope) {
  const __m256d vs = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vdy = _mm256_loadu_pd(dy + i);
    const __m256d mask = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx + i, _mm256_blendv_pd(_mm256_mul_pd(vdy, vs), vdy, mask));
  }
  for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : slope * dy[i];
}

void adam_f(float* w, float* m, float* v, const float* g, size_t n, float lr,
            float beta1, float beta2, float eps, float bc1, float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2);
  const __m256 vc1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 vc2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vrb1 = _mm256_set1_ps(1.0f / bc1);
  const __m256 vrb2 = _mm256_set1_ps(1.0f / bc2);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vg = _mm256_loadu_ps(g + i);
    __m256 vm = _mm256_loadu_ps(m + i);
    __m256 vv = _mm256_loadu_ps(v + i);
    vm = _mm256_fmadd_ps(vb1, vm, _mm256_mul_ps(vc1, vg));
    vv = _mm256_fmadd_ps(vb2, vv, _mm256_mul_ps(vc2, _mm256_mul_ps(vg, vg)));
    _mm256_storeu_ps(m + i, vm);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_mul_ps(vm, vrb1);
    const __m256 vhat = _mm256_mul_ps(vv, vrb2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
    const __m256 upd = _mm256_div_ps(_mm256_mul_ps(vlr, mhat), denom);
    _mm256_storeu_ps(w + i, _mm256_sub_ps(_mm256_loadu_ps(w + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mhat = m[i] * (1.0f / bc1);
    const float vhat = v[i] * (1.0f / bc2);
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void adam_d(double* w, double* m, double* v, const double* g, size_t n,
            double lr, double beta1, double beta2, double eps, double bc1,
            double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vc1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d vc2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vrb1 = _mm256_set1_pd(1.0 / bc1);
  const __m256d vrb2 = _mm256_set1_pd(1.0 / bc2);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vm = _mm256_fmadd_pd(vb1, vm, _mm256_mul_pd(vc1, vg));
    vv = _mm256_fmadd_pd(vb2, vv, _mm256_mul_pd(vc2, _mm256_mul_pd(vg, vg)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_mul_pd(vm, vrb1);
    const __m256d vhat = _mm256_mul_pd(vv, vrb2);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom);
    _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = m[i] * (1.0 / bc1);
    const double vhat = v[i] * (1.0 / bc2);
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void gemm_nn_f(const float* A, const float* B, float* C, size_t M, size_t K,
               size_t N, bool accumulate) {
  if (!accumulate) {
    for (size_t i = 0; i < M * N; ++i) C[i] = 0.0f;
  }
  for (size_t i = 0; i < M; ++i) {
    float* crow = C + i * N;
    for (size_t k = 0; k < K; ++k) {
      const float a = A[i * K + k];
      if (a == 0.0f) continue;
      const float* brow = B + k * N;
      const __m256 va = _mm256_set1_ps(a);
      size_t j = 0;
      for (; j + 8 <= N; j += 8) {
        __m256 vc = _mm256_loadu_ps(crow + j);
        vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
        _mm256_storeu_ps(crow + j, vc);
      }
      for (; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

void gemm_nn_d(const double* A, const double* B, double* C, size_t M, size_t K,
               size_t N, bool accumulate) {
  if (!accumulate) {
    for (size_t i = 0; i < M * N; ++i) C[i] = 0.0;
  }
  for (size_t i = 0; i < M; ++i) {
    double* crow = C + i * N;
    for (size_t k = 0; k < K; ++k) {
      const double a = A[i * K + k];
      if (a == 0.0) continue;
      const double* brow = B + k * N;
      const __m256d va = _mm256_set1_pd(a);
      size_t j = 0;
      for (; j + 4 <= N; j += 4) {
        __m256d vc = _mm256_loadu_pd(crow + j);
        vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
        _mm256_storeu_pd(crow + j, vc);
      }
      for (; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

void gemm_nt_f(const float* A, const float* B, float* C, size_t M, size_t K,
               size_t N, bool accumulate) {
  for (size_t i = 0; i < M; ++i) {
    for (size_t j = 0; j < N; ++j) {
      const float d = dot_f(A + i * K, B + j * K, K);
      if (accumulate)
        C[i * N + j] += d;
      else
        C[i * N + j] = d;
    }
  }
}

void gemm_nt_d(const double* A, const double* B, double* C, size_t M, size_t K,
               size_t N, bool accumulate) {
  for (size_t i = 0; i < M; ++i) {
    for (size_t j = 0; j < N; ++j) {
      const double d = dot_d(A + i * K, B + j * K, K);
      if (accumulate)
        C[i * N + j] += d;
      else
        C[i * N + j] = d;
    }
  }
}

void gemm_tn_f(const float* A, const float* B, float* C, size_t M, size_t K,
               size_t N, bool accumulate) {
  if (!accumulate) {
    for (size_t i = 0; i < M * N; ++i) C[i] = 0.0f;
  }
  for (size_t k = 0; k < K; ++k) {
    const float* brow = B + k * N;
    for (size_t i = 0; i < M; ++i) {
      const float a = A[k * M + i];
      if (a == 0.0f) continue;
      float* crow = C + i * N;
      const __m256 va = _mm256_set1_ps(a);
      size_t j = 0;
      for (; j + 8 <= N; j += 8) {
        __m256 vc = _mm256_loadu_ps(crow + j);
        vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
        _mm256_storeu_ps(crow + j, vc);
      }
      for (; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

void gemm_tn_d(const double* A, const double* B, double* C, size_t M, size_t K,
               size_t N, bool accumulate) {
  if (!accumulate) {
    for (size_t i = 0; i < M * N; ++i) C[i] = 0.0;
  }
  for (size_t k = 0; k < K; ++k) {
    const double* brow = B + k * N;
    for (size_t i = 0; i < M; ++i) {
      const double a = A[k * M + i];
      if (a == 0.0) continue;
      double* crow = C + i * N;
      const __m256d va = _mm256_set1_pd(a);
      size_t j = 0;
      for (; j + 4 <= N; j += 4) {
        __m256d vc = _mm256_loadu_pd(crow + j);
        vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
        _mm256_storeu_pd(crow + j, vc);
      }
      for (; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

}  // namespace

const Backend& avx2_backend() {
  static const Backend table = {
      "avx2",
      &dot_f, &dot_d,
      &axpy_f, &axpy_d,
      &scale_f, &scale_d,
      &sum_f, &sum_d,
      &sumsq_f, &sumsq_d,
      &vmul_f, &vmul_d,
      &lrelu_fwd_f, &lrelu_fwd_d,
      &lrelu_bwd_f, &lrelu_bwd_d,
      &adam_f, &adam_d,
      &gemm_nn_f, &gemm_nn_d,
      &gemm_nt_f, &gemm_nt_d,
      &gemm_tn_f, &gemm_tn_d,
  };
  return table;
}

}  // namespace styleseg::kernels
