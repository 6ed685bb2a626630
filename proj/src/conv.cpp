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

#include "styleseg/conv.hpp"

#include <cmath>
#include <cstring>

#include "styleseg/kernels.hpp"

namespace styleseg::nn {

namespace {

int64_t prod3(const std::array<int64_t, 3>& a) { return a[0] * a[1] * a[2]; }

void check_5d(const std::vector<int64_t>& shape, const char* what) {
  if (shape.size() != 5) throw DataError(std::string(what) + ": expected a 5-axis tensor");
}

}  // namespace

std::array<int64_t, 3> conv_out_dims(const std::array<int64_t, 3>& in,
                                     const ConvGeom& geom) {
  std::array<int64_t, 3> out;
  for (int a = 0; a < 3; ++a) {
    const int64_t span = in[a] + 2 * geom.pad[a] - geom.kernel[a];
    if (span < 0)
      throw DataError("conv: input extent incompatible with kernel/stride/pad");
    // Floor division: trailing input that does not fit another stride step is
    // simply never read (and gets zero gradient), the usual framework rule.
    out[a] = span / geom.stride[a] + 1;
  }
  return out;
}

template <class T>
void im2col(const T* x, int64_t channels, const std::array<int64_t, 3>& in,
            const ConvGeom& geom, T* col) {
  const auto out = conv_out_dims(in, geom);
  const int64_t M = prod3(out);
  const int64_t in_hw = in[1] * in[2];
  int64_t row = 0;
  for (int64_t c = 0; c < channels; ++c) {
    const T* xc = x + c * in[0] * in_hw;
    for (int64_t kd = 0; kd < geom.kernel[0]; ++kd)
      for (int64_t kh = 0; kh < geom.kernel[1]; ++kh)
        for (int64_t kw = 0; kw < geom.kernel[2]; ++kw, ++row) {
          T* dst = col + row * M;
          for (int64_t od = 0; od < out[0]; ++od) {
            const int64_t id = od * geom.stride[0] - geom.pad[0] + kd;
            const bool dok = id >= 0 && id < in[0];
            for (int64_t oh = 0; oh < out[1]; ++oh) {
              const int64_t ih = oh * geom.stride[1] - geom.pad[1] + kh;
              const bool hok = dok && ih >= 0 && ih < in[1];
              const T* src = xc + (id * in[1] + ih) * in[2];
              for (int64_t ow = 0; ow < out[2]; ++ow, ++dst) {
                const int64_t iw = ow * geom.stride[2] - geom.pad[2] + kw;
                *dst = (hok && iw >= 0 && iw < in[2]) ? src[iw] : T(0);
              }
            }
          }
        }
  }
}

template <class T>
void col2im(const T* col, int64_t channels, const std::array<int64_t, 3>& in,
            const ConvGeom& geom, T* x) {
  const auto out = conv_out_dims(in, geom);
  const int64_t M = prod3(out);
  const int64_t in_hw = in[1] * in[2];
  std::memset(x, 0, sizeof(T) * static_cast<size_t>(channels * in[0] * in_hw));
  int64_t row = 0;
  for (int64_t c = 0; c < channels; ++c) {
    T* xc = x + c * in[0] * in_hw;
    for (int64_t kd = 0; kd < geom.kernel[0]; ++kd)
      for (int64_t kh = 0; kh < geom.kernel[1]; ++kh)
        for (int64_t kw = 0; kw < geom.kernel[2]; ++kw, ++row) {
          const T* src = col + row * M;
          for (int64_t od = 0; od < out[0]; ++od) {
            const int64_t id = od * geom.stride[0] - geom.pad[0] + kd;
            const bool dok = id >= 0 && id < in[0];
            for (int64_t oh = 0; oh < out[1]; ++oh) {
              const int64_t ih = oh * geom.stride[1] - geom.pad[1] + kh;
              const bool hok = dok && ih >= 0 && ih < in[1];
              T* dst = xc + (id * in[1] + ih) * in[2];
              for (int64_t ow = 0; ow < out[2]; ++ow, ++src) {
                const int64_t iw = ow * geom.stride[2] - geom.pad[2] + kw;
                if (hok && iw >= 0 && iw < in[2]) dst[iw] += *src;
              }
            }
          }
        }
  }
}

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                       const ConvGeom& geom) {
  check_5d(x.shape, "conv_forward x");
  check_5d(w.shape, "conv_forward w");
  const int64_t N = x.shape[0], C = x.shape[1];
  const int64_t F = w.shape[0];
  if (w.shape[1] != C) throw DataError("conv_forward: channel mismatch");
  if (w.shape[2] != geom.kernel[0] || w.shape[3] != geom.kernel[1] ||
      w.shape[4] != geom.kernel[2])
    throw DataError("conv_forward: kernel shape mismatch");
  const std::array<int64_t, 3> in{x.shape[2], x.shape[3], x.shape[4]};
  const auto out = conv_out_dims(in, geom);
  const int64_t M = prod3(out);
  const int64_t CK = C * prod3(geom.kernel);

  Tensor<T> y({N, F, out[0], out[1], out[2]});
  std::vector<T> col(static_cast<size_t>(CK * M));
  const int64_t x_stride = C * prod3(in);
  for (int64_t n = 0; n < N; ++n) {
    im2col(x.ptr() + n * x_stride, C, in, geom, col.data());
    T* yn = y.ptr() + n * F * M;
    kernels::gemm_nn(w.ptr(), col.data(), yn, static_cast<size_t>(F),
                     static_cast<size_t>(CK), static_cast<size_t>(M), false);
    if (bias) {
      for (int64_t f = 0; f < F; ++f) {
        const T b = bias->data[static_cast<size_t>(f)];
        T* row = yn + f * M;
        for (int64_t m = 0; m < M; ++m) row[m] += b;
      }
    }
  }
  return y;
}

template <class T>
void conv_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvGeom& geom,
                   const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dw, Tensor<T>* db) {
  const int64_t N = x.shape[0], C = x.shape[1];
  const int64_t F = w.shape[0];
  const std::array<int64_t, 3> in{x.shape[2], x.shape[3], x.shape[4]};
  const auto out = conv_out_dims(in, geom);
  const int64_t M = prod3(out);
  const int64_t CK = C * prod3(geom.kernel);

  dx = Tensor<T>(x.shape);
  dw = Tensor<T>(w.shape);
  if (db) *db = Tensor<T>({F});

  std::vector<T> col(static_cast<size_t>(CK * M));
  std::vector<T> dcol(static_cast<size_t>(CK * M));
  const int64_t x_stride = C * prod3(in);
  for (int64_t n = 0; n < N; ++n) {
    const T* dyn = dy.ptr() + n * F * M;
    im2col(x.ptr() + n * x_stride, C, in, geom, col.data());
    // dW(F,CK) += dY(F,M) col(CK,M)^T
    kernels::gemm_nt(dyn, col.data(), dw.ptr(), static_cast<size_t>(F),
                     static_cast<size_t>(M), static_cast<size_t>(CK), true);
    // dcol(CK,M) = W(F,CK)^T dY(F,M)
    kernels::gemm_tn(w.ptr(), dyn, dcol.data(), static_cast<size_t>(CK),
                     static_cast<size_t>(F), static_cast<size_t>(M), false);
    col2im(dcol.data(), C, in, geom, dx.ptr() + n * x_stride);
    if (db) {
      for (int64_t f = 0; f < F; ++f)
        db->data[static_cast<size_t>(f)] += kernels::sum(dyn + f * M, static_cast<size_t>(M));
    }
  }
}

template <class T>
Tensor<T> tconv_forward(const Tensor<T>& x, const Tensor<T>& w,
                        const std::array<int64_t, 3>& kernel) {
  check_5d(x.shape, "tconv_forward x");
  check_5d(w.shape, "tconv_forward w");
  const int64_t N = x.shape[0], C = x.shape[1];
  if (w.shape[0] != C) throw DataError("tconv_forward: channel mismatch");
  const int64_t F = w.shape[1];
  const std::array<int64_t, 3> in{x.shape[2], x.shape[3], x.shape[4]};
  const std::array<int64_t, 3> outd{in[0] * kernel[0], in[1] * kernel[1],
                                    in[2] * kernel[2]};
  const int64_t M = prod3(in);
  const int64_t FK = F * prod3(kernel);

  ConvGeom geom;
  geom.kernel = kernel;
  geom.stride = kernel;
  geom.pad = {0, 0, 0};

  Tensor<T> y({N, F, outd[0], outd[1], outd[2]});
  std::vector<T> col(static_cast<size_t>(FK * M));
  const int64_t x_stride = C * M;
  const int64_t y_stride = F * prod3(outd);
  for (int64_t n = 0; n < N; ++n) {
    // col(FK, M) = W(C, FK)^T X(C, M)
    kernels::gemm_tn(w.ptr(), x.ptr() + n * x_stride, col.data(),
                     static_cast<size_t>(FK), static_cast<size_t>(C),
                     static_cast<size_t>(M), false);
    col2im(col.data(), F, outd, geom, y.ptr() + n * y_stride);
  }
  return y;
}

template <class T>
void tconv_backward(const Tensor<T>& x, const Tensor<T>& w,
                    const std::array<int64_t, 3>& kernel, const Tensor<T>& dy,
                    Tensor<T>& dx, Tensor<T>& dw) {
  const int64_t N = x.shape[0], C = x.shape[1];
  const int64_t F = w.shape[1];
  const std::array<int64_t, 3> in{x.shape[2], x.shape[3], x.shape[4]};
  const std::array<int64_t, 3> outd{in[0] * kernel[0], in[1] * kernel[1],
                                    in[2] * kernel[2]};
  const int64_t M = prod3(in);
  const int64_t FK = F * prod3(kernel);

  ConvGeom geom;
  geom.kernel = kernel;
  geom.stride = kernel;
  geom.pad = {0, 0, 0};

  dx = Tensor<T>(x.shape);
  dw = Tensor<T>(w.shape);
  std::vector<T> col(static_cast<size_t>(FK * M));
  const int64_t x_stride = C * M;
  const int64_t y_stride = F * prod3(outd);
  for (int64_t n = 0; n < N; ++n) {
    im2col(dy.ptr() + n * y_stride, F, outd, geom, col.data());
    // dX(C, M) = W(C, FK) col(FK, M)
    kernels::gemm_nn(w.ptr(), col.data(), dx.ptr() + n * x_stride,
                     static_cast<size_t>(C), static_cast<size_t>(FK),
                     static_cast<size_t>(M), false);
    // dW(C, FK) += X(C, M) col(FK, M)^T
    kernels::gemm_nt(x.ptr() + n * x_stride, col.data(), dw.ptr(),
                     static_cast<size_t>(C), static_cast<size_t>(M),
                     static_cast<size_t>(FK), true);
  }
}

template <class T>
Tensor<T> avgpool_forward(const Tensor<T>& x, const std::array<int64_t, 3>& window) {
  check_5d(x.shape, "avgpool x");
  const int64_t N = x.shape[0], C = x.shape[1];
  const std::array<int64_t, 3> in{x.shape[2], x.shape[3], x.shape[4]};
  const std::array<int64_t, 3> out{in[0] / window[0], in[1] / window[1],
                                   in[2] / window[2]};
  for (int a = 0; a < 3; ++a)
    if (out[a] < 1) throw DataError("avgpool: input smaller than window");

  Tensor<T> y({N, C, out[0], out[1], out[2]});
  const T inv = T(1) / static_cast<T>(prod3(window));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* xp = x.ptr() + nc * prod3(in);
    T* yp = y.ptr() + nc * prod3(out);
    for (int64_t od = 0; od < out[0]; ++od)
      for (int64_t oh = 0; oh < out[1]; ++oh)
        for (int64_t ow = 0; ow < out[2]; ++ow) {
          T acc = T(0);
          for (int64_t kd = 0; kd < window[0]; ++kd)
            for (int64_t kh = 0; kh < window[1]; ++kh)
              for (int64_t kw = 0; kw < window[2]; ++kw)
                acc += xp[((od * window[0] + kd) * in[1] + oh * window[1] + kh) * in[2] +
                          ow * window[2] + kw];
          yp[(od * out[1] + oh) * out[2] + ow] = acc * inv;
        }
  }
  return y;
}

template <class T>
Tensor<T> avgpool_backward(const std::vector<int64_t>& x_shape,
                           const std::array<int64_t, 3>& window, const Tensor<T>& dy) {
  const int64_t N = x_shape[0], C = x_shape[1];
  const std::array<int64_t, 3> in{x_shape[2], x_shape[3], x_shape[4]};
  const std::array<int64_t, 3> out{in[0] / window[0], in[1] / window[1],
                                   in[2] / window[2]};
  Tensor<T> dx(x_shape);
  const T inv = T(1) / static_cast<T>(prod3(window));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* dyp = dy.ptr() + nc * prod3(out);
    T* dxp = dx.ptr() + nc * prod3(in);
    for (int64_t od = 0; od < out[0]; ++od)
      for (int64_t oh = 0; oh < out[1]; ++oh)
        for (int64_t ow = 0; ow < out[2]; ++ow) {
          const T g = dyp[(od * out[1] + oh) * out[2] + ow] * inv;
          for (int64_t kd = 0; kd < window[0]; ++kd)
            for (int64_t kh = 0; kh < window[1]; ++kh)
              for (int64_t kw = 0; kw < window[2]; ++kw)
                dxp[((od * window[0] + kd) * in[1] + oh * window[1] + kh) * in[2] +
                    ow * window[2] + kw] += g;
        }
  }
  return dx;
}

template <class T>
Tensor<T> instance_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                const Tensor<T>& beta, T eps,
                                InstanceNormCache<T>& cache) {
  check_5d(x.shape, "instance_norm x");
  const int64_t N = x.shape[0], C = x.shape[1];
  const int64_t M = x.shape[2] * x.shape[3] * x.shape[4];
  if (gamma.numel() != C || beta.numel() != C)
    throw DataError("instance_norm: affine parameter size mismatch");

  cache.mean.assign(static_cast<size_t>(N * C), T(0));
  cache.invstd.assign(static_cast<size_t>(N * C), T(0));
  Tensor<T> y(x.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x.ptr() + (n * C + c) * M;
      T* yp = y.ptr() + (n * C + c) * M;
      const T mean = kernels::sum(xp, static_cast<size_t>(M)) / static_cast<T>(M);
      T var = T(0);
      for (int64_t m = 0; m < M; ++m) {
        const T d = xp[m] - mean;
        var += d * d;
      }
      var /= static_cast<T>(M);
      const T invstd = T(1) / std::sqrt(var + eps);
      cache.mean[static_cast<size_t>(n * C + c)] = mean;
      cache.invstd[static_cast<size_t>(n * C + c)] = invstd;
      const T g = gamma.data[static_cast<size_t>(c)];
      const T b = beta.data[static_cast<size_t>(c)];
      for (int64_t m = 0; m < M; ++m) yp[m] = g * (xp[m] - mean) * invstd + b;
    }
  return y;
}

template <class T>
void instance_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma,
                            const InstanceNormCache<T>& cache, const Tensor<T>& dy,
                            Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int64_t N = x.shape[0], C = x.shape[1];
  const int64_t M = x.shape[2] * x.shape[3] * x.shape[4];
  dx = Tensor<T>(x.shape);
  dgamma = Tensor<T>({C});
  dbeta = Tensor<T>({C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* xp = x.ptr() + (n * C + c) * M;
      const T* dyp = dy.ptr() + (n * C + c) * M;
      T* dxp = dx.ptr() + (n * C + c) * M;
      const T mean = cache.mean[static_cast<size_t>(n * C + c)];
      const T invstd = cache.invstd[static_cast<size_t>(n * C + c)];
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int64_t m = 0; m < M; ++m) {
        const T xhat = (xp[m] - mean) * invstd;
        sum_dy += dyp[m];
        sum_dy_xhat += dyp[m] * xhat;
      }
      dbeta.data[static_cast<size_t>(c)] += sum_dy;
      dgamma.data[static_cast<size_t>(c)] += sum_dy_xhat;
      const T g = gamma.data[static_cast<size_t>(c)];
      const T mean_dy = sum_dy / static_cast<T>(M);
      const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(M);
      for (int64_t m = 0; m < M; ++m) {
        const T xhat = (xp[m] - mean) * invstd;
        dxp[m] = g * invstd * (dyp[m] - mean_dy - xhat * mean_dy_xhat);
      }
    }
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape);
  kernels::leaky_relu_fwd(x.ptr(), y.ptr(), x.data.size(), slope);
  return y;
}

template <class T>
Tensor<T> leaky_relu_grad(const Tensor<T>& x, const Tensor<T>& dy, T slope) {
  Tensor<T> dx(x.shape);
  kernels::leaky_relu_bwd(x.ptr(), dy.ptr(), dx.ptr(), x.data.size(), slope);
  return dx;
}

#define STYLESEG_INSTANTIATE(T)                                                      \
  template void im2col<T>(const T*, int64_t, const std::array<int64_t, 3>&,          \
                          const ConvGeom&, T*);                                      \
  template void col2im<T>(const T*, int64_t, const std::array<int64_t, 3>&,          \
                          const ConvGeom&, T*);                                      \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, const Tensor<T>&,             \
                                     const Tensor<T>*, const ConvGeom&);             \
  template void conv_backward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                 const ConvGeom&, const Tensor<T>&, Tensor<T>&,      \
                                 Tensor<T>&, Tensor<T>*);                            \
  template Tensor<T> tconv_forward<T>(const Tensor<T>&, const Tensor<T>&,            \
                                      const std::array<int64_t, 3>&);                \
  template void tconv_backward<T>(const Tensor<T>&, const Tensor<T>&,                \
                                  const std::array<int64_t, 3>&, const Tensor<T>&,   \
                                  Tensor<T>&, Tensor<T>&);                           \
  template Tensor<T> avgpool_forward<T>(const Tensor<T>&,                            \
                                        const std::array<int64_t, 3>&);              \
  template Tensor<T> avgpool_backward<T>(const std::vector<int64_t>&,                \
                                         const std::array<int64_t, 3>&,              \
                                         const Tensor<T>&);                          \
  template Tensor<T> instance_norm_forward<T>(const Tensor<T>&, const Tensor<T>&,    \
                                              const Tensor<T>&, T,                   \
                                              InstanceNormCache<T>&);                \
  template void instance_norm_backward<T>(const Tensor<T>&, const Tensor<T>&,        \
                                          const InstanceNormCache<T>&,               \
                                          const Tensor<T>&, Tensor<T>&, Tensor<T>&,  \
                                          Tensor<T>&);                               \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                             \
  template Tensor<T> leaky_relu_grad<T>(const Tensor<T>&, const Tensor<T>&, T);

STYLESEG_INSTANTIATE(float)
STYLESEG_INSTANTIATE(double)
#undef STYLESEG_INSTANTIATE

}  // namespace styleseg::nn
