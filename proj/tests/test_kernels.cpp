#include <doctest.h>

#include <cmath>
#include <vector>

#include "styleseg/kernels.hpp"
#include "test_util.hpp"

using namespace styleseg;
namespace sk = styleseg::kernels;

namespace {

// Sizes straddle the SIMD width so remainder loops are always exercised.
const std::vector<size_t> kSizes = {1, 3, 7, 8, 9, 16, 31, 64, 257};

template <class T>
void check_reductions(uint64_t seed) {
  for (size_t n : kSizes) {
    auto a = testutil::random_vec<T>(n, seed);
    auto b = testutil::random_vec<T>(n, seed + 1);
    const double rel = sizeof(T) == 4 ? 1e-5 : 1e-12;
    CHECK(testutil::close_rel(sk::dot(a.data(), b.data(), n),
                              sk::scalar::dot(a.data(), b.data(), n), rel, 1e-6));
    CHECK(testutil::close_rel(sk::sum(a.data(), n),
                              sk::scalar::sum(a.data(), n), rel, 1e-6));
    CHECK(testutil::close_rel(sk::sumsq(a.data(), n),
                              sk::scalar::sumsq(a.data(), n), rel, 1e-6));
  }
}

template <class T>
void check_elementwise(uint64_t seed) {
  // FMA contraction vs separate mul+add differs near cancellation, so float
  // comparisons need an absolute floor.
  const double floor = sizeof(T) == 4 ? 1e-6 : 1e-14;
  for (size_t n : kSizes) {
    auto x = testutil::random_vec<T>(n, seed);
    auto y0 = testutil::random_vec<T>(n, seed + 2);
    auto y1 = y0;
    sk::axpy(T(0.37), x.data(), y0.data(), n);
    sk::scalar::axpy(T(0.37), x.data(), y1.data(), n);
    for (size_t i = 0; i < n; ++i)
      CHECK(testutil::close_rel(y0[i], y1[i], 1e-6, floor));

    auto s0 = x;
    auto s1 = x;
    sk::scale(s0.data(), T(-1.25), n);
    sk::scalar::scale(s1.data(), T(-1.25), n);
    for (size_t i = 0; i < n; ++i) CHECK(s0[i] == doctest::Approx(s1[i]));

    std::vector<T> m0(n), m1(n);
    sk::vmul(x.data(), y0.data(), m0.data(), n);
    sk::scalar::vmul(x.data(), y0.data(), m1.data(), n);
    for (size_t i = 0; i < n; ++i) CHECK(m0[i] == doctest::Approx(m1[i]));

    std::vector<T> r0(n), r1(n);
    sk::leaky_relu_fwd(x.data(), r0.data(), n, T(0.01));
    sk::scalar::leaky_relu_fwd(x.data(), r1.data(), n, T(0.01));
    for (size_t i = 0; i < n; ++i) CHECK(r0[i] == r1[i]);

    std::vector<T> d0(n), d1(n);
    sk::leaky_relu_bwd(x.data(), y0.data(), d0.data(), n, T(0.01));
    sk::scalar::leaky_relu_bwd(x.data(), y0.data(), d1.data(), n, T(0.01));
    for (size_t i = 0; i < n; ++i) CHECK(d0[i] == d1[i]);
  }
}

template <class T>
void check_adam(uint64_t seed) {
  for (size_t n : kSizes) {
    auto g = testutil::random_vec<T>(n, seed);
    auto w0 = testutil::random_vec<T>(n, seed + 1);
    auto m0 = testutil::random_vec<T>(n, seed + 2, 0.1);
    auto v0 = testutil::random_vec<T>(n, seed + 3, 0.1);
    for (auto& x : v0) x = std::abs(x);
    auto w1 = w0;
    auto m1 = m0;
    auto v1 = v0;
    const T bc1 = T(1) - std::pow(T(0.9), T(3));
    const T bc2 = T(1) - std::pow(T(0.999), T(3));
    sk::adam_step(w0.data(), m0.data(), v0.data(), g.data(), n, T(0.01),
                  T(0.9), T(0.999), T(1e-8), bc1, bc2);
    sk::scalar::adam_step(w1.data(), m1.data(), v1.data(), g.data(), n, T(0.01),
                          T(0.9), T(0.999), T(1e-8), bc1, bc2);
    for (size_t i = 0; i < n; ++i) {
      CHECK(testutil::close_rel(w0[i], w1[i], 1e-5, 1e-7));
      CHECK(testutil::close_rel(m0[i], m1[i], 1e-5, 1e-7));
      CHECK(testutil::close_rel(v0[i], v1[i], 1e-5, 1e-7));
    }
  }
}

// Independent triple-loop GEMM oracle, no shared code with the kernels.
template <class T>
std::vector<T> gemm_oracle(const std::vector<T>& A, const std::vector<T>& B,
                           size_t M, size_t K, size_t N, char mode) {
  std::vector<T> C(M * N, T(0));
  for (size_t i = 0; i < M; ++i)
    for (size_t j = 0; j < N; ++j) {
      T acc = T(0);
      for (size_t k = 0; k < K; ++k) {
        T a = mode == 't' ? A[k * M + i] : A[i * K + k];
        T b = mode == 'n' ? B[k * N + j] : (mode == 't' ? B[k * N + j] : B[j * K + k]);
        acc += a * b;
      }
      C[i * N + j] = acc;
    }
  return C;
}

template <class T>
void check_gemm(uint64_t seed) {
  struct Dims { size_t M, K, N; };
  for (auto [M, K, N] : {Dims{1, 1, 1}, Dims{2, 3, 4}, Dims{5, 8, 9},
                         Dims{7, 36, 17}, Dims{16, 64, 33}}) {
    auto A = testutil::random_vec<T>(M * K, seed);
    auto Bn = testutil::random_vec<T>(K * N, seed + 1);
    auto Bt = testutil::random_vec<T>(N * K, seed + 2);
    auto At = testutil::random_vec<T>(K * M, seed + 3);
    const double rel = sizeof(T) == 4 ? 2e-5 : 1e-12;

    std::vector<T> C(M * N);
    sk::gemm_nn(A.data(), Bn.data(), C.data(), M, K, N, false);
    auto R = gemm_oracle(A, Bn, M, K, N, 'n');
    for (size_t i = 0; i < M * N; ++i) CHECK(testutil::close_rel(C[i], R[i], rel, 1e-5));

    sk::gemm_nt(A.data(), Bt.data(), C.data(), M, K, N, false);
    R = gemm_oracle(A, Bt, M, K, N, 'x');
    for (size_t i = 0; i < M * N; ++i) CHECK(testutil::close_rel(C[i], R[i], rel, 1e-5));

    sk::gemm_tn(At.data(), Bn.data(), C.data(), M, K, N, false);
    R = gemm_oracle(At, Bn, M, K, N, 't');
    for (size_t i = 0; i < M * N; ++i) CHECK(testutil::close_rel(C[i], R[i], rel, 1e-5));

    // accumulate=true adds on top of existing C
    std::vector<T> base = testutil::random_vec<T>(M * N, seed + 4);
    C = base;
    sk::gemm_nn(A.data(), Bn.data(), C.data(), M, K, N, true);
    R = gemm_oracle(A, Bn, M, K, N, 'n');
    for (size_t i = 0; i < M * N; ++i)
      CHECK(testutil::close_rel(C[i], base[i] + R[i], rel, 1e-5));
  }
}

}  // namespace

TEST_CASE("backend reports a known name") {
  const std::string name = sk::backend_name();
  CHECK((name == "avx2" || name == "scalar"));
}

TEST_CASE("reductions match scalar reference (float)") { check_reductions<float>(11); }
TEST_CASE("reductions match scalar reference (double)") { check_reductions<double>(12); }
TEST_CASE("elementwise kernels match scalar reference (float)") { check_elementwise<float>(13); }
TEST_CASE("elementwise kernels match scalar reference (double)") { check_elementwise<double>(14); }
TEST_CASE("adam kernel matches scalar reference (float)") { check_adam<float>(15); }
TEST_CASE("adam kernel matches scalar reference (double)") { check_adam<double>(16); }
TEST_CASE("gemm variants match triple-loop oracle (float)") { check_gemm<float>(17); }
TEST_CASE("gemm variants match triple-loop oracle (double)") { check_gemm<double>(18); }

TEST_CASE("adam single-weight trajectory follows the recurrence") {
  // Three steps with g=1 on a single weight, lr=0.1; recurrence evaluated
  // independently below with plain double arithmetic.
  double w = 0.5, m = 0.0, v = 0.0;
  double we = 0.5, me = 0.0, ve = 0.0;
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 3; ++t) {
    const double g = 1.0;
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);
    sk::adam_step(&w, &m, &v, &g, 1, lr, b1, b2, eps, bc1, bc2);
    me = b1 * me + (1 - b1) * g;
    ve = b2 * ve + (1 - b2) * g * g;
    we -= lr * (me / bc1) / (std::sqrt(ve / bc2) + eps);
    CHECK(w == doctest::Approx(we).epsilon(1e-12));
  }
  // With constant unit gradient the bias-corrected update is almost exactly
  // -lr each step.
  CHECK(w == doctest::Approx(0.5 - 3 * 0.1).epsilon(1e-5));
}
