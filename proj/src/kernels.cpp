// Copyright 2026 The mformer Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mformer/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <vector>

#include "mformer/errors.hpp"

namespace mformer::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(MFORMER_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() {
  if (const char* env = std::getenv("MFORMER_SIMD"); env && std::strcmp(env, "scalar") == 0) {
    return Backend::kScalar;
  }
  return cpu_has_avx2() ? Backend::kAvx2 : Backend::kScalar;
}

Backend& current() {
  static Backend backend = detect();
  return backend;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool avx2_available() {
  static const bool ok = cpu_has_avx2();
  return ok;
}

Backend active_backend() { return current(); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_available()) {
    throw ArgumentError("AVX2 kernels are not available on this machine");
  }
  current() = b;
}

template <typename T>
T dot(std::size_t n, const T* x, const T* y) {
#ifdef MFORMER_HAVE_AVX2_KERNELS
  if (current() == Backend::kAvx2) return avx2::dot(n, x, y);
#endif
  return scalar::dot(n, x, y);
}

template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
#ifdef MFORMER_HAVE_AVX2_KERNELS
  if (current() == Backend::kAvx2) return avx2::axpy(n, alpha, x, y);
#endif
  scalar::axpy(n, alpha, x, y);
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_b) {
    // Row i of C accumulates A(i,p) * row p of B.
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * ldc;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = trans_a ? a[p * lda + i] : a[i * lda + p];
        axpy(n, aip, b + p * ldb, crow);
      }
    }
    return;
  }
  // B is stored n x k: C(i,j) is a dot of two contiguous rows.
  std::vector<T> packed;
  const T* arows = a;
  std::size_t a_stride = lda;
  if (trans_a) {
    packed.resize(m * k);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < m; ++i) packed[i * k + p] = a[p * lda + i];
    }
    arows = packed.data();
    a_stride = k;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = arows + i * a_stride;
    T* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) crow[j] += dot(k, arow, b + j * ldb);
  }
}

template float dot<float>(std::size_t, const float*, const float*);
template double dot<double>(std::size_t, const double*, const double*);
template void axpy<float>(std::size_t, float, const float*, float*);
template void axpy<double>(std::size_t, double, const double*, double*);
template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, const float*, std::size_t, float*, std::size_t);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           std::size_t, const double*, std::size_t, double*, std::size_t);

}  // namespace mformer::kernels
