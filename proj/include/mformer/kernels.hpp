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

#pragma once

// Inner-loop arithmetic shared by every dense primitive. Each routine has a
// portable scalar reference and, on x86-64, an AVX2+FMA variant; the variant
// is picked once at startup from CPUID and can be overridden with
// MFORMER_SIMD=scalar or set_backend().

#include <cstddef>
#include <string_view>

namespace mformer::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);

/// True when this binary carries AVX2 code and the CPU can run it.
bool avx2_available();

Backend active_backend();

/// Throws ArgumentError if the requested backend is unavailable.
void set_backend(Backend b);

template <typename T>
T dot(std::size_t n, const T* x, const T* y);

/// y += alpha * x
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

/// C += op(A) * op(B), row-major with leading dimensions. op(A) is m x k,
/// op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc);

namespace scalar {
template <typename T>
T dot(std::size_t n, const T* x, const T* y);
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MFORMER_HAVE_AVX2_KERNELS 1
namespace avx2 {
float dot(std::size_t n, const float* x, const float* y);
double dot(std::size_t n, const double* x, const double* y);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void axpy(std::size_t n, double alpha, const double* x, double* y);
}  // namespace avx2
#endif

}  // namespace mformer::kernels
