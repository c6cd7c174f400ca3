// Copyright (c) the HBVC Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hbvc/tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <mutex>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace hbvc {

namespace {
std::once_flag g_blas_once;
// BLAS runs single-threaded inside each shard; parallelism lives in the
// fixed shard split so the summation order never depends on thread count.
void init_blas() {
  std::call_once(g_blas_once, [] { openblas_set_num_threads(1); });
}
}  // namespace

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

void require_shape(const Tensor& t, int n, int c, int h, int w,
                   const char* what) {
  if (t.n != n || t.c != c || t.h != h || t.w != w) {
    std::ostringstream os;
    os << what << ": expected (" << n << "," << c << "," << h << "," << w
       << "), got " << t.shape_str();
    throw ShapeError(os.str());
  }
}

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& si : s) si = splitmix64(x);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s[0] + s[3], 23) + s[0];
  const uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = rotl(s[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw Error("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(next_u64() % span);
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the state trajectory simple.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Rng Rng::fork(uint64_t stream) const {
  uint64_t x = s[0] ^ (0x632be59bd9b4e019ull * (stream + 1));
  Rng r(0);
  for (auto& si : r.s) si = splitmix64(x);
  return r;
}

ShardRange shard_range(int64_t total, int shard) {
  const int64_t per = (total + kNumShards - 1) / kNumShards;
  const int64_t b = std::min<int64_t>(total, per * shard);
  const int64_t e = std::min<int64_t>(total, per * (shard + 1));
  return {b, e};
}

void parallel_shards(const std::function<void(int)>& fn) {
  init_blas();
#ifdef _OPENMP
#pragma omp parallel for num_threads(kNumShards) schedule(static)
  for (int s = 0; s < kNumShards; ++s) fn(s);
#else
  for (int s = 0; s < kNumShards; ++s) fn(s);
#endif
}

void parallel_for(int64_t total,
                  const std::function<void(int64_t, int64_t)>& fn) {
  if (total <= 0) return;
  parallel_shards([&](int s) {
    const ShardRange r = shard_range(total, s);
    if (r.begin < r.end) fn(r.begin, r.end);
  });
}

void gemm_rowmajor(int m, int k, int n, const float* a, const float* b,
                   float* c, bool accumulate, bool parallel_cols) {
  init_blas();
  const float beta = accumulate ? 1.0f : 0.0f;
  if (!parallel_cols || n < 64) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0f, a, k,
                b, n, beta, c, n);
    return;
  }
  parallel_shards([&](int s) {
    const ShardRange r = shard_range(n, s);
    const int cols = static_cast<int>(r.end - r.begin);
    if (cols <= 0) return;
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, cols, k, 1.0f, a,
                k, b + r.begin, n, beta, c + r.begin, n);
  });
}

uint32_t fnv1a32(const void* data, size_t len, uint32_t seed) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint32_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 16777619u;
  }
  return h;
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace hbvc
