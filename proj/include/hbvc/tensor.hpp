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

#ifndef HBVC_TENSOR_HPP_
#define HBVC_TENSOR_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbvc {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
class IoError : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
class ChecksumError : public Error {
 public:
  using Error::Error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dense float32 NCHW tensor. Vectors are stored as (1,C,1,1), scalars as
// (1,1,1,1).
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.n, t.c, t.h, t.w); }
  static Tensor scalar(float x) {
    Tensor t(1, 1, 1, 1);
    t.v[0] = x;
    return t;
  }

  size_t size() const { return v.size(); }
  float* data() { return v.data(); }
  const float* data() const { return v.data(); }

  float& at(int i, int j, int y, int x) {
    return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
  }
  float at(int i, int j, int y, int x) const {
    return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  std::string shape_str() const;
  void fill(float x) { std::fill(v.begin(), v.end(), x); }
  float item() const { return v.at(0); }
};

void require_shape(const Tensor& t, int n, int c, int h, int w,
                   const char* what);

// xoshiro256++ with splitmix64 seeding. All stochastic behaviour in the
// project flows through instances of this generator so runs are
// reproducible from a single seed.
struct Rng {
  uint64_t s[4];

  explicit Rng(uint64_t seed);
  uint64_t next_u64();
  // [0,1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi);
  double normal();
  // Independent stream derived from this generator's seed material.
  Rng fork(uint64_t stream) const;

 private:
  explicit Rng() = default;
};

// Fixed two-shard work partition. The shard boundaries depend only on the
// problem size, never on the number of threads, so results are bitwise
// reproducible whether or not OpenMP is enabled.
inline constexpr int kNumShards = 2;

struct ShardRange {
  int64_t begin, end;
};
ShardRange shard_range(int64_t total, int shard);

// Runs fn(shard) for shard in [0, kNumShards), in parallel when possible.
void parallel_shards(const std::function<void(int)>& fn);

// Element-wise parallel loop with deterministic partitioning.
void parallel_for(int64_t total, const std::function<void(int64_t, int64_t)>& fn);

// C[m x n] (+)= A[m x k] * B[k x n], row-major. If accumulate is false C is
// overwritten. Deterministic: single BLAS call per shard with a fixed
// column split of B/C.
void gemm_rowmajor(int m, int k, int n, const float* a, const float* b,
                   float* c, bool accumulate, bool parallel_cols);

uint32_t fnv1a32(const void* data, size_t len, uint32_t seed = 0x811c9dc5u);
uint64_t fnv1a64(const void* data, size_t len,
                 uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace hbvc

#endif  // HBVC_TENSOR_HPP_
