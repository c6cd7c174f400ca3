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

#include "hbvc/autograd.hpp"

#include <cblas.h>

#include <atomic>
#include <cmath>
#include <cstring>

namespace hbvc::nn {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLn2 = 0.69314718055994530942;
constexpr double kLikelihoodFloor = 2.3283064365386963e-10;  // 2^-32

double norm_cdf(double t) { return 0.5 * std::erfc(-t * kInvSqrt2); }
double norm_pdf(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }
}  // namespace

Var Tape::leaf(Tensor v, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad && grad_enabled_;
  Node* p = n.get();
  nodes_.push_back(std::move(n));
  return p;
}

Var Tape::use(Param& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  Var n = leaf(p.value, true);
  n->param = &p;
  param_nodes_[&p] = n;
  return n;
}

Var Tape::make(Tensor value, std::vector<Var> parents,
               std::function<void(Node&)> bw) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (Var p : parents) rg = rg || (p != nullptr && p->requires_grad);
  n->requires_grad = rg && grad_enabled_;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(bw);
  Node* p = n.get();
  nodes_.push_back(std::move(n));
  return p;
}

Tensor& Tape::grad_buf(Node* n) {
  if (!n->grad_ready) {
    n->grad = Tensor::zeros_like(n->value);
    n->grad_ready = true;
  }
  return n->grad;
}

void Tape::accum(Node* n, const Tensor& g) {
  Tensor& dst = grad_buf(n);
  float* d = dst.data();
  const float* s = g.data();
  const int64_t total = static_cast<int64_t>(dst.size());
  parallel_for(total, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) d[i] += s[i];
  });
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw Error("backward on a no-grad tape");
  if (loss->value.size() != 1) throw Error("backward expects a scalar loss");
  grad_buf(loss).v[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (!n->requires_grad || !n->grad_ready) continue;
    if (n->backward) n->backward(*n);
    if (n->param != nullptr) {
      float* d = n->param->grad.data();
      const float* s = n->grad.data();
      for (size_t i = 0; i < n->grad.size(); ++i) d[i] += s[i];
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

void im2col(const float* x, int C, int H, int W, int K, int stride, int pad,
            int Ho, int Wo, float* col) {
  const int64_t rows = static_cast<int64_t>(C) * K * K;
  parallel_for(rows, [&](int64_t rb, int64_t re) {
    for (int64_t r = rb; r < re; ++r) {
      const int c = static_cast<int>(r / (K * K));
      const int k = static_cast<int>(r % (K * K));
      const int ky = k / K, kx = k % K;
      float* dst = col + r * Ho * Wo;
      const float* src = x + static_cast<size_t>(c) * H * W;
      for (int oy = 0; oy < Ho; ++oy) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= H) {
          std::memset(dst + static_cast<size_t>(oy) * Wo, 0,
                      sizeof(float) * Wo);
          continue;
        }
        for (int ox = 0; ox < Wo; ++ox) {
          const int ix = ox * stride + kx - pad;
          dst[static_cast<size_t>(oy) * Wo + ox] =
              (ix >= 0 && ix < W) ? src[static_cast<size_t>(iy) * W + ix]
                                  : 0.0f;
        }
      }
    }
  });
}

void col2im(const float* col, int C, int H, int W, int K, int stride, int pad,
            int Ho, int Wo, float* x) {
  const int64_t rows = static_cast<int64_t>(C) * K * K;
  for (int64_t r = 0; r < rows; ++r) {
    const int c = static_cast<int>(r / (K * K));
    const int k = static_cast<int>(r % (K * K));
    const int ky = k / K, kx = k % K;
    const float* src = col + r * Ho * Wo;
    float* dst = x + static_cast<size_t>(c) * H * W;
    for (int oy = 0; oy < Ho; ++oy) {
      const int iy = oy * stride + ky - pad;
      if (iy < 0 || iy >= H) continue;
      for (int ox = 0; ox < Wo; ++ox) {
        const int ix = ox * stride + kx - pad;
        if (ix >= 0 && ix < W)
          dst[static_cast<size_t>(iy) * W + ix] +=
              src[static_cast<size_t>(oy) * Wo + ox];
      }
    }
  }
}

// dW[M,Kd] += dY[M,N] * col[Kd,N]^T
void gemm_nt(int m, int kd, int n, const float* dy, const float* col,
             float* dw, bool accumulate) {
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, kd, n, 1.0f, dy, n,
              col, n, accumulate ? 1.0f : 0.0f, dw, kd);
}

// dcol[Kd,N] = W[M,Kd]^T * dY[M,N]
void gemm_tn(int m, int kd, int n, const float* w, const float* dy,
             float* dcol) {
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, kd, n, m, 1.0f, w, kd,
              dy, n, 0.0f, dcol, n);
}

thread_local std::vector<float> tl_scratch;

}  // namespace

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& X = x->value;
  const Tensor& W = w->value;
  if (X.c != W.c) throw ShapeError("conv2d: channel mismatch");
  const int K = W.h;
  if (W.w != K) throw ShapeError("conv2d: non-square kernel");
  const int Ho = (X.h + 2 * pad - K) / stride + 1;
  const int Wo = (X.w + 2 * pad - K) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: empty output");
  const int Cout = W.n, Cin = W.c;
  const int Kd = Cin * K * K;
  const int64_t plane = static_cast<int64_t>(Ho) * Wo;

  Tensor Y(X.n, Cout, Ho, Wo);
  const bool plain = (K == 1 && stride == 1 && pad == 0);

  auto fwd_sample = [&](int s, float* colbuf) {
    const float* xs = X.data() + static_cast<size_t>(s) * X.c * X.h * X.w;
    float* ys = Y.data() + static_cast<size_t>(s) * Cout * plane;
    const float* B;
    if (plain) {
      B = xs;
    } else {
      im2col(xs, Cin, X.h, X.w, K, stride, pad, Ho, Wo, colbuf);
      B = colbuf;
    }
    if (X.n == 1) {
      gemm_rowmajor(Cout, Kd, static_cast<int>(plane), W.data(), B, ys, false,
                    true);
    } else {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, Cout,
                  static_cast<int>(plane), Kd, 1.0f, W.data(), Kd, B,
                  static_cast<int>(plane), 0.0f, ys, static_cast<int>(plane));
    }
  };

  if (X.n == 1) {
    std::vector<float> col;
    if (!plain) {
      col.resize(static_cast<size_t>(Kd) * plane);
      im2col(X.data(), Cin, X.h, X.w, K, stride, pad, Ho, Wo, col.data());
    }
    gemm_rowmajor(Cout, Kd, static_cast<int>(plane), W.data(),
                  plain ? X.data() : col.data(), Y.data(), false, true);
  } else {
    parallel_shards([&](int sh) {
      const ShardRange r = shard_range(X.n, sh);
      tl_scratch.resize(plain ? 0 : static_cast<size_t>(Kd) * plane);
      for (int64_t s = r.begin; s < r.end; ++s)
        fwd_sample(static_cast<int>(s), tl_scratch.data());
    });
  }

  if (b != nullptr) {
    const Tensor& B = b->value;
    float* y = Y.data();
    parallel_for(static_cast<int64_t>(Y.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const int ch = static_cast<int>((i / plane) % Cout);
        y[i] += B.v[ch];
      }
    });
  }

  std::vector<Var> parents = {x, w, b};
  return t.make(std::move(Y), parents, [=](Node& self) {
    const Tensor& dY = self.grad;
    const Tensor& Xv = x->value;
    const Tensor& Wv = w->value;
    // bias gradient
    if (b != nullptr && b->requires_grad) {
      Tensor& db = Tape::grad_buf(b);
      for (int s = 0; s < Xv.n; ++s)
        for (int c = 0; c < Cout; ++c) {
          const float* g =
              dY.data() + (static_cast<size_t>(s) * Cout + c) * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i) acc += g[i];
          db.v[c] += static_cast<float>(acc);
        }
    }
    // weight gradient: two fixed partials summed in order
    if (w->requires_grad) {
      const size_t wsz = Wv.size();
      std::vector<float> part(static_cast<size_t>(kNumShards) * wsz, 0.0f);
      if (Xv.n == 1) {
        std::vector<float> col;
        const float* B = Xv.data();
        if (!plain) {
          col.resize(static_cast<size_t>(Kd) * plane);
          im2col(Xv.data(), Cin, Xv.h, Xv.w, K, stride, pad, Ho, Wo,
                 col.data());
          B = col.data();
        }
        parallel_shards([&](int sh) {
          const ShardRange r = shard_range(plane, sh);
          const int cols = static_cast<int>(r.end - r.begin);
          if (cols <= 0) return;
          // slices share leading dimension `plane`
          cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, Cout, Kd, cols,
                      1.0f, dY.data() + r.begin, static_cast<int>(plane),
                      B + r.begin, static_cast<int>(plane), 0.0f,
                      part.data() + static_cast<size_t>(sh) * wsz, Kd);
        });
      } else {
        parallel_shards([&](int sh) {
          const ShardRange r = shard_range(Xv.n, sh);
          tl_scratch.resize(plain ? 0 : static_cast<size_t>(Kd) * plane);
          float* dst = part.data() + static_cast<size_t>(sh) * wsz;
          bool first = true;
          for (int64_t s = r.begin; s < r.end; ++s) {
            const float* xs =
                Xv.data() + static_cast<size_t>(s) * Xv.c * Xv.h * Xv.w;
            const float* B = xs;
            if (!plain) {
              im2col(xs, Cin, Xv.h, Xv.w, K, stride, pad, Ho, Wo,
                     tl_scratch.data());
              B = tl_scratch.data();
            }
            gemm_nt(Cout, Kd, static_cast<int>(plane),
                    dY.data() + static_cast<size_t>(s) * Cout * plane, B, dst,
                    !first);
            first = false;
          }
          if (first) std::memset(dst, 0, sizeof(float) * wsz);
        });
      }
      Tensor& dw = Tape::grad_buf(w);
      for (int sh = 0; sh < kNumShards; ++sh) {
        const float* src = part.data() + static_cast<size_t>(sh) * wsz;
        for (size_t i = 0; i < wsz; ++i) dw.v[i] += src[i];
      }
    }
    // input gradient
    if (x->requires_grad) {
      Tensor& dx = Tape::grad_buf(x);
      auto bwd_sample = [&](int s, float* dcol) {
        const float* g =
            dY.data() + static_cast<size_t>(s) * Cout * plane;
        float* dxs = dx.data() + static_cast<size_t>(s) * Cin * Xv.h * Xv.w;
        if (plain) {
          cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, Kd,
                      static_cast<int>(plane), Cout, 1.0f, Wv.data(), Kd, g,
                      static_cast<int>(plane), 1.0f, dxs,
                      static_cast<int>(plane));
        } else {
          gemm_tn(Cout, Kd, static_cast<int>(plane), Wv.data(), g, dcol);
          col2im(dcol, Cin, Xv.h, Xv.w, K, stride, pad, Ho, Wo, dxs);
        }
      };
      if (Xv.n == 1) {
        std::vector<float> dcol(plain ? 0 : static_cast<size_t>(Kd) * plane);
        bwd_sample(0, dcol.data());
      } else {
        parallel_shards([&](int sh) {
          const ShardRange r = shard_range(Xv.n, sh);
          tl_scratch.resize(plain ? 0 : static_cast<size_t>(Kd) * plane);
          for (int64_t s = r.begin; s < r.end; ++s)
            bwd_sample(static_cast<int>(s), tl_scratch.data());
        });
      }
    }
  });
}

// ---------------------------------------------------------------------------
// deformable conv

namespace {

struct BilinearTaps {
  int y0, x0;
  float fy, fx;
};

inline float bilinear_read(const float* plane, int H, int W,
                           const BilinearTaps& bt) {
  auto rd = [&](int y, int x) -> float {
    return (y >= 0 && y < H && x >= 0 && x < W)
               ? plane[static_cast<size_t>(y) * W + x]
               : 0.0f;
  };
  const float v00 = rd(bt.y0, bt.x0), v01 = rd(bt.y0, bt.x0 + 1);
  const float v10 = rd(bt.y0 + 1, bt.x0), v11 = rd(bt.y0 + 1, bt.x0 + 1);
  const float top = v00 + (v01 - v00) * bt.fx;
  const float bot = v10 + (v11 - v10) * bt.fx;
  return top + (bot - top) * bt.fy;
}

}  // namespace

Var deform_conv2d(Tape& t, Var x, Var offsets, Var masks, Var w, Var b,
                  int groups) {
  const Tensor& X = x->value;
  const Tensor& Off = offsets->value;
  const Tensor& Msk = masks->value;
  const Tensor& W = w->value;
  const int K = W.h;
  if (K != 3 || W.w != 3) throw ShapeError("deform_conv2d: kernel must be 3x3");
  const int K2 = K * K;
  if (X.c % groups != 0)
    throw ShapeError("deform_conv2d: channels not divisible by groups");
  if (Off.c != 2 * groups * K2 || Off.h != X.h || Off.w != X.w ||
      Off.n != X.n)
    throw ShapeError("deform_conv2d: offset shape mismatch");
  if (Msk.c != groups * K2 || Msk.h != X.h || Msk.w != X.w || Msk.n != X.n)
    throw ShapeError("deform_conv2d: mask shape mismatch");
  if (W.c != X.c) throw ShapeError("deform_conv2d: weight channel mismatch");

  {
    std::atomic<bool> bad{false};
    const float* o = Off.data();
    parallel_for(static_cast<int64_t>(Off.size()),
                 [&](int64_t lo, int64_t hi) {
                   for (int64_t i = lo; i < hi; ++i)
                     if (!std::isfinite(o[i])) {
                       bad.store(true, std::memory_order_relaxed);
                       return;
                     }
                 });
    if (bad.load()) throw Error("deform_conv2d: non-finite offsets");
  }

  const int H = X.h, Wd = X.w, Cin = X.c, Cout = W.n;
  const int pad = 1;
  const int cg = Cin / groups;
  const int Kd = Cin * K2;
  const int64_t plane = static_cast<int64_t>(H) * Wd;

  // Deformable im2col: col[(c*9+k), p] = mask * bilinear(x_c, p + tap + off).
  auto build_col = [=](const Tensor& Xv, const Tensor& Offv,
                       const Tensor& Mskv, int s, float* col) {
    const float* xs = Xv.data() + static_cast<size_t>(s) * Cin * plane;
    const float* os =
        Offv.data() + static_cast<size_t>(s) * Offv.c * plane;
    const float* ms =
        Mskv.data() + static_cast<size_t>(s) * Mskv.c * plane;
    for (int c = 0; c < Cin; ++c) {
      const int g = c / cg;
      const float* xp = xs + static_cast<size_t>(c) * plane;
      for (int k = 0; k < K2; ++k) {
        const int ky = k / K - pad, kx = k % K - pad;
        const float* offy = os + (static_cast<size_t>(g) * K2 + k) * 2 * plane;
        const float* offx = offy + plane;
        const float* mk = ms + (static_cast<size_t>(g) * K2 + k) * plane;
        float* dst = col + (static_cast<size_t>(c) * K2 + k) * plane;
        for (int oy = 0; oy < H; ++oy)
          for (int ox = 0; ox < Wd; ++ox) {
            const int64_t p = static_cast<int64_t>(oy) * Wd + ox;
            const float py = oy + ky + offy[p];
            const float px = ox + kx + offx[p];
            const float fy0 = std::floor(py), fx0 = std::floor(px);
            BilinearTaps bt{static_cast<int>(fy0), static_cast<int>(fx0),
                            py - fy0, px - fx0};
            dst[p] = mk[p] * bilinear_read(xp, H, Wd, bt);
          }
      }
    }
  };

  Tensor Y(X.n, Cout, H, Wd);
  if (X.n == 1) {
    std::vector<float> col(static_cast<size_t>(Kd) * plane);
    // split the column build over two fixed channel ranges
    parallel_shards([&](int sh) {
      const ShardRange r = shard_range(Cin, sh);
      if (r.begin >= r.end) return;
      // operate on a channel sub-range by faking a smaller tensor view
      for (int64_t c = r.begin; c < r.end; ++c) {
        // reuse build_col per channel: cheap lambda inline
        const float* xs = X.data();
        const float* os = Off.data();
        const float* ms = Msk.data();
        const int g = static_cast<int>(c) / cg;
        const float* xp = xs + static_cast<size_t>(c) * plane;
        for (int k = 0; k < K2; ++k) {
          const int ky = k / K - pad, kx = k % K - pad;
          const float* offy =
              os + (static_cast<size_t>(g) * K2 + k) * 2 * plane;
          const float* offx = offy + plane;
          const float* mk = ms + (static_cast<size_t>(g) * K2 + k) * plane;
          float* dst = col.data() + (static_cast<size_t>(c) * K2 + k) * plane;
          for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < Wd; ++ox) {
              const int64_t p = static_cast<int64_t>(oy) * Wd + ox;
              const float py = oy + ky + offy[p];
              const float px = ox + kx + offx[p];
              const float fy0 = std::floor(py), fx0 = std::floor(px);
              BilinearTaps bt{static_cast<int>(fy0), static_cast<int>(fx0),
                              py - fy0, px - fx0};
              dst[p] = mk[p] * bilinear_read(xp, H, Wd, bt);
            }
        }
      }
    });
    gemm_rowmajor(Cout, Kd, static_cast<int>(plane), W.data(), col.data(),
                  Y.data(), false, true);
  } else {
    parallel_shards([&](int sh) {
      const ShardRange r = shard_range(X.n, sh);
      tl_scratch.resize(static_cast<size_t>(Kd) * plane);
      for (int64_t s = r.begin; s < r.end; ++s) {
        build_col(X, Off, Msk, static_cast<int>(s), tl_scratch.data());
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, Cout,
                    static_cast<int>(plane), Kd, 1.0f, W.data(), Kd,
                    tl_scratch.data(), static_cast<int>(plane), 0.0f,
                    Y.data() + static_cast<size_t>(s) * Cout * plane,
                    static_cast<int>(plane));
      }
    });
  }
  if (b != nullptr) {
    float* y = Y.data();
    const Tensor& B = b->value;
    parallel_for(static_cast<int64_t>(Y.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i)
        y[i] += B.v[(i / plane) % Cout];
    });
  }

  return t.make(std::move(Y), {x, offsets, masks, w, b}, [=](Node& self) {
    const Tensor& dY = self.grad;
    const Tensor& Xv = x->value;
    const Tensor& Offv = offsets->value;
    const Tensor& Mskv = masks->value;
    const Tensor& Wv = w->value;

    if (b != nullptr && b->requires_grad) {
      Tensor& db = Tape::grad_buf(b);
      for (int s = 0; s < Xv.n; ++s)
        for (int c = 0; c < Cout; ++c) {
          const float* g =
              dY.data() + (static_cast<size_t>(s) * Cout + c) * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i) acc += g[i];
          db.v[c] += static_cast<float>(acc);
        }
    }

    const bool need_dw = w->requires_grad;
    const bool need_dx = x->requires_grad;
    const bool need_doff = offsets->requires_grad;
    const bool need_dmask = masks->requires_grad;
    if (!(need_dw || need_dx || need_doff || need_dmask)) return;

    const size_t wsz = Wv.size();
    const size_t xplane_sz = static_cast<size_t>(Cin) * plane;
    std::vector<float> dw_part(static_cast<size_t>(kNumShards) * wsz, 0.0f);
    // per-shard dX partials (offsets scatter across row boundaries)
    std::vector<float> dx_part;
    const bool sample_parallel = Xv.n > 1;
    if (need_dx && !sample_parallel)
      dx_part.assign(static_cast<size_t>(kNumShards) * xplane_sz, 0.0f);

    Tensor* dxq = need_dx ? &Tape::grad_buf(x) : nullptr;
    Tensor* doffq = need_doff ? &Tape::grad_buf(offsets) : nullptr;
    Tensor* dmaskq = need_dmask ? &Tape::grad_buf(masks) : nullptr;

    auto bwd_positions = [&](int s, int64_t pbeg, int64_t pend, float* dcol,
                             float* col, float* dxdst, int shard) {
      const float* xs = Xv.data() + static_cast<size_t>(s) * Cin * plane;
      const float* os = Offv.data() + static_cast<size_t>(s) * Offv.c * plane;
      const float* ms = Mskv.data() + static_cast<size_t>(s) * Mskv.c * plane;
      float* doffs =
          doffq ? doffq->data() + static_cast<size_t>(s) * Offv.c * plane
                : nullptr;
      float* dmasks =
          dmaskq ? dmaskq->data() + static_cast<size_t>(s) * Mskv.c * plane
                 : nullptr;
      (void)shard;
      for (int g = 0; g < groups; ++g)
        for (int k = 0; k < K2; ++k) {
          const int ky = k / K - pad, kx = k % K - pad;
          const float* offy =
              os + (static_cast<size_t>(g) * K2 + k) * 2 * plane;
          const float* offx = offy + plane;
          const float* mk = ms + (static_cast<size_t>(g) * K2 + k) * plane;
          float* doffy =
              doffs ? doffs + (static_cast<size_t>(g) * K2 + k) * 2 * plane
                    : nullptr;
          float* doffx = doffy ? doffy + plane : nullptr;
          float* dmk =
              dmasks ? dmasks + (static_cast<size_t>(g) * K2 + k) * plane
                     : nullptr;
          for (int64_t p = pbeg; p < pend; ++p) {
            const int oy = static_cast<int>(p / Wd);
            const int ox = static_cast<int>(p % Wd);
            const float py = oy + ky + offy[p];
            const float px = ox + kx + offx[p];
            const float fy0 = std::floor(py), fx0 = std::floor(px);
            const int y0 = static_cast<int>(fy0), x0 = static_cast<int>(fx0);
            const float fy = py - fy0, fx = px - fx0;
            float gsumy = 0.0f, gsumx = 0.0f, gmask = 0.0f;
            for (int ci = 0; ci < cg; ++ci) {
              const int c = g * cg + ci;
              const float* xp = xs + static_cast<size_t>(c) * plane;
              const float gcol =
                  dcol[(static_cast<size_t>(c) * K2 + k) * plane + p];
              if (gcol == 0.0f) continue;
              auto rd = [&](int y, int xq) -> float {
                return (y >= 0 && y < H && xq >= 0 && xq < Wd)
                           ? xp[static_cast<size_t>(y) * Wd + xq]
                           : 0.0f;
              };
              const float v00 = rd(y0, x0), v01 = rd(y0, x0 + 1);
              const float v10 = rd(y0 + 1, x0), v11 = rd(y0 + 1, x0 + 1);
              const float sampled = (v00 + (v01 - v00) * fx) * (1 - fy) +
                                    (v10 + (v11 - v10) * fx) * fy;
              if (dmk) gmask += gcol * sampled;
              const float gm = gcol * mk[p];
              if (doffy) {
                gsumy += gm * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx);
                gsumx += gm * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy);
              }
              if (dxdst) {
                float* dxp = dxdst + static_cast<size_t>(c) * plane;
                auto wr = [&](int y, int xq, float val) {
                  if (y >= 0 && y < H && xq >= 0 && xq < Wd)
                    dxp[static_cast<size_t>(y) * Wd + xq] += val;
                };
                wr(y0, x0, gm * (1 - fy) * (1 - fx));
                wr(y0, x0 + 1, gm * (1 - fy) * fx);
                wr(y0 + 1, x0, gm * fy * (1 - fx));
                wr(y0 + 1, x0 + 1, gm * fy * fx);
              }
            }
            if (doffy) {
              doffy[p] += gsumy;
              doffx[p] += gsumx;
            }
            if (dmk) dmk[p] += gmask;
          }
        }
      (void)col;
    };

    if (sample_parallel) {
      parallel_shards([&](int sh) {
        const ShardRange r = shard_range(Xv.n, sh);
        std::vector<float> col(static_cast<size_t>(Kd) * plane);
        std::vector<float> dcol(static_cast<size_t>(Kd) * plane);
        float* dwdst = dw_part.data() + static_cast<size_t>(sh) * wsz;
        bool first = true;
        for (int64_t s = r.begin; s < r.end; ++s) {
          const float* g = dY.data() + static_cast<size_t>(s) * Cout * plane;
          if (need_dw) {
            build_col(Xv, Offv, Mskv, static_cast<int>(s), col.data());
            gemm_nt(Cout, Kd, static_cast<int>(plane), g, col.data(), dwdst,
                    !first);
            first = false;
          }
          gemm_tn(Cout, Kd, static_cast<int>(plane), Wv.data(), g,
                  dcol.data());
          float* dxdst =
              need_dx ? dxq->data() + static_cast<size_t>(s) * Cin * plane
                      : nullptr;
          bwd_positions(static_cast<int>(s), 0, plane, dcol.data(), col.data(),
                        dxdst, sh);
        }
        if (need_dw && first) std::memset(dwdst, 0, sizeof(float) * wsz);
      });
    } else {
      std::vector<float> col(static_cast<size_t>(Kd) * plane);
      std::vector<float> dcol(static_cast<size_t>(Kd) * plane);
      build_col(Xv, Offv, Mskv, 0, col.data());
      if (need_dw) {
        parallel_shards([&](int sh) {
          const ShardRange r = shard_range(plane, sh);
          const int cols = static_cast<int>(r.end - r.begin);
          float* dst = dw_part.data() + static_cast<size_t>(sh) * wsz;
          if (cols <= 0) {
            std::memset(dst, 0, sizeof(float) * wsz);
            return;
          }
          cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, Cout, Kd, cols,
                      1.0f, dY.data() + r.begin, static_cast<int>(plane),
                      col.data() + r.begin, static_cast<int>(plane), 0.0f, dst,
                      Kd);
        });
      }
      gemm_tn(Cout, Kd, static_cast<int>(plane), Wv.data(), dY.data(),
              dcol.data());
      parallel_shards([&](int sh) {
        const ShardRange r = shard_range(plane, sh);
        float* dxdst = need_dx
                           ? dx_part.data() + static_cast<size_t>(sh) * xplane_sz
                           : nullptr;
        bwd_positions(0, r.begin, r.end, dcol.data(), col.data(), dxdst, sh);
      });
      if (need_dx) {
        float* dst = dxq->data();
        for (int sh = 0; sh < kNumShards; ++sh) {
          const float* src = dx_part.data() + static_cast<size_t>(sh) * xplane_sz;
          for (size_t i = 0; i < xplane_sz; ++i) dst[i] += src[i];
        }
      }
    }
    if (need_dw) {
      Tensor& dw = Tape::grad_buf(w);
      for (int sh = 0; sh < kNumShards; ++sh) {
        const float* src = dw_part.data() + static_cast<size_t>(sh) * wsz;
        for (size_t i = 0; i < wsz; ++i) dw.v[i] += src[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// pointwise and structural ops

namespace {
template <typename FwdFn>
Tensor map_tensor(const Tensor& x, FwdFn fn) {
  Tensor y = Tensor::zeros_like(x);
  const float* src = x.data();
  float* dst = y.data();
  parallel_for(static_cast<int64_t>(x.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) dst[i] = fn(src[i]);
  });
  return y;
}
}  // namespace

Var leaky_relu(Tape& t, Var x, float slope) {
  Tensor y = map_tensor(x->value,
                        [slope](float v) { return v >= 0.0f ? v : slope * v; });
  return t.make(std::move(y), {x}, [x, slope](Node& self) {
    Tensor& dx = Tape::grad_buf(x);
    const float* xv = x->value.data();
    const float* g = self.grad.data();
    float* d = dx.data();
    parallel_for(static_cast<int64_t>(dx.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i)
        d[i] += g[i] * (xv[i] >= 0.0f ? 1.0f : slope);
    });
  });
}

Var sigmoid(Tape& t, Var x) {
  Tensor y = map_tensor(x->value, [](float v) {
    return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                     : std::exp(v) / (1.0f + std::exp(v));
  });
  Var out = t.make(std::move(y), {x}, [x](Node& self) {
    Tensor& dx = Tape::grad_buf(x);
    const float* yv = self.value.data();
    const float* g = self.grad.data();
    float* d = dx.data();
    parallel_for(static_cast<int64_t>(dx.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) d[i] += g[i] * yv[i] * (1.0f - yv[i]);
    });
  });
  return out;
}

Var softplus_clamped(Tape& t, Var x, float lo, float hi) {
  auto sp = [](float v) {
    return v > 20.0f ? v : std::log1p(std::exp(v));
  };
  Tensor y = map_tensor(x->value, [&](float v) {
    return std::min(hi, std::max(lo, sp(v)));
  });
  return t.make(std::move(y), {x}, [x, lo, hi, sp](Node& self) {
    Tensor& dx = Tape::grad_buf(x);
    const float* xv = x->value.data();
    const float* g = self.grad.data();
    float* d = dx.data();
    parallel_for(static_cast<int64_t>(dx.size()), [&](int64_t b, int64_t e) {
      for (int64_t i = b; i < e; ++i) {
        const float s = sp(xv[i]);
        if (s <= lo || s >= hi) continue;
        const float sig = 1.0f / (1.0f + std::exp(-xv[i]));
        d[i] += g[i] * sig;
      }
    });
  });
}

Var exp_op(Tape& t, Var x) {
  Tensor y = map_tensor(x->value, [](float v) { return std::exp(v); });
  return t.make(std::move(y), {x}, [x](Node& self) {
    Tensor& dx = Tape::grad_buf(x);
    const float* yv = self.value.data();
    const float* g = self.grad.data();
    float* d = dx.data();
    for (size_t i = 0; i < dx.size(); ++i) d[i] += g[i] * yv[i];
  });
}

Var add(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("add: shape mismatch");
  Tensor y = Tensor::zeros_like(a->value);
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  float* d = y.data();
  parallel_for(static_cast<int64_t>(y.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) d[i] = pa[i] + pb[i];
  });
  return t.make(std::move(y), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) Tape::accum(a, self.grad);
    if (b->requires_grad) Tape::accum(b, self.grad);
  });
}

Var sub(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("sub: shape mismatch");
  Tensor y = Tensor::zeros_like(a->value);
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  float* d = y.data();
  parallel_for(static_cast<int64_t>(y.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) d[i] = pa[i] - pb[i];
  });
  return t.make(std::move(y), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) Tape::accum(a, self.grad);
    if (b->requires_grad) {
      Tensor& db = Tape::grad_buf(b);
      const float* g = self.grad.data();
      float* d = db.data();
      for (size_t i = 0; i < db.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("mul: shape mismatch");
  Tensor y = Tensor::zeros_like(a->value);
  const float* pa = a->value.data();
  const float* pb = b->value.data();
  float* d = y.data();
  parallel_for(static_cast<int64_t>(y.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) d[i] = pa[i] * pb[i];
  });
  return t.make(std::move(y), {a, b}, [a, b](Node& self) {
    const float* g = self.grad.data();
    if (a->requires_grad) {
      Tensor& da = Tape::grad_buf(a);
      const float* pb = b->value.data();
      float* d = da.data();
      for (size_t i = 0; i < da.size(); ++i) d[i] += g[i] * pb[i];
    }
    if (b->requires_grad) {
      Tensor& db = Tape::grad_buf(b);
      const float* pa = a->value.data();
      float* d = db.data();
      for (size_t i = 0; i < db.size(); ++i) d[i] += g[i] * pa[i];
    }
  });
}

Var scale(Tape& t, Var x, float k) {
  Tensor y = map_tensor(x->value, [k](float v) { return k * v; });
  return t.make(std::move(y), {x}, [x, k](Node& self) {
    Tensor& dx = Tape::grad_buf(x);
    const float* g = self.grad.data();
    float* d = dx.data();
    for (size_t i = 0; i < dx.size(); ++i) d[i] += k * g[i];
  });
}

Var lerp_const(Tape& t, Var a, Var b, float alpha) {
  if (!a->value.same_shape(b->value)) throw ShapeError("lerp: shape mismatch");
  Tensor y = Tensor::zeros_like(a->value);
  for (size_t i = 0; i < y.size(); ++i)
    y.v[i] = (1.0f - alpha) * a->value.v[i] + alpha * b->value.v[i];
  return t.make(std::move(y), {a, b}, [a, b, alpha](Node& self) {
    const float* g = self.grad.data();
    if (a->requires_grad) {
      Tensor& da = Tape::grad_buf(a);
      for (size_t i = 0; i < da.size(); ++i) da.v[i] += (1.0f - alpha) * g[i];
    }
    if (b->requires_grad) {
      Tensor& db = Tape::grad_buf(b);
      for (size_t i = 0; i < db.size(); ++i) db.v[i] += alpha * g[i];
    }
  });
}

Var concat_ch(Tape& t, const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_ch: empty input");
  const Tensor& x0 = xs[0]->value;
  int ctot = 0;
  for (Var v : xs) {
    const Tensor& xv = v->value;
    if (xv.n != x0.n || xv.h != x0.h || xv.w != x0.w)
      throw ShapeError("concat_ch: spatial/batch mismatch");
    ctot += xv.c;
  }
  Tensor y(x0.n, ctot, x0.h, x0.w);
  const int64_t plane = static_cast<int64_t>(x0.h) * x0.w;
  int coff = 0;
  for (Var v : xs) {
    const Tensor& xv = v->value;
    for (int s = 0; s < x0.n; ++s)
      std::memcpy(y.data() + (static_cast<size_t>(s) * ctot + coff) * plane,
                  xv.data() + static_cast<size_t>(s) * xv.c * plane,
                  sizeof(float) * xv.c * plane);
    coff += xv.c;
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return t.make(std::move(y), parents, [xs, plane, ctot](Node& self) {
    int coff = 0;
    for (Var v : xs) {
      const int ci = v->value.c;
      if (v->requires_grad) {
        Tensor& dd = Tape::grad_buf(v);
        for (int s = 0; s < v->value.n; ++s) {
          const float* g = self.grad.data() +
                           (static_cast<size_t>(s) * ctot + coff) * plane;
          float* d = dd.data() + static_cast<size_t>(s) * ci * plane;
          for (int64_t i = 0; i < static_cast<int64_t>(ci) * plane; ++i)
            d[i] += g[i];
        }
      }
      coff += ci;
    }
  });
}

Var slice_ch(Tape& t, Var x, int c0, int c1) {
  const Tensor& X = x->value;
  if (c0 < 0 || c1 > X.c || c0 >= c1) throw ShapeError("slice_ch: bad range");
  Tensor y(X.n, c1 - c0, X.h, X.w);
  const int64_t plane = static_cast<int64_t>(X.h) * X.w;
  for (int s = 0; s < X.n; ++s)
    std::memcpy(y.data() + static_cast<size_t>(s) * y.c * plane,
                X.data() + (static_cast<size_t>(s) * X.c + c0) * plane,
                sizeof(float) * y.c * plane);
  return t.make(std::move(y), {x}, [x, c0, plane](Node& self) {
    if (!x->requires_grad) return;
    Tensor& dx = Tape::grad_buf(x);
    const int cs = self.value.c;
    for (int s = 0; s < x->value.n; ++s) {
      const float* g = self.grad.data() + static_cast<size_t>(s) * cs * plane;
      float* d = dx.data() + (static_cast<size_t>(s) * x->value.c + c0) * plane;
      for (int64_t i = 0; i < static_cast<int64_t>(cs) * plane; ++i)
        d[i] += g[i];
    }
  });
}

Var upsample2x(Tape& t, Var x) {
  const Tensor& X = x->value;
  Tensor y(X.n, X.c, X.h * 2, X.w * 2);
  const int64_t planes = static_cast<int64_t>(X.n) * X.c;
  parallel_for(planes, [&](int64_t lo, int64_t hi) {
    for (int64_t pc = lo; pc < hi; ++pc) {
      const float* src = X.data() + static_cast<size_t>(pc) * X.h * X.w;
      float* dst = y.data() + static_cast<size_t>(pc) * y.h * y.w;
      for (int iy = 0; iy < X.h; ++iy)
        for (int ix = 0; ix < X.w; ++ix) {
          const float v = src[static_cast<size_t>(iy) * X.w + ix];
          float* d = dst + (static_cast<size_t>(iy) * 2) * y.w + ix * 2;
          d[0] = v;
          d[1] = v;
          d[y.w] = v;
          d[y.w + 1] = v;
        }
    }
  });
  return t.make(std::move(y), {x}, [x](Node& self) {
    if (!x->requires_grad) return;
    Tensor& dx = Tape::grad_buf(x);
    const Tensor& X = x->value;
    const int64_t planes = static_cast<int64_t>(X.n) * X.c;
    const int W2 = X.w * 2;
    parallel_for(planes, [&](int64_t lo, int64_t hi) {
      for (int64_t pc = lo; pc < hi; ++pc) {
        float* d = dx.data() + static_cast<size_t>(pc) * X.h * X.w;
        const float* g =
            self.grad.data() + static_cast<size_t>(pc) * X.h * X.w * 4;
        for (int iy = 0; iy < X.h; ++iy)
          for (int ix = 0; ix < X.w; ++ix) {
            const float* gp = g + (static_cast<size_t>(iy) * 2) * W2 + ix * 2;
            d[static_cast<size_t>(iy) * X.w + ix] +=
                gp[0] + gp[1] + gp[W2] + gp[W2 + 1];
          }
      }
    });
  });
}

Var pixel_shuffle2(Tape& t, Var x) {
  const Tensor& X = x->value;
  if (X.c % 4 != 0) throw ShapeError("pixel_shuffle2: channels % 4 != 0");
  const int Co = X.c / 4;
  Tensor y(X.n, Co, X.h * 2, X.w * 2);
  for (int s = 0; s < X.n; ++s)
    for (int c = 0; c < Co; ++c)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx2 = 0; dx2 < 2; ++dx2) {
          const float* src =
              X.data() +
              ((static_cast<size_t>(s) * X.c + c * 4 + dy * 2 + dx2) * X.h) *
                  X.w;
          float* dst = y.data() + (static_cast<size_t>(s) * Co + c) * y.h * y.w;
          for (int iy = 0; iy < X.h; ++iy)
            for (int ix = 0; ix < X.w; ++ix)
              dst[(static_cast<size_t>(iy) * 2 + dy) * y.w + ix * 2 + dx2] =
                  src[static_cast<size_t>(iy) * X.w + ix];
        }
  return t.make(std::move(y), {x}, [x, Co](Node& self) {
    if (!x->requires_grad) return;
    Tensor& dxt = Tape::grad_buf(x);
    const Tensor& X = x->value;
    const int W2 = X.w * 2;
    for (int s = 0; s < X.n; ++s)
      for (int c = 0; c < Co; ++c)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx2 = 0; dx2 < 2; ++dx2) {
            float* d =
                dxt.data() +
                ((static_cast<size_t>(s) * X.c + c * 4 + dy * 2 + dx2) * X.h) *
                    X.w;
            const float* g = self.grad.data() +
                             (static_cast<size_t>(s) * Co + c) * X.h * 2 * W2;
            for (int iy = 0; iy < X.h; ++iy)
              for (int ix = 0; ix < X.w; ++ix)
                d[static_cast<size_t>(iy) * X.w + ix] +=
                    g[(static_cast<size_t>(iy) * 2 + dy) * W2 + ix * 2 + dx2];
          }
  });
}

Var channel_scale(Tape& t, Var x, Var s) {
  const Tensor& X = x->value;
  const Tensor& S = s->value;
  if (S.n != 1 || S.h != 1 || S.w != 1 || S.c != X.c)
    throw ShapeError("channel_scale: scale must be (1,C,1,1)");
  Tensor y = Tensor::zeros_like(X);
  const int64_t plane = static_cast<int64_t>(X.h) * X.w;
  parallel_for(static_cast<int64_t>(X.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i)
      y.v[i] = X.v[i] * S.v[(i / plane) % X.c];
  });
  return t.make(std::move(y), {x, s}, [x, s, plane](Node& self) {
    const float* g = self.grad.data();
    const Tensor& X = x->value;
    if (x->requires_grad) {
      Tensor& dx = Tape::grad_buf(x);
      const float* sv = s->value.data();
      parallel_for(static_cast<int64_t>(dx.size()),
                   [&](int64_t lo, int64_t hi) {
                     for (int64_t i = lo; i < hi; ++i)
                       dx.v[i] += g[i] * sv[(i / plane) % X.c];
                   });
    }
    if (s->requires_grad) {
      Tensor& ds = Tape::grad_buf(s);
      // per-channel reduction in fixed order
      for (int sN = 0; sN < X.n; ++sN)
        for (int c = 0; c < X.c; ++c) {
          const size_t base = (static_cast<size_t>(sN) * X.c + c) * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i)
            acc += static_cast<double>(g[base + i]) * X.v[base + i];
          ds.v[c] += static_cast<float>(acc);
        }
    }
  });
}

Var mul_mask(Tape& t, Var x, const Tensor& mask) {
  const Tensor& X = x->value;
  if (mask.h != X.h || mask.w != X.w)
    throw ShapeError("mul_mask: mask spatial mismatch");
  Tensor y = Tensor::zeros_like(X);
  const int64_t plane = static_cast<int64_t>(X.h) * X.w;
  const float* mv = mask.data();
  parallel_for(static_cast<int64_t>(X.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) y.v[i] = X.v[i] * mv[i % plane];
  });
  Tensor mask_copy = mask;
  return t.make(std::move(y), {x},
                [x, plane, mask_copy = std::move(mask_copy)](Node& self) {
                  if (!x->requires_grad) return;
                  Tensor& dx = Tape::grad_buf(x);
                  const float* g = self.grad.data();
                  const float* mv = mask_copy.data();
                  parallel_for(static_cast<int64_t>(dx.size()),
                               [&](int64_t lo, int64_t hi) {
                                 for (int64_t i = lo; i < hi; ++i)
                                   dx.v[i] += g[i] * mv[i % plane];
                               });
                });
}

Var round_ste(Tape& t, Var x) {
  Tensor y = map_tensor(x->value, [](float v) { return std::nearbyintf(v); });
  return t.make(std::move(y), {x}, [x](Node& self) {
    if (x->requires_grad) Tape::accum(x, self.grad);
  });
}

Var add_uniform_noise(Tape& t, Var x, Rng& rng) {
  Tensor y = Tensor::zeros_like(x->value);
  for (size_t i = 0; i < y.size(); ++i)
    y.v[i] = x->value.v[i] + static_cast<float>(rng.uniform() - 0.5);
  return t.make(std::move(y), {x}, [x](Node& self) {
    if (x->requires_grad) Tape::accum(x, self.grad);
  });
}

Var gaussian_bits(Tape& t, Var v, Var mu, Var sigma) {
  const Tensor& V = v->value;
  if (!V.same_shape(mu->value) || !V.same_shape(sigma->value))
    throw ShapeError("gaussian_bits: shape mismatch");
  Tensor y = Tensor::zeros_like(V);
  const float* pv = V.data();
  const float* pm = mu->value.data();
  const float* ps = sigma->value.data();
  parallel_for(static_cast<int64_t>(V.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const double sd = ps[i];
      const double a = (pv[i] + 0.5 - pm[i]) / sd;
      const double b = (pv[i] - 0.5 - pm[i]) / sd;
      const double p = std::max(norm_cdf(a) - norm_cdf(b), kLikelihoodFloor);
      y.v[i] = static_cast<float>(-std::log2(p));
    }
  });
  return t.make(std::move(y), {v, mu, sigma}, [v, mu, sigma](Node& self) {
    const Tensor& V = v->value;
    const float* pv = V.data();
    const float* pm = mu->value.data();
    const float* ps = sigma->value.data();
    const float* g = self.grad.data();
    Tensor* dv = v->requires_grad ? &Tape::grad_buf(v) : nullptr;
    Tensor* dm = mu->requires_grad ? &Tape::grad_buf(mu) : nullptr;
    Tensor* dsg = sigma->requires_grad ? &Tape::grad_buf(sigma) : nullptr;
    parallel_for(static_cast<int64_t>(V.size()), [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const double sd = ps[i];
        const double a = (pv[i] + 0.5 - pm[i]) / sd;
        const double b = (pv[i] - 0.5 - pm[i]) / sd;
        const double p = norm_cdf(a) - norm_cdf(b);
        if (p <= kLikelihoodFloor) continue;  // flat on the floor
        const double common = -static_cast<double>(g[i]) / (p * kLn2);
        const double fa = norm_pdf(a), fb = norm_pdf(b);
        if (dv) dv->v[i] += static_cast<float>(common * (fa - fb) / sd);
        if (dm) dm->v[i] += static_cast<float>(common * -(fa - fb) / sd);
        if (dsg)
          dsg->v[i] += static_cast<float>(common * -(a * fa - b * fb) / sd);
      }
    });
  });
}

Var sum_all(Tape& t, Var x) {
  double acc = 0.0;
  for (float f : x->value.v) acc += f;
  return t.make(Tensor::scalar(static_cast<float>(acc)), {x}, [x](Node& self) {
    if (!x->requires_grad) return;
    Tensor& dx = Tape::grad_buf(x);
    const float g = self.grad.v[0];
    for (auto& d : dx.v) d += g;
  });
}

Var mse(Tape& t, Var a, Var b) {
  if (!a->value.same_shape(b->value)) throw ShapeError("mse: shape mismatch");
  const size_t n = a->value.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a->value.v[i]) - b->value.v[i];
    acc += d * d;
  }
  return t.make(Tensor::scalar(static_cast<float>(acc / n)), {a, b},
                [a, b, n](Node& self) {
                  const float g = self.grad.v[0] * 2.0f / n;
                  if (a->requires_grad) {
                    Tensor& da = Tape::grad_buf(a);
                    for (size_t i = 0; i < n; ++i)
                      da.v[i] += g * (a->value.v[i] - b->value.v[i]);
                  }
                  if (b->requires_grad) {
                    Tensor& db = Tape::grad_buf(b);
                    for (size_t i = 0; i < n; ++i)
                      db.v[i] -= g * (a->value.v[i] - b->value.v[i]);
                  }
                });
}

Var weighted_sum(Tape& t, const std::vector<Var>& scalars,
                 const std::vector<float>& coeffs) {
  if (scalars.size() != coeffs.size())
    throw ShapeError("weighted_sum: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i]->value.size() != 1)
      throw ShapeError("weighted_sum: non-scalar input");
    acc += static_cast<double>(coeffs[i]) * scalars[i]->value.v[0];
  }
  std::vector<Var> parents(scalars.begin(), scalars.end());
  return t.make(Tensor::scalar(static_cast<float>(acc)), parents,
                [scalars, coeffs](Node& self) {
                  const float g = self.grad.v[0];
                  for (size_t i = 0; i < scalars.size(); ++i)
                    if (scalars[i]->requires_grad)
                      Tape::grad_buf(scalars[i]).v[0] += g * coeffs[i];
                });
}

double finite_difference(Param& p, size_t idx, double eps,
                         const std::function<double()>& loss_fn) {
  const float saved = p.value.v[idx];
  p.value.v[idx] = static_cast<float>(saved + eps);
  const double up = loss_fn();
  p.value.v[idx] = static_cast<float>(saved - eps);
  const double dn = loss_fn();
  p.value.v[idx] = saved;
  return (up - dn) / (2.0 * eps);
}

}  // namespace hbvc::nn
