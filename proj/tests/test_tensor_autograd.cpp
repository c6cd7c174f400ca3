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

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "hbvc/autograd.hpp"
#include "hbvc/layers.hpp"
#include "hbvc/tensor.hpp"

using namespace hbvc;
using namespace hbvc::nn;

namespace {

void fill_random(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
}

struct GradCheck {
  double max_rel;  // worst per-coordinate relative deviation (smooth coords)
  double vec_rel;  // ||fd - analytic|| / ||analytic|| over smooth coords
  bool kinks_ok = true;  // analytic within the one-sided slope bracket
};

// Analytic gradient of a scalar graph vs central differences for every
// entry of the chosen parameter. Coordinates where the two one-sided
// difference quotients disagree straddle a kink of the piecewise-linear
// graph; there the analytic value must lie between the one-sided slopes
// and is excluded from the smooth-coordinate statistics.
GradCheck grad_check(ParamStore& ps, const std::string& pname,
                     const std::function<Var(Tape&)>& graph, double eps) {
  Param& p = ps.at(pname);
  ps.zero_grads();
  Tape tape;
  Var loss = graph(tape);
  const double mid = loss->value.item();
  tape.backward(loss);
  Tensor analytic = p.grad;
  auto eval = [&]() {
    Tape t2(false);
    return static_cast<double>(graph(t2)->value.item());
  };
  GradCheck out{0.0, 0.0, true};
  double dsq = 0.0, asq = 0.0;
  for (size_t i = 0; i < p.value.size(); ++i) {
    const float saved = p.value.v[i];
    p.value.v[i] = static_cast<float>(saved + eps);
    const double up = eval();
    p.value.v[i] = static_cast<float>(saved - eps);
    const double dn = eval();
    p.value.v[i] = saved;
    const double fwd = (up - mid) / eps;
    const double bwd = (mid - dn) / eps;
    const double fd = (up - dn) / (2.0 * eps);
    const double a = analytic.v[i];
    const double scale = std::max({std::fabs(fwd), std::fabs(bwd), 1.0});
    if (std::fabs(fwd - bwd) > 1e-2 * scale) {
      // kink inside the interval: bracket check only
      const double lo = std::min(fwd, bwd) - 1e-2 * scale;
      const double hi = std::max(fwd, bwd) + 1e-2 * scale;
      if (a < lo || a > hi) out.kinks_ok = false;
      continue;
    }
    const double denom = std::max({std::fabs(fd), std::fabs(a), 1e-3});
    out.max_rel = std::max(out.max_rel, std::fabs(fd - a) / denom);
    dsq += (fd - a) * (fd - a);
    asq += a * a;
  }
  out.vec_rel = std::sqrt(dsq) / std::max(std::sqrt(asq), 1e-12);
  return out;
}

}  // namespace

TEST_CASE("rng determinism and fork independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c = a.fork(1), d = a.fork(2);
  REQUIRE(c.next_u64() != d.next_u64());
  Rng e(7);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) mean += e.uniform();
  REQUIRE(std::fabs(mean / 10000 - 0.5) < 0.02);
}

TEST_CASE("conv2d matches direct convolution") {
  Rng rng(1);
  Tensor x(2, 3, 7, 9);
  fill_random(x, rng);
  ParamStore ps;
  Param& w = ps.create("w", 4, 3, 3, 3);
  Param& b = ps.create("b", 1, 4, 1, 1);
  fill_random(w.value, rng);
  fill_random(b.value, rng);

  Tape t;
  Var y = conv2d(t, t.leaf(x), t.use(w), t.use(b), 1, 1);
  REQUIRE(y->value.n == 2);
  REQUIRE(y->value.c == 4);
  REQUIRE(y->value.h == 7);
  REQUIRE(y->value.w == 9);

  // direct reference
  for (int s = 0; s < 2; ++s)
    for (int co = 0; co < 4; ++co)
      for (int oy = 0; oy < 7; ++oy)
        for (int ox = 0; ox < 9; ++ox) {
          double acc = b.value.v[co];
          for (int ci = 0; ci < 3; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy + ky - 1, ix = ox + kx - 1;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 9) continue;
                acc += static_cast<double>(w.value.at(co, ci, ky, kx)) *
                       x.at(s, ci, iy, ix);
              }
          REQUIRE_THAT(y->value.at(s, co, oy, ox),
                       Catch::Matchers::WithinAbs(acc, 1e-4));
        }
}

TEST_CASE("conv2d stride-2 shape and determinism") {
  Rng rng(3);
  Tensor x(1, 8, 16, 16);
  fill_random(x, rng);
  ParamStore ps;
  Param& w = ps.create("w", 16, 8, 3, 3);
  Param& b = ps.create("b", 1, 16, 1, 1);
  fill_random(w.value, rng);

  Tape t1, t2;
  Var y1 = conv2d(t1, t1.leaf(x), t1.use(w), t1.use(b), 2, 1);
  Var y2 = conv2d(t2, t2.leaf(x), t2.use(w), t2.use(b), 2, 1);
  REQUIRE(y1->value.h == 8);
  REQUIRE(y1->value.w == 8);
  REQUIRE(y1->value.v == y2->value.v);  // bitwise
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(5);
  Tensor x(2, 3, 6, 6);
  fill_random(x, rng);
  ParamStore ps;
  Param& w = ps.create("w", 5, 3, 3, 3);
  Param& b = ps.create("b", 1, 5, 1, 1);
  Param& xin = ps.create("x", 2, 3, 6, 6);
  fill_random(w.value, rng, -0.4, 0.4);
  fill_random(b.value, rng, -0.1, 0.1);
  xin.value = x;

  auto graph = [&](Tape& t) {
    Var xi = t.use(xin);
    Var h = conv2d(t, xi, t.use(w), t.use(b), 2, 1);
    h = leaky_relu(t, h);
    return sum_all(t, h);
  };
  for (const char* name : {"w", "b", "x"}) {
    const GradCheck gc = grad_check(ps, name, graph, 0.02);
    REQUIRE(gc.max_rel < 1e-2);
    REQUIRE(gc.vec_rel < 1e-3);
    REQUIRE(gc.kinks_ok);
  }
}

TEST_CASE("elementwise op gradients") {
  Rng rng(7);
  ParamStore ps;
  Param& a = ps.create("a", 1, 4, 5, 5);
  Param& s = ps.create("s", 1, 4, 1, 1);
  fill_random(a.value, rng);
  for (auto& v : s.value.v) v = static_cast<float>(rng.uniform(0.5, 2.0));

  auto graph = [&](Tape& t) {
    Var x = t.use(a);
    Var h = sigmoid(t, x);
    h = channel_scale(t, h, t.use(s));
    h = mul(t, h, h);
    Var u = upsample2x(t, h);
    return sum_all(t, u);
  };
  REQUIRE(grad_check(ps, "a", graph, 0.02).max_rel < 1e-2);
  REQUIRE(grad_check(ps, "s", graph, 0.02).max_rel < 1e-2);
}

TEST_CASE("pixel shuffle round shape and gradient") {
  Rng rng(9);
  ParamStore ps;
  Param& a = ps.create("a", 2, 8, 3, 4);
  fill_random(a.value, rng);
  Tape t;
  Var y = pixel_shuffle2(t, t.use(a));
  REQUIRE(y->value.c == 2);
  REQUIRE(y->value.h == 6);
  REQUIRE(y->value.w == 8);
  auto graph = [&](Tape& tp) {
    Var h = pixel_shuffle2(tp, tp.use(a));
    h = mul(tp, h, h);
    return sum_all(tp, h);
  };
  REQUIRE(grad_check(ps, "a", graph, 0.05).max_rel < 1e-2);
}

TEST_CASE("concat and slice gradients") {
  Rng rng(11);
  ParamStore ps;
  Param& a = ps.create("a", 1, 3, 4, 4);
  Param& b = ps.create("b", 1, 5, 4, 4);
  fill_random(a.value, rng);
  fill_random(b.value, rng);
  auto graph = [&](Tape& t) {
    Var cat = concat_ch(t, {t.use(a), t.use(b)});
    Var sl = slice_ch(t, cat, 2, 6);
    sl = mul(t, sl, sl);
    return sum_all(t, sl);
  };
  REQUIRE(grad_check(ps, "a", graph, 0.05).max_rel < 1e-2);
  REQUIRE(grad_check(ps, "b", graph, 0.05).max_rel < 1e-2);
}

TEST_CASE("round_ste passes gradient through") {
  ParamStore ps;
  Param& a = ps.create("a", 1, 1, 2, 2);
  a.value.v = {0.4f, -1.6f, 2.5f, 0.0f};
  Tape t;
  Var r = round_ste(t, t.use(a));
  REQUIRE(r->value.v[0] == 0.0f);
  REQUIRE(r->value.v[1] == -2.0f);
  Var loss = sum_all(t, r);
  ps.zero_grads();
  t.backward(loss);
  for (float g : a.grad.v) REQUIRE(g == 1.0f);
}

TEST_CASE("gaussian_bits value and gradients") {
  // frozen oracle computed from the error function
  auto oracle = [](double v, double mu, double sd) {
    auto cdf = [](double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); };
    const double p =
        cdf((v + 0.5 - mu) / sd) - cdf((v - 0.5 - mu) / sd);
    return -std::log2(std::max(p, std::pow(2.0, -32.0)));
  };
  ParamStore ps;
  Param& v = ps.create("v", 1, 1, 1, 3);
  Param& m = ps.create("m", 1, 1, 1, 3);
  Param& s = ps.create("s", 1, 1, 1, 3);
  v.value.v = {0.0f, 1.0f, -2.0f};
  m.value.v = {0.0f, 0.3f, 0.5f};
  s.value.v = {1.0f, 0.7f, 2.0f};

  Tape t;
  Var bits = gaussian_bits(t, t.use(v), t.use(m), t.use(s));
  REQUIRE_THAT(bits->value.v[0],
               Catch::Matchers::WithinAbs(oracle(0, 0, 1), 1e-6));
  // the v=mu, sigma=1 unit-bin cost
  REQUIRE_THAT(bits->value.v[0],
               Catch::Matchers::WithinAbs(1.3848665342909896, 1e-6));
  REQUIRE_THAT(bits->value.v[1],
               Catch::Matchers::WithinAbs(oracle(1, 0.3, 0.7), 1e-6));

  auto graph = [&](Tape& tp) {
    Var b = gaussian_bits(tp, tp.use(v), tp.use(m), tp.use(s));
    return sum_all(tp, b);
  };
  REQUIRE(grad_check(ps, "v", graph, 1e-3).max_rel < 1e-2);
  REQUIRE(grad_check(ps, "m", graph, 1e-3).max_rel < 1e-2);
  REQUIRE(grad_check(ps, "s", graph, 1e-3).max_rel < 1e-2);
}

TEST_CASE("gaussian_bits monotone in |v-mu| and floored") {
  ParamStore ps;
  Param& v = ps.create("v", 1, 1, 1, 1);
  Param& m = ps.create("m", 1, 1, 1, 1);
  Param& s = ps.create("s", 1, 1, 1, 1);
  s.value.v[0] = 1.0f;
  double prev = -1.0;
  for (float d : {0.0f, 0.5f, 1.0f, 2.0f, 4.0f}) {
    v.value.v[0] = d;
    Tape t;
    Var b = gaussian_bits(t, t.use(v), t.use(m), t.use(s));
    REQUIRE(b->value.v[0] > prev);
    prev = b->value.v[0];
  }
  // extreme deviation hits the likelihood floor: exactly 32 bits
  v.value.v[0] = 1e6f;
  s.value.v[0] = 1e-6f;
  Tape t;
  Var b = gaussian_bits(t, t.use(v), t.use(m), t.use(s));
  REQUIRE_THAT(b->value.v[0], Catch::Matchers::WithinAbs(32.0, 1e-4));
}

TEST_CASE("softplus_clamped respects bounds") {
  ParamStore ps;
  Param& a = ps.create("a", 1, 1, 1, 4);
  a.value.v = {-50.0f, 0.0f, 3.0f, 50.0f};
  Tape t;
  Var y = softplus_clamped(t, t.use(a), 1e-6f, 8.0f);
  REQUIRE(y->value.v[0] == 1e-6f);
  REQUIRE_THAT(y->value.v[1], Catch::Matchers::WithinAbs(std::log(2.0), 1e-6));
  REQUIRE(y->value.v[3] == 8.0f);
  auto graph = [&](Tape& tp) {
    return sum_all(tp, softplus_clamped(tp, tp.use(a), 1e-6f, 8.0f));
  };
  REQUIRE(grad_check(ps, "a", graph, 0.02).max_rel < 1e-2);
}

TEST_CASE("mse and weighted_sum") {
  ParamStore ps;
  Param& a = ps.create("a", 1, 1, 2, 2);
  Param& b = ps.create("b", 1, 1, 2, 2);
  a.value.v = {1.0f, 2.0f, 3.0f, 4.0f};
  b.value.v = {1.0f, 2.0f, 3.0f, 2.0f};
  Tape t;
  Var m = mse(t, t.use(a), t.use(b));
  REQUIRE_THAT(m->value.item(), Catch::Matchers::WithinAbs(1.0, 1e-6));
  Var combo = weighted_sum(t, {m, m}, {2.0f, 0.5f});
  REQUIRE_THAT(combo->value.item(), Catch::Matchers::WithinAbs(2.5, 1e-6));
  ps.zero_grads();
  t.backward(combo);
  REQUIRE_THAT(a.grad.v[3], Catch::Matchers::WithinAbs(2.5 * 2.0 * 2.0 / 4.0, 1e-5));
}

TEST_CASE("adam converges on a quadratic and clips the gradient") {
  ParamStore ps;
  Param& a = ps.create("a", 1, 1, 1, 4);
  a.value.v = {5.0f, -3.0f, 2.0f, 8.0f};
  AdamOpt opt;
  opt.lr = 0.1;
  for (int it = 0; it < 400; ++it) {
    ps.zero_grads();
    Tape t;
    Var x = t.use(a);
    Var loss = mse(t, x, t.leaf(Tensor(1, 1, 1, 4)));
    t.backward(loss);
    const double pre_clip = opt.step(ps, 1.0);
    const double post_clip = std::min(pre_clip, 1.0);
    REQUIRE(post_clip <= 1.0 + 1e-6);
  }
  for (float vv : a.value.v) REQUIRE(std::fabs(vv) < 0.2);
}
