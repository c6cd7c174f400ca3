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

#ifndef HBVC_AUTOGRAD_HPP_
#define HBVC_AUTOGRAD_HPP_

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hbvc/tensor.hpp"

namespace hbvc::nn {

// Trainable tensor with its gradient and Adam moment buffers. Owned by a
// ParamStore; graphs reference it through Tape::use.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;  // Adam state
  bool trainable = true;

  void zero_grad() { grad.fill(0.0f); }
};

class Tape;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  Param* param = nullptr;
  std::vector<Node*> parents;
  std::function<void(Node&)> backward;
};

using Var = Node*;

// Reverse-mode tape. One tape is built per forward pass (one training step
// or one coded frame) and cleared afterwards; nodes are owned by the tape.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Var leaf(Tensor v, bool requires_grad = false);
  // Parameter leaf; memoized so repeated module application shares one node.
  Var use(Param& p);
  Var make(Tensor value, std::vector<Var> parents,
           std::function<void(Node&)> bw);

  // Seeds d(loss)=1 and sweeps the tape in reverse creation order.
  // Parameter gradients are accumulated into Param::grad.
  void backward(Var loss);

  void clear();
  size_t num_nodes() const { return nodes_.size(); }

  // grad(n) += g, allocating on first touch.
  static void accum(Node* n, const Tensor& g);
  static Tensor& grad_buf(Node* n);

 private:
  bool grad_enabled_;
  std::deque<std::unique_ptr<Node>> nodes_;
  std::map<Param*, Var> param_nodes_;
};

// ---- operators ----

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int pad);
// Modulated deformable convolution, kernel 3x3, stride 1, same padding.
// offsets: (2*G*9, H, W) as (dy,dx) pairs per deformable group and tap;
// masks: (G*9, H, W) in [0,1]. Out-of-support samples read as zero.
Var deform_conv2d(Tape& t, Var x, Var offsets, Var masks, Var w, Var b,
                  int groups);

Var leaky_relu(Tape& t, Var x, float slope = 0.1f);
Var sigmoid(Tape& t, Var x);
// softplus(x) clamped to [lo, hi]; gradient is zero where the clamp binds.
Var softplus_clamped(Tape& t, Var x, float lo, float hi);
Var exp_op(Tape& t, Var x);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, float k);
// (1-alpha)*a + alpha*b
Var lerp_const(Tape& t, Var a, Var b, float alpha);

Var concat_ch(Tape& t, const std::vector<Var>& xs);
Var slice_ch(Tape& t, Var x, int c0, int c1);
Var upsample2x(Tape& t, Var x);
// Depth-to-space by 2: (N,4C,H,W) -> (N,C,2H,2W).
Var pixel_shuffle2(Tape& t, Var x);

// x * s with s of shape (1,C,1,1) broadcast over n,h,w.
Var channel_scale(Tape& t, Var x, Var s);
// Elementwise multiply by a constant 0/1 mask (no gradient into the mask).
Var mul_mask(Tape& t, Var x, const Tensor& mask);

Var round_ste(Tape& t, Var x);
Var add_uniform_noise(Tape& t, Var x, Rng& rng);

// Per-symbol coding cost in bits under N(mu, sigma^2) integrated over the
// [-1/2, +1/2) bin, likelihood floored at 2^-32. Differentiable in v, mu
// and sigma.
Var gaussian_bits(Tape& t, Var v, Var mu, Var sigma);

Var sum_all(Tape& t, Var x);
Var mse(Tape& t, Var a, Var b);
// sum_i coeffs[i] * scalars[i]
Var weighted_sum(Tape& t, const std::vector<Var>& scalars,
                 const std::vector<float>& coeffs);

// Test helper: central-difference derivative of `loss_fn` at param entry
// `idx`, re-running the forward pass twice.
double finite_difference(Param& p, size_t idx, double eps,
                         const std::function<double()>& loss_fn);

}  // namespace hbvc::nn

#endif  // HBVC_AUTOGRAD_HPP_
