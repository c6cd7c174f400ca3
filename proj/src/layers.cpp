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

#include "hbvc/layers.hpp"

#include <cmath>
#include <cstring>

namespace hbvc::nn {

Param& ParamStore::create(const std::string& name, int n, int c, int h,
                          int w) {
  if (params_.count(name)) throw Error("duplicate param: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Tensor(n, c, h, w);
  p->grad = Tensor(n, c, h, w);
  p->m = Tensor(n, c, h, w);
  p->v = Tensor(n, c, h, w);
  Param& ref = *p;
  params_[name] = std::move(p);
  return ref;
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown param: " + name);
  return *it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown param: " + name);
  return *it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, p] : params_) p->zero_grad();
}

void kaiming_init(Param& p, Rng& rng, float gain) {
  const Tensor& t = p.value;
  const int fan_in = t.c * t.h * t.w;
  // uniform Kaiming bound for leaky-rectified fan-in
  const double limit =
      gain * std::sqrt(3.0 * 2.0 / ((1.0 + 0.01) * std::max(1, fan_in)));
  for (auto& v : p.value.v)
    v = static_cast<float>(rng.uniform(-limit, limit));
}

Conv2dLayer Conv2dLayer::make(ParamStore& ps, const std::string& name, int cin,
                              int cout, int k, int stride, Rng& rng,
                              bool zero_init) {
  Conv2dLayer l;
  l.w = &ps.create(name + ".w", cout, cin, k, k);
  l.b = &ps.create(name + ".b", 1, cout, 1, 1);
  l.stride = stride;
  l.pad = k / 2;
  if (!zero_init) kaiming_init(*l.w, rng);
  return l;
}

ResBlock ResBlock::make(ParamStore& ps, const std::string& name, int ch,
                        int mid, Rng& rng) {
  ResBlock r;
  r.a = Conv2dLayer::make(ps, name + ".a", ch, mid, 1, 1, rng);
  r.m = Conv2dLayer::make(ps, name + ".m", mid, mid, 3, 1, rng);
  r.c = Conv2dLayer::make(ps, name + ".c", mid, ch, 1, 1, rng);
  return r;
}

Var ResBlock::operator()(Tape& t, Var x) const {
  Var h = leaky_relu(t, a(t, x));
  h = leaky_relu(t, m(t, h));
  h = c(t, h);
  return add(t, x, h);
}

double AdamOpt::step(ParamStore& ps, double clip_norm,
                     const std::function<bool(const Param&)>& select) {
  auto selected = [&](const Param& p) {
    return p.trainable && (!select || select(p));
  };
  double sq = 0.0;
  ps.for_each([&](Param& p) {
    if (!selected(p)) return;
    for (float g : p.grad.v) sq += static_cast<double>(g) * g;
  });
  const double norm = std::sqrt(sq);
  const double clip =
      (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  ps.for_each([&](Param& p) {
    if (!selected(p)) return;
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad.v[i]) * clip;
      const double m = beta1 * p.m.v[i] + (1.0 - beta1) * g;
      const double v = beta2 * p.v.v[i] + (1.0 - beta2) * g * g;
      p.m.v[i] = static_cast<float>(m);
      p.v.v[i] = static_cast<float>(v);
      const double mhat = m / bc1, vhat = v / bc2;
      p.value.v[i] -=
          static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  });
  return norm;
}

void write_tensor(std::vector<uint8_t>& out, const Tensor& t) {
  auto put_u32 = [&](uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back((x >> (8 * i)) & 0xff);
  };
  put_u32(static_cast<uint32_t>(t.n));
  put_u32(static_cast<uint32_t>(t.c));
  put_u32(static_cast<uint32_t>(t.h));
  put_u32(static_cast<uint32_t>(t.w));
  const size_t bytes = t.size() * sizeof(float);
  const size_t pos = out.size();
  out.resize(pos + bytes);
  std::memcpy(out.data() + pos, t.data(), bytes);
}

size_t read_tensor(const uint8_t* data, size_t len, size_t pos, Tensor* t) {
  auto get_u32 = [&]() -> uint32_t {
    if (pos + 4 > len) throw FormatError("tensor blob truncated");
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(data[pos++]) << (8 * i);
    return x;
  };
  const int n = static_cast<int>(get_u32());
  const int c = static_cast<int>(get_u32());
  const int h = static_cast<int>(get_u32());
  const int w = static_cast<int>(get_u32());
  *t = Tensor(n, c, h, w);
  const size_t bytes = t->size() * sizeof(float);
  if (pos + bytes > len) throw FormatError("tensor blob truncated");
  std::memcpy(t->data(), data + pos, bytes);
  return pos + bytes;
}

}  // namespace hbvc::nn
