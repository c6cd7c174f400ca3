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

#ifndef HBVC_LAYERS_HPP_
#define HBVC_LAYERS_HPP_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hbvc/autograd.hpp"
#include "hbvc/tensor.hpp"

namespace hbvc::nn {

// Owns every Param of a model, keyed by hierarchical name. Iteration is in
// name order, which fixes the ordering used by the optimizer, checkpoints
// and weight hashes.
class ParamStore {
 public:
  Param& create(const std::string& name, int n, int c, int h, int w);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const {
    return params_.count(name) != 0;
  }

  template <typename Fn>
  void for_each(Fn fn) {
    for (auto& [name, p] : params_) fn(*p);
  }
  template <typename Fn>
  void for_each(Fn fn) const {
    for (const auto& [name, p] : params_) fn(*p);
  }

  void zero_grads();
  size_t count() const { return params_.size(); }

 private:
  std::map<std::string, std::unique_ptr<Param>> params_;
};

void kaiming_init(Param& p, Rng& rng, float gain = 1.0f);

struct Conv2dLayer {
  Param* w = nullptr;
  Param* b = nullptr;
  int stride = 1, pad = 0;

  static Conv2dLayer make(ParamStore& ps, const std::string& name, int cin,
                          int cout, int k, int stride, Rng& rng,
                          bool zero_init = false);
  Var operator()(Tape& t, Var x) const {
    return conv2d(t, x, t.use(*w), t.use(*b), stride, pad);
  }
};

// 1x1 reduce -> 3x3 -> 1x1 expand bottleneck with identity skip.
struct ResBlock {
  Conv2dLayer a, m, c;

  static ResBlock make(ParamStore& ps, const std::string& name, int ch,
                       int mid, Rng& rng);
  Var operator()(Tape& t, Var x) const;
};

// Adam with global-norm gradient clipping. Applies only to params selected
// by the predicate (all trainable params by default).
struct AdamOpt {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step_count = 0;

  // Returns the pre-clip global gradient norm.
  double step(ParamStore& ps, double clip_norm,
              const std::function<bool(const Param&)>& select = nullptr);
};

// Raw little-endian tensor blob serialization used by checkpoints.
void write_tensor(std::vector<uint8_t>& out, const Tensor& t);
size_t read_tensor(const uint8_t* data, size_t len, size_t pos, Tensor* t);

}  // namespace hbvc::nn

#endif  // HBVC_LAYERS_HPP_
