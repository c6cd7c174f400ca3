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

#ifndef HBVC_FEATURE_SPACE_HPP_
#define HBVC_FEATURE_SPACE_HPP_

#include <string>
#include <vector>

#include "hbvc/arch.hpp"
#include "hbvc/layers.hpp"

namespace hbvc {

using nn::Conv2dLayer;
using nn::Param;
using nn::ParamStore;
using nn::ResBlock;
using nn::Tape;
using nn::Var;

// Feature pyramid of one frame: 32 @ H/2, 64 @ H/4, 96 @ H/8.
struct FeatureVars {
  Var l1 = nullptr, l2 = nullptr, l3 = nullptr;
};

// Tape-independent copy, used for caching reference features across frames.
struct FeatureTensors {
  Tensor l1, l2, l3;
};

FeatureTensors detach(const FeatureVars& f);
FeatureVars to_vars(Tape& t, const FeatureTensors& f);

// Shared multi-scale feature extractor: per level one stride-2 convolution
// followed by residual blocks.
struct FeatureExtractor {
  Conv2dLayer down1, down2, down3;
  std::vector<ResBlock> res1, res2, res3;

  static FeatureExtractor make(ParamStore& ps, const std::string& prefix,
                               const ArchConfig& arch, Rng& rng);
  FeatureVars operator()(Tape& t, Var frame) const;
};

// Decoded features -> frame. Coarse-to-fine: upsample, fuse with the next
// finer level by concatenation + convolution, finish with depth-to-space.
// Output is unclamped; inference clamps to [0,1] outside the graph.
struct ReconUNet {
  Conv2dLayer head3, fuse2, conv2, fuse1, out;
  ResBlock rb2, rb1;

  static ReconUNet make(ParamStore& ps, const std::string& prefix,
                        const ArchConfig& arch, Rng& rng);
  Var operator()(Tape& t, const FeatureVars& f) const;
};

void clamp01_inplace(Tensor& t);

}  // namespace hbvc

#endif  // HBVC_FEATURE_SPACE_HPP_
