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

#ifndef HBVC_ARCH_HPP_
#define HBVC_ARCH_HPP_

#include <array>

namespace hbvc {

// Network dimensioning. The feature-pyramid widths (32/64/96), latent and
// hyper channel counts (128) and the 4-level gain schedule are contractual;
// the interior widths are tuning knobs sized for CPU training.
struct ArchConfig {
  std::array<int, 3> feat_ch = {32, 64, 96};
  int feat_res_blocks = 2;
  std::array<int, 3> feat_res_mid = {16, 32, 48};

  int latent_ch = 128;  // N, latent at 1/16 resolution
  int hyper_ch = 128;   // hyper latent at 1/64 resolution
  int deform_groups = 8;

  std::array<int, 3> enc_mid = {64, 96, 128};  // /4, /8, /16 stage widths
  std::array<int, 3> dec_mid = {96, 64, 48};   // /8, /4, /2 stage widths
  std::array<int, 2> recon_mid = {64, 48};

  int entropy_fuse_ch = 192;
  int entropy_fuse_blocks = 3;
  int ctx_net_ch = 128;
  std::array<int, 2> group_sizes = {32, 96};  // uneven channel groups

  float scale_floor = 1e-6f;
  float scale_max = 64.0f;
  int gain_levels = 4;
};

}  // namespace hbvc

#endif  // HBVC_ARCH_HPP_
